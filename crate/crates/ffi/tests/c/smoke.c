#include <stdio.h>
#include <string.h>
#include "scaffold.h"

static int fail(const char *what) {
    const char *e = scaffold_last_error();
    fprintf(stderr, "%s: %s\n", what, e ? e : "(no message)");
    return 1;
}

int main(void) {
    ScaffoldWorld *w = NULL;
    char *obs = NULL;
    if (scaffold_world_new(NULL, &w) != SCAFFOLD_STATUS_OK) return fail("new");
    if (scaffold_world_reset(w, "d1_send_report", &obs) != SCAFFOLD_STATUS_OK) return fail("reset");
    scaffold_string_free(obs);
    if (scaffold_world_execute(w, "print(apis.supervisor.show_profile())", &obs) != SCAFFOLD_STATUS_OK)
        return fail("execute");
    if (strstr(obs, "\"ok\":true") == NULL) return fail("observation");
    scaffold_string_free(obs);

    uint8_t reward = 9;
    size_t passed = 0, total = 0;
    if (scaffold_world_evaluate(w, &reward, &passed, &total) != SCAFFOLD_STATUS_OK) return fail("evaluate");
    scaffold_world_free(w);

    double lo = 0, hi = 0;
    if (scaffold_wilson_interval(0, 0, 0.95, &lo, &hi) != SCAFFOLD_STATUS_INVALID_ARGUMENT) return fail("wilson");
    if (scaffold_wilson_interval(7, 10, 0.95, &lo, &hi) != SCAFFOLD_STATUS_OK) return fail("wilson");

    printf("version=%s reward=%u checks=%zu/%zu wilson=%.4f,%.4f\n", scaffold_version(), reward, passed, total, lo, hi);
    return 0;
}

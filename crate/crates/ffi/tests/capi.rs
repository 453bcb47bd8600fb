use std::ffi::{c_char, CStr, CString};
use std::ptr;

use scaffold_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a string returned by the library.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    scaffold_string_free(p);
    s
}

fn last_error() -> String {
    let p = scaffold_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn fixtures() -> CString {
    c(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/replay"))
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(scaffold_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn world_lifecycle() {
    unsafe {
        let mut w = ptr::null_mut();
        assert_eq!(scaffold_world_new(ptr::null(), &mut w), ScaffoldStatus::Ok);
        let mut out = ptr::null_mut();

        let code = c("print(apis.supervisor.show_profile())");
        assert_eq!(scaffold_world_execute(w, code.as_ptr(), &mut out), ScaffoldStatus::NotActive);
        assert!(last_error().contains("reset"));

        assert_eq!(scaffold_world_reset(w, c("d1_send_report").as_ptr(), &mut out), ScaffoldStatus::Ok);
        let obs: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(obs["ok"], true);
        assert!(scaffold_last_error().is_null());

        assert_eq!(scaffold_world_execute(w, code.as_ptr(), &mut out), ScaffoldStatus::Ok);
        assert_eq!(serde_json::from_str::<serde_json::Value>(&take(out)).unwrap()["ok"], true);

        let send = c("apis.mail.send(access_token=\"mail-000000000000\", to=\"a@b.c\", subject=\"s\", body=\"b\")");
        assert_eq!(scaffold_world_execute(w, send.as_ptr(), &mut out), ScaffoldStatus::Ok);
        let obs: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(obs["ok"], false);
        assert_eq!(obs["error_kind"], "auth_required");

        let (mut reward, mut passed, mut total) = (9u8, 0usize, 0usize);
        assert_eq!(scaffold_world_evaluate(w, &mut reward, &mut passed, &mut total), ScaffoldStatus::Ok);
        assert_eq!(reward, 0);
        assert!(total >= 1 && passed < total);

        assert_eq!(scaffold_world_reset(w, c("nope").as_ptr(), &mut out), ScaffoldStatus::UnknownTask);
        assert!(last_error().contains("nope"));
        scaffold_world_free(w);
        scaffold_world_free(ptr::null_mut());
    }
}

#[test]
fn null_and_non_utf8_arguments() {
    unsafe {
        assert_eq!(scaffold_world_new(ptr::null(), ptr::null_mut()), ScaffoldStatus::NullArgument);
        let mut w = ptr::null_mut();
        scaffold_world_new(ptr::null(), &mut w);
        let mut out = ptr::null_mut();
        assert_eq!(scaffold_world_reset(w, ptr::null(), &mut out), ScaffoldStatus::NullArgument);
        assert!(last_error().contains("task_id"));
        let bad = [0xffu8 as c_char, 0];
        assert_eq!(scaffold_world_reset(w, bad.as_ptr(), &mut out), ScaffoldStatus::InvalidUtf8);
        assert_eq!(scaffold_world_reset(ptr::null_mut(), c("x").as_ptr(), &mut out), ScaffoldStatus::NullArgument);
        scaffold_world_free(w);
        scaffold_string_free(ptr::null_mut());
    }
}

#[test]
fn missing_task_dir_is_io() {
    let mut w = ptr::null_mut();
    let s = unsafe { scaffold_world_new(c("/definitely/not/here").as_ptr(), &mut w) };
    assert_eq!(s, ScaffoldStatus::Io);
    assert!(w.is_null());
}

#[test]
fn wilson_over_the_boundary() {
    let (mut lo, mut hi) = (0.0, 0.0);
    unsafe {
        assert_eq!(scaffold_wilson_interval(7, 10, 0.95, &mut lo, &mut hi), ScaffoldStatus::Ok);
        assert!(lo < 0.7 && 0.7 < hi && hi <= 1.0);
        assert_eq!(scaffold_wilson_interval(3, 0, 0.95, &mut lo, &mut hi), ScaffoldStatus::InvalidArgument);
        assert_eq!(scaffold_wilson_interval(11, 10, 0.95, &mut lo, &mut hi), ScaffoldStatus::InvalidArgument);
        assert_eq!(scaffold_wilson_interval(1, 10, 1.5, &mut lo, &mut hi), ScaffoldStatus::InvalidArgument);
        assert_eq!(scaffold_wilson_interval(1, 10, 0.95, ptr::null_mut(), &mut hi), ScaffoldStatus::NullArgument);
    }
    let (l, h) = scaffold_core::evaluator::wilson_interval(7, 10, 0.95).unwrap();
    assert_eq!((lo, hi), (l, h));
}

#[test]
fn extract_action_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        let one = c("Let me look.\n```python\nprint(1)\n```\n");
        assert_eq!(scaffold_extract_action(one.as_ptr(), &mut out), ScaffoldStatus::Ok);
        assert_eq!(take(out).trim(), "print(1)");
        assert_eq!(scaffold_extract_action(c("no code here").as_ptr(), &mut out), ScaffoldStatus::NoCode);
        let two = c("```python\na\n```\n```python\nb\n```\n");
        assert_eq!(scaffold_extract_action(two.as_ptr(), &mut out), ScaffoldStatus::MultipleBlocks);
        assert_eq!(last_error(), "MultipleBlocks");
    }
}

#[test]
fn validate_patch_reports_violations() {
    let docs = r#"[{"app":"mail","endpoint":"send","description":"Send an email.",
        "parameters":[{"name":"to","type":"str","required":true},{"name":"subject","type":"str","required":true}]}]"#;
    let docs = c(docs);
    unsafe {
        let mut out = ptr::null_mut();
        let good = c("```python\napis.mail.send(to=\"a\", subject=\"b\")\n```");
        assert_eq!(scaffold_validate_patch(good.as_ptr(), docs.as_ptr(), &mut out), ScaffoldStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["valid"], true);

        let bad = c("```python\napis.mail.send(recipient=\"a\")\n```");
        assert_eq!(scaffold_validate_patch(bad.as_ptr(), docs.as_ptr(), &mut out), ScaffoldStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["valid"], false);
        assert_eq!(v["violations"][0]["violation"], "undocumented_argument");
        assert_eq!(v["violations"][0]["argument"], "recipient");

        let status = scaffold_validate_patch(good.as_ptr(), c("{not json").as_ptr(), &mut out);
        assert_eq!(status, ScaffoldStatus::InvalidArgument);
        assert!(last_error().starts_with("docs_json"));
    }
}

#[test]
fn replay_matches_golden_trajectories() {
    let golden = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/golden/full_scaffold.jsonl")).unwrap();
    unsafe {
        let mut out = ptr::null_mut();
        let status = scaffold_run_replay(fixtures().as_ptr(), c("full_scaffold").as_ptr(), ptr::null(), &mut out);
        assert_eq!(status, ScaffoldStatus::Ok, "{}", last_error());
        assert_eq!(take(out), golden);

        let status = scaffold_run_replay(fixtures().as_ptr(), c("baseline").as_ptr(), c("d1_send_report, d1_schema_mail").as_ptr(), &mut out);
        assert_eq!(status, ScaffoldStatus::Ok);
        assert_eq!(take(out).lines().count(), 2);

        assert_eq!(scaffold_run_replay(fixtures().as_ptr(), c("everything").as_ptr(), ptr::null(), &mut out), ScaffoldStatus::InvalidArgument);
        assert_eq!(scaffold_run_replay(fixtures().as_ptr(), c("baseline").as_ptr(), c("nope").as_ptr(), &mut out), ScaffoldStatus::UnknownTask);
        let empty = tempfile::tempdir().unwrap();
        let empty = c(empty.path().to_str().unwrap());
        let status = scaffold_run_replay(empty.as_ptr(), c("baseline").as_ptr(), c("d1_send_report").as_ptr(), &mut out);
        assert_eq!(status, ScaffoldStatus::Gateway);
        assert!(last_error().contains("MissingFixture"), "{}", last_error());
        assert_eq!(take(out).lines().count(), 1);

        assert_eq!(scaffold_run_replay(c("/no/such/dir").as_ptr(), c("baseline").as_ptr(), ptr::null(), &mut out), ScaffoldStatus::Io);
    }
}

#[test]
fn errors_are_per_thread() {
    let mut out = ptr::null_mut();
    unsafe { scaffold_extract_action(c("nothing").as_ptr(), &mut out) };
    assert_eq!(last_error(), "NoCode");
    std::thread::spawn(|| assert!(scaffold_last_error().is_null())).join().unwrap();
    assert_eq!(last_error(), "NoCode");
}

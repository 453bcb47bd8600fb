use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scaffold_core::agent::{read_jsonl, StepEvent};
use scaffold_core::evaluator::Report;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn scaffold(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scaffold")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(name: &str) -> PathBuf {
    manifest().join("configs").join(name)
}

#[test]
fn replay_run_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("full.jsonl");
    let o = scaffold(&["run", "--config", s(&config("full.toml")), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = manifest().join("fixtures/golden/full_scaffold.jsonl");
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(golden).unwrap());
    let report = Report::from_json(&std::fs::read_to_string(dir.path().join("full.report.json")).unwrap()).unwrap();
    assert_eq!(report.runs[0].metrics.aggregate.k, 5);
    assert!(String::from_utf8(o.stdout).unwrap().contains("Task goal completion"));
}

#[test]
fn ablate_matches_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = scaffold(&["ablate", "--config", s(&config("full.toml")), "--out-dir", s(dir.path()), "--parallel", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["baseline.jsonl", "correction_only.jsonl", "full_scaffold.jsonl", "report.txt", "report.json"] {
        let golden = std::fs::read(manifest().join("fixtures/golden").join(f)).unwrap();
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), golden, "{f}");
    }
    let ids = |f: &str| -> Vec<String> {
        read_jsonl(&dir.path().join(f)).unwrap().into_iter().map(|r| r.task_id).collect()
    };
    assert_eq!(ids("baseline.jsonl"), ids("full_scaffold.jsonl"));
    assert_eq!(ids("baseline.jsonl"), ids("correction_only.jsonl"));
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("Difficulty 1") && text.contains("Difficulty 3"));
}

#[test]
fn correction_only_never_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let o = scaffold(&["run", "--config", s(&config("full.toml")), "--label", "correction_only", "--output", s(&out)]);
    assert!(o.status.success());
    let records = read_jsonl(&out).unwrap();
    assert!(records.iter().flat_map(|r| &r.steps).all(|st| !st.summarized && !st.events.contains(&StepEvent::Summarize)));
    assert!(records.iter().flat_map(|r| &r.steps).any(|st| st.events.contains(&StepEvent::Correct)));
}

#[test]
fn missing_fixture_fails_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fx");
    std::fs::create_dir(&fixtures).unwrap();
    // keep the agent's fixtures but drop the corrector's
    std::fs::copy(manifest().join("fixtures/replay/agent.jsonl"), fixtures.join("agent.jsonl")).unwrap();
    let out = dir.path().join("o.jsonl");
    let o = scaffold(&[
        "run",
        "--config",
        s(&config("full.toml")),
        "--fixtures",
        s(&fixtures),
        "--tasks",
        "d1_schema_mail",
        "--output",
        s(&out),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("MissingFixture"));
    // partial results are still written
    assert_eq!(read_jsonl(&out).unwrap().len(), 1);
}

#[test]
fn replay_without_fixture_dir_is_a_config_error() {
    let o = scaffold(&["run", "--mode", "replay"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fixture directory"));
}

#[test]
fn report_formats() {
    let golden = manifest().join("fixtures/golden");
    let b = golden.join("baseline.jsonl");
    let f = golden.join("full_scaffold.jsonl");
    let two = scaffold(&["report", s(&b), s(&f)]);
    assert!(two.status.success());
    let text = String::from_utf8(two.stdout).unwrap();
    assert!(text.contains("Failure shift: baseline -> full_scaffold"));

    let one = scaffold(&["report", s(&b)]);
    let text = String::from_utf8(one.stdout).unwrap();
    assert!(text.contains("Failure category") && !text.contains("Failure shift"));

    let json = scaffold(&["report", s(&b), s(&f), "--format", "json"]);
    let report = Report::from_json(std::str::from_utf8(&json.stdout).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(report.shift.is_some());

    let csv = scaffold(&["report", s(&b), "--format", "csv"]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert!(csv.starts_with("config_label,kind,key"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 11));
}

#[test]
fn report_rejects_empty_and_foreign_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = scaffold(&["report", s(&empty)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no trajectories"));

    let old = dir.path().join("old.jsonl");
    std::fs::write(&old, "{\"schema_version\":0,\"task_id\":\"x\"}\n").unwrap();
    let o = scaffold(&["report", s(&old)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema version 0"));
}

#[test]
fn classify_writes_one_line_per_failure() {
    let o = scaffold(&["classify", s(&manifest().join("fixtures/golden/baseline.jsonl"))]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().any(|v| v["task_id"] == "d1_schema_mail" && v["primary"] == "api_params_schema"));
}

#[test]
fn record_then_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    let o = scaffold(&[
        "record-fixtures",
        "--backend",
        "synthetic",
        "--fixtures",
        s(&fx),
        "--tasks",
        "d1_schema_bank,d2_pay_invoice",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("r.jsonl");
    let o = scaffold(&[
        "run",
        "--mode",
        "replay",
        "--fixtures",
        s(&fx),
        "--tasks",
        "d1_schema_bank,d2_pay_invoice",
        "--output",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_jsonl(&out).unwrap().iter().all(|r| r.succeeded()));
    let rerecord = ["record-fixtures", "--backend", "synthetic", "--fixtures", s(&fx), "--tasks", "d1_schema_bank"];
    let again = scaffold(&rerecord);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = scaffold(&[&rerecord[..], &["--force"]].concat());
    assert!(forced.status.success(), "{}", String::from_utf8_lossy(&forced.stderr));
}

#[test]
fn unknown_task_is_reported() {
    let o = scaffold(&["run", "--config", s(&config("full.toml")), "--tasks", "nope"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown task `nope`"));
}

use std::sync::Mutex;

use scaffold_core::agent::{read_jsonl, run_episode, write_jsonl, AgentConfig, ConfigLabel, TerminationCause, TrajectoryRecord};
use scaffold_core::evaluator::{classify_rule_based, FailureCategory};
use scaffold_core::gateway::{ChatGateway, ChatRequest, FnGateway, LlmRole, ReplayGateway};
use scaffold_core::miniworld::MiniWorld;
use scaffold_core::synthetic::SyntheticModel;
use scaffold_core::transcript::ArtifactKind;

fn episode(id: &str, config: &AgentConfig, gw: &dyn ChatGateway) -> TrajectoryRecord {
    let world = MiniWorld::builtin();
    let task = world.task(id).unwrap().task_spec();
    run_episode(&task, config, gw, &mut MiniWorld::builtin())
}

fn arm(label: ConfigLabel) -> AgentConfig {
    AgentConfig::new(label)
}

#[test]
fn summarization_keeps_the_long_horizon_token() {
    let model = SyntheticModel::builtin();
    let full = episode("d2_long_catalog_mail", &arm(ConfigLabel::FullScaffold), &model);
    assert!(full.succeeded());
    let summarized: Vec<_> = full.steps.iter().filter_map(|s| s.summary.as_ref()).collect();
    assert!(!summarized.is_empty());
    let first = summarized[0];
    assert!(first.chars_after < first.chars_before);
    assert!(first.preserved.iter().any(|a| a.kind == ArtifactKind::AuthToken && a.value.starts_with("mail-")));

    let base = episode("d2_long_catalog_mail", &arm(ConfigLabel::Baseline), &model);
    assert!(!base.succeeded());
    assert_eq!(base.termination_cause, TerminationCause::MaxTurns);
    assert!(base.steps.iter().all(|s| !s.summarized));
    assert_eq!(classify_rule_based(&base).primary, FailureCategory::AuthCredentials);
}

#[test]
fn correction_repairs_the_schema_mismatch() {
    let model = SyntheticModel::builtin();
    let r = episode("d1_schema_mail", &arm(ConfigLabel::CorrectionOnly), &model);
    assert!(r.succeeded());
    let fixed = r.steps.iter().find(|s| s.correction.as_ref().is_some_and(|c| c.changed)).unwrap();
    assert_eq!(fixed.correction.as_ref().unwrap().category, Some(FailureCategory::ApiParamsSchema));
    assert!(fixed.proposed_code.as_ref().unwrap().contains("recipient="));
    assert!(fixed.corrected_code.as_ref().unwrap().contains("to="));
    assert!(fixed.exec_ok);

    let base = episode("d1_schema_mail", &arm(ConfigLabel::Baseline), &model);
    assert_eq!(classify_rule_based(&base).primary, FailureCategory::ApiParamsSchema);
    assert!(base.steps.iter().all(|s| s.correction.is_none() && s.proposed_code == s.corrected_code));
}

#[test]
fn turn_budget_override() {
    let model = SyntheticModel::builtin();
    let config = AgentConfig { max_turns: Some(2), ..arm(ConfigLabel::FullScaffold) };
    let r = episode("d2_pay_invoice", &config, &model);
    assert_eq!(r.steps.len(), 2);
    assert_eq!(r.max_turns, 2);
    assert_eq!(r.termination_cause, TerminationCause::MaxTurns);
    assert!(!r.succeeded());
}

#[test]
fn tiny_context_budget_is_flagged() {
    let model = SyntheticModel::builtin();
    let config = AgentConfig { context_limit_tokens: 200, ..arm(ConfigLabel::Baseline) };
    let r = episode("d1_send_report", &config, &model);
    assert!(r.context_overflow);
}

#[test]
fn injection_adds_known_values_to_corrector_requests() {
    let model = SyntheticModel::builtin();
    let seen = Mutex::new(vec![]);
    let gw = FnGateway(|req: &ChatRequest| {
        if req.role_target == LlmRole::Corrector {
            seen.lock().unwrap().push(req.joined_content());
        }
        model.chat(req)
    });
    let config = AgentConfig { selective_artifact_injection: true, ..arm(ConfigLabel::CorrectionOnly) };
    episode("d2_long_catalog_mail", &config, &gw);
    let with = std::mem::take(&mut *seen.lock().unwrap());
    assert!(with.iter().any(|s| s.contains("KNOWN VALUES:") && s.contains("mail-")));
    episode("d2_long_catalog_mail", &arm(ConfigLabel::CorrectionOnly), &gw);
    assert!(seen.lock().unwrap().iter().all(|s| !s.contains("KNOWN VALUES:")));
}

#[test]
fn replay_equals_live_scripted_model() {
    let model = SyntheticModel::builtin();
    let replay = ReplayGateway::open(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/replay")).unwrap();
    for label in ConfigLabel::ALL {
        let a = episode("d3_chain_auth", &arm(label), &model);
        let b = episode("d3_chain_auth", &arm(label), &replay);
        assert_eq!(a, b, "{label}");
    }
}

#[test]
fn trajectories_round_trip_through_jsonl() {
    let model = SyntheticModel::builtin();
    let records: Vec<_> = ["d1_send_report", "d2_inbox_pagination", "d3_wrong_endpoint"]
        .iter()
        .map(|id| episode(id, &arm(ConfigLabel::FullScaffold), &model))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_jsonl(&path, &records).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), records);
}

#[test]
fn completion_is_reported_even_when_the_answer_is_wrong() {
    let model = SyntheticModel::builtin();
    let r = episode("d2_inbox_pagination", &arm(ConfigLabel::FullScaffold), &model);
    assert_eq!(r.termination_cause, TerminationCause::Completed);
    assert!(!r.succeeded());
    assert_eq!(classify_rule_based(&r).primary, FailureCategory::PaginationIncomplete);
}

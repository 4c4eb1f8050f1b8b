//! Sweeps whose agents talk to a local chat-completions server.

mod common;

use common::{config_value, load};
use conformity_core::Label;
use conformity_gateway::stub::{well_formed_reply, StubReply, StubServer};
use conformity_harness::records::OutcomeSummary;
use conformity_harness::{read_records, run_experiment, SweepOptions};
use serde_json::json;

fn llm_config(dir: &std::path::Path, base_url: String) -> conformity_harness::ExperimentConfig {
    let mut value = config_value(dir, json!([{"kind": "star"}, {"kind": "ring", "m": 2}]));
    value["alphas"] = json!([0.5]);
    value["repeats"] = json!(1);
    value["t_max"] = json!(3);
    value["endpoints"] = json!({
        "local": {
            "base_url": base_url,
            "model_name": "test-model",
            "api_key_env": null,
            "max_retries": 2,
            "backoff_base_ms": 1,
            "max_parallel": 2
        }
    });
    value["settings"] = json!([{"name": "llm", "plan": "homogeneous", "backend": {"llm": {"endpoint": "local"}}}]);
    load(dir, &value)
}

const FRESH: SweepOptions = SweepOptions {
    resume: false,
    max_runs: None,
};

#[test]
fn agreeing_agents_finish_every_run() {
    let server = StubServer::start(|prompt, _| {
        StubReply::with_usage(well_formed_reply(prompt, 0, 0.8, "Consistent with what I know."), 25)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = llm_config(dir.path(), server.base_url());
    let report = run_experiment(&cfg, FRESH).unwrap();
    assert_eq!((report.planned, report.failed), (4, 0));
    let records = read_records(&report.records_path).unwrap();
    for r in &records {
        assert!(r.is_ok(), "{:?}", r.error);
        match r.outcome.as_ref().unwrap() {
            OutcomeSummary::Centralized { decision, .. } => {
                assert_eq!(*decision, Label::ClaimTrue);
                // Six leaves and one hub.
                assert_eq!(r.token_total, 7 * 25);
            }
            OutcomeSummary::Distributed {
                consensus_round,
                group_decision,
                ..
            } => {
                assert_eq!((*consensus_round, *group_decision), (Some(0), Label::ClaimTrue));
                assert_eq!(r.token_total, 7 * 25);
            }
        }
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }
    // Two star runs of seven calls, two ring runs of seven calls.
    assert_eq!(server.request_count(), 28);
    assert!(server.max_in_flight() <= 2);
}

#[test]
fn unusable_replies_become_failed_records() {
    let server = StubServer::constant(StubReply::content("I would rather not say.")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = llm_config(dir.path(), server.base_url());
    let report = run_experiment(&cfg, FRESH).unwrap();
    assert_eq!((report.executed, report.failed), (4, 4));
    let records = read_records(&report.records_path).unwrap();
    assert!(records.iter().all(|r| !r.is_ok() && r.metrics.is_none()));
    assert!(
        records
            .iter()
            .all(|r| r.error.as_deref().unwrap().contains("no JSON object")),
        "{:?}",
        records[0].error
    );

    // Resuming retries the failures.
    let again = run_experiment(
        &cfg,
        SweepOptions {
            resume: true,
            max_runs: None,
        },
    )
    .unwrap();
    assert_eq!((again.skipped, again.executed), (0, 4));
}

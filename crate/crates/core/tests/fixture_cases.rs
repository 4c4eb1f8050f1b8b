//! Recorded seven-agent cases run through the engine.

mod common;

use common::{claim, fixture, scripted_agents};
use conformity_core::metrics::centralized_metrics;
use conformity_core::{
    distributed_metrics, run_centralized, run_distributed, AgentError, ConfidenceMode, Label, PoolingParams,
    ProtocolError, ScriptedRevision, TopologySpec,
};

const POOLED: ScriptedRevision = ScriptedRevision::Pooled(ConfidenceMode::CoupledToSupport);

#[test]
fn hierarchical_case_decides_true() {
    let traces = fixture("hierarchical_seven.jsonl");
    for alpha in [0.0, 0.5, 1.0] {
        let (topology, mut agents) = scripted_agents(TopologySpec::hierarchical(), &traces, POOLED);
        let params = PoolingParams::new(alpha).unwrap();
        let outcome = run_centralized(&topology, &mut agents, &claim(Label::ClaimTrue), &params).unwrap();
        assert_eq!(outcome.central_id, "R");
        assert_eq!(outcome.decision(), Label::ClaimTrue);
        let mids = outcome.intermediate_signals.as_ref().unwrap();
        assert_eq!(mids.iter().map(|m| m.id.as_str()).collect::<Vec<_>>(), ["ML", "MR"]);
        assert!(mids.iter().all(|m| m.signal.judgment == Label::ClaimTrue));
        // Every input says 0, so the pooled score is exactly zero.
        assert_eq!(outcome.central_support.unwrap().value(), 0.0);
        let m = centralized_metrics(&outcome, Label::ClaimTrue);
        assert_eq!((m.ca, m.pa, m.cpc), (1, 1.0, 1.0));
    }
}

#[test]
fn star_case_metrics_all_one() {
    let traces = fixture("star_seven.jsonl");
    let (topology, mut agents) = scripted_agents(TopologySpec::star(), &traces, POOLED);
    let outcome = run_centralized(
        &topology,
        &mut agents,
        &claim(Label::ClaimTrue),
        &PoolingParams::new(0.5).unwrap(),
    )
    .unwrap();
    assert_eq!(outcome.peripheral_signals.len(), 6);
    let m = centralized_metrics(&outcome, Label::ClaimTrue);
    assert_eq!((m.ca, m.pa, m.cpc), (1, 1.0, 1.0));
}

#[test]
fn ring_case_converges_at_round_three() {
    let traces = fixture("ring_seven.jsonl");
    let (topology, mut agents) = scripted_agents(TopologySpec::ring(2, 7), &traces, POOLED);
    let outcome = run_distributed(
        &topology,
        &mut agents,
        &claim(Label::ClaimTrue),
        &PoolingParams::new(0.5).unwrap(),
        10,
    )
    .unwrap();
    assert_eq!(outcome.consensus_round, Some(3));
    assert_eq!(outcome.group_decision, Label::ClaimTrue);
    let m = distributed_metrics(&outcome, Label::ClaimTrue, &outcome.token_counts()).unwrap();
    assert_eq!((m.fa, m.ttc), (1, Some(3)));
    assert_eq!(m.ci_series.len(), 4);
    assert_eq!(m.ci_series[3], 1.0);
    assert!((m.ci_series[0] - 4.0 / 7.0).abs() < 1e-15);
}

#[test]
fn replay_needs_every_round() {
    // The recording skips rounds 1 and 2, so verbatim replay cannot advance.
    let traces = fixture("ring_seven.jsonl");
    let (topology, mut agents) = scripted_agents(TopologySpec::ring(2, 7), &traces, ScriptedRevision::Replay);
    let err = run_distributed(
        &topology,
        &mut agents,
        &claim(Label::ClaimTrue),
        &PoolingParams::new(0.5).unwrap(),
        10,
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            ProtocolError::Agent {
                source: AgentError::TraceExhausted { round: 1, .. },
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn replay_reproduces_recorded_states() {
    let traces = fixture("ring_seven.jsonl");
    let mut filled = traces.clone();
    // Hold each agent's starting stance through rounds 1 and 2.
    for trace in filled.values_mut() {
        let first = trace.at(0).unwrap().clone();
        trace.rounds.insert(1, first.clone());
        trace.rounds.insert(2, first);
    }
    let (topology, mut agents) = scripted_agents(TopologySpec::ring(2, 7), &filled, ScriptedRevision::Replay);
    let outcome = run_distributed(
        &topology,
        &mut agents,
        &claim(Label::ClaimTrue),
        &PoolingParams::new(0.5).unwrap(),
        10,
    )
    .unwrap();
    assert_eq!(outcome.consensus_round, Some(3));
    let last: Vec<f64> = outcome.final_state().signals.iter().map(|s| s.confidence).collect();
    assert_eq!(last, [0.74, 0.73, 0.75, 0.70, 0.74, 0.75, 0.73]);
}

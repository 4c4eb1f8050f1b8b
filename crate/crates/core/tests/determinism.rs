//! Seeded synthetic runs replay exactly.

mod common;

use std::collections::BTreeMap;

use common::{claim, confidences, judgments_u8};
use conformity_core::{
    build_agents, build_topology, run_centralized, run_distributed, BackendAssignment, BackendDescriptor, Label,
    PoolingParams, SyntheticAgentParams, TopologySpec,
};

fn distributed_trace(seed: u64) -> Vec<(Vec<u8>, Vec<f64>)> {
    let topology = build_topology(&TopologySpec::ring(3, 7)).unwrap();
    let assignment = BackendAssignment::homogeneous(BackendDescriptor::Synthetic(SyntheticAgentParams::default()), 7);
    let mut agents = build_agents(&topology, &assignment, seed, &BTreeMap::new(), None).unwrap();
    let params = PoolingParams::new(0.5).unwrap();
    let outcome = run_distributed(&topology, &mut agents, &claim(Label::ClaimFalse), &params, 10).unwrap();
    outcome
        .trace
        .iter()
        .map(|s| (judgments_u8(s), confidences(s)))
        .collect()
}

#[test]
fn same_seed_same_distributed_trace() {
    for seed in 0..20 {
        assert_eq!(distributed_trace(seed), distributed_trace(seed));
    }
}

#[test]
fn seeds_produce_different_draws() {
    let distinct: std::collections::BTreeSet<String> =
        (0..20).map(|s| format!("{:?}", distributed_trace(s)[0])).collect();
    assert!(distinct.len() > 15, "only {} distinct openings", distinct.len());
}

#[test]
fn same_seed_same_centralized_outcome() {
    let run = |seed| {
        let topology = build_topology(&TopologySpec::star()).unwrap();
        let assignment =
            BackendAssignment::homogeneous(BackendDescriptor::Synthetic(SyntheticAgentParams::default()), 7);
        let mut agents = build_agents(&topology, &assignment, seed, &BTreeMap::new(), None).unwrap();
        let outcome = run_centralized(
            &topology,
            &mut agents,
            &claim(Label::ClaimTrue),
            &PoolingParams::new(0.25).unwrap(),
        )
        .unwrap();
        serde_json::to_string(&outcome).unwrap()
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

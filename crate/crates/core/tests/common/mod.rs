#![allow(dead_code)]

pub mod naive;

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::PathBuf;

use conformity_core::agents::load_traces;
use conformity_core::{
    build_agents, build_topology, Agent, BackendAssignment, BackendDescriptor, ClaimRecord, Label, RoundState,
    ScriptedRevision, ScriptedTrace, Topology, TopologySpec,
};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> BTreeMap<String, ScriptedTrace> {
    let file = std::fs::File::open(fixture_path(name)).expect("fixture exists");
    load_traces(BufReader::new(file)).expect("fixture parses")
}

pub fn claim(label: Label) -> ClaimRecord {
    ClaimRecord::new("fixture", "A claim under test.", label)
}

/// Scripted agents reading the trace named after each node.
pub fn scripted_agents(
    spec: TopologySpec,
    traces: &BTreeMap<String, ScriptedTrace>,
    revision: ScriptedRevision,
) -> (Topology, Vec<Agent>) {
    let topology = build_topology(&spec).expect("valid spec");
    let assignment = BackendAssignment(
        topology
            .nodes()
            .iter()
            .map(|n| BackendDescriptor::Scripted {
                trace: n.id.clone(),
                revision,
            })
            .collect(),
    );
    let agents = build_agents(&topology, &assignment, 0, traces, None).expect("agents build");
    (topology, agents)
}

pub fn judgments_u8(state: &RoundState) -> Vec<u8> {
    state.signals.iter().map(|s| s.judgment.as_u8()).collect()
}

pub fn confidences(state: &RoundState) -> Vec<f64> {
    state.signals.iter().map(|s| s.confidence).collect()
}

//! Decision procedures.
//!
//! Centralized aggregation runs a single upward pass: leaves judge, the
//! optional intermediate tier pools its leaves, and the hub pools its
//! in-neighbors' reports into the group decision.
//!
//! Distributed consensus iterates synchronous rounds: every agent pools the
//! round-`t` snapshot of itself and its in-neighbors, so evaluation order
//! within a round never matters. The run stops at the first unanimous round
//! or after `t_max` rounds.

use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentError, NeighborReport, PromptKind, Revision};
use crate::claim::ClaimRecord;
use crate::model::{pool_support, AgentSignal, Label, ModelError, PoolingParams, SupportScore};
use crate::topology::{Branch, Role, Topology, TopologyKind};

pub const DEFAULT_T_MAX: usize = 10;

/// Update scheme recorded in run metadata.
pub const UPDATE_SCHEME: &str = "synchronous";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{protocol} protocol cannot run on a {kind} topology")]
    WrongTopology { protocol: &'static str, kind: TopologyKind },
    #[error("{agents} agents for a topology with {nodes} nodes")]
    AgentCount { agents: usize, nodes: usize },
    #[error("t_max must be at least 1")]
    InvalidTMax,
    #[error("node {node}: {source}")]
    Agent {
        node: String,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    pub signals: Vec<AgentSignal>,
    /// Pooled scores behind `signals`; absent for round 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supports: Option<Vec<SupportScore>>,
    /// Pre-pooling backend outputs, for agents that produce one.
    #[serde(default, skip_serializing_if = "all_none")]
    pub raw: Vec<Option<AgentSignal>>,
    pub tokens: Vec<u64>,
}

fn all_none(raw: &[Option<AgentSignal>]) -> bool {
    raw.iter().all(Option::is_none)
}

impl RoundState {
    pub fn judgments(&self) -> Vec<Label> {
        self.signals.iter().map(|s| s.judgment).collect()
    }

    pub fn mean_confidence(&self) -> f64 {
        self.signals.iter().map(|s| s.confidence).sum::<f64>() / self.signals.len() as f64
    }
}

/// True iff every agent holds the same judgment.
pub fn detect_consensus(state: &RoundState) -> bool {
    match state.signals.split_first() {
        Some((first, rest)) => rest.iter().all(|s| s.judgment == first.judgment),
        None => false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSignal {
    pub node: usize,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    pub signal: AgentSignal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralizedOutcome {
    pub central_node: usize,
    pub central_id: String,
    /// The hub's own judgment before pooling.
    pub central_initial: AgentSignal,
    /// Absent when pooling was skipped (no-weight arm with an LLM hub).
    pub central_support: Option<SupportScore>,
    pub central_signal: AgentSignal,
    pub peripheral_signals: Vec<NodeSignal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_signals: Option<Vec<NodeSignal>>,
    /// Per-output token counts: leaves, then intermediates, then the hub.
    pub token_counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CentralizedOutcome {
    pub fn decision(&self) -> Label {
        self.central_signal.judgment
    }

    /// All non-central reports: leaves followed by intermediates.
    pub fn non_central(&self) -> impl Iterator<Item = &NodeSignal> {
        self.peripheral_signals
            .iter()
            .chain(self.intermediate_signals.iter().flatten())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributedOutcome {
    pub trace: Vec<RoundState>,
    pub consensus_round: Option<usize>,
    pub group_decision: Label,
    pub converged: bool,
    pub t_max: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DistributedOutcome {
    pub fn final_state(&self) -> &RoundState {
        self.trace.last().expect("trace always holds round 0")
    }

    /// Per-output token counts in round-major order.
    pub fn token_counts(&self) -> Vec<u64> {
        self.trace.iter().flat_map(|r| r.tokens.iter().copied()).collect()
    }
}

fn agent_err(agent: &Agent) -> impl FnOnce(AgentError) -> ProtocolError + '_ {
    move |source| ProtocolError::Agent {
        node: agent.id().to_string(),
        source,
    }
}

/// Applies `f` to the agents at `indices`, concurrently when any of them
/// is LLM-backed. Results come back in `indices` order.
fn map_agents<T, F>(agents: &mut [Agent], indices: &[usize], f: F) -> Result<Vec<T>, ProtocolError>
where
    T: Send,
    F: Fn(usize, &mut Agent) -> Result<T, ProtocolError> + Sync,
{
    let mut selected: Vec<(usize, &mut Agent)> = agents
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| indices.contains(i))
        .collect();
    selected.sort_by_key(|(i, _)| indices.iter().position(|x| x == i));

    if !selected.iter().any(|(_, a)| a.is_llm()) {
        return selected.into_iter().map(|(i, a)| f(i, a)).collect();
    }
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> = selected
            .into_iter()
            .map(|(i, a)| scope.spawn(move || f(i, a)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("agent worker panicked"))
            .collect()
    })
}

fn check_agents(topology: &Topology, agents: &[Agent]) -> Result<(), ProtocolError> {
    if agents.len() != topology.len() {
        return Err(ProtocolError::AgentCount {
            agents: agents.len(),
            nodes: topology.len(),
        });
    }
    Ok(())
}

fn node_signal(topology: &Topology, node: usize, signal: AgentSignal) -> NodeSignal {
    let n = topology.node(node);
    NodeSignal {
        node,
        id: n.id.clone(),
        branch: n.branch,
        signal,
    }
}

fn reports_for(topology: &Topology, node: usize, signals: &[Option<AgentSignal>]) -> Vec<NeighborReport> {
    topology
        .in_neighbors(node)
        .iter()
        .filter_map(|&j| {
            signals[j].as_ref().map(|s| NeighborReport {
                agent_id: topology.node(j).id.clone(),
                signal: s.clone(),
            })
        })
        .collect()
}

/// An aggregator's step: own first judgment (LLM agents see the reports),
/// then pooling over itself and the reports.
fn aggregate(
    agent: &mut Agent,
    claim: &ClaimRecord,
    reports: &[NeighborReport],
    params: &PoolingParams,
    tokens: &mut Vec<u64>,
    warnings: &mut Vec<String>,
) -> Result<(AgentSignal, Option<SupportScore>, AgentSignal), ProtocolError> {
    let initial = agent
        .initial_signal(claim, PromptKind::HubOneShot, reports)
        .map_err(agent_err(agent))?;
    tokens.push(initial.tokens);
    warnings.extend(initial.warnings.iter().map(|w| format!("{}: {w}", agent.id())));
    let own = initial.signal;
    let support = pool_support(&own, reports.iter().map(|r| &r.signal), params)?;
    let settled = agent.settle(&own, support, 1, params).map_err(agent_err(agent))?;
    let support = if agent.is_llm() && params.no_weight {
        None
    } else {
        Some(support)
    };
    Ok((own, support, settled))
}

pub fn run_centralized(
    topology: &Topology,
    agents: &mut [Agent],
    claim: &ClaimRecord,
    params: &PoolingParams,
) -> Result<CentralizedOutcome, ProtocolError> {
    if !topology.kind().is_centralized() {
        return Err(ProtocolError::WrongTopology {
            protocol: "centralized",
            kind: topology.kind(),
        });
    }
    check_agents(topology, agents)?;
    let hub = topology.hub().expect("centralized topology has a hub");
    let n = topology.len();
    let mut tokens = Vec::new();
    let mut warnings = Vec::new();

    // Leaves: one-shot, no peers.
    let leaves = topology.indices_with_role(Role::Leaf);
    let leaf_out = map_agents(agents, &leaves, |_, agent| {
        agent
            .initial_signal(claim, PromptKind::LeafOneShot, &[])
            .map_err(agent_err(agent))
    })?;
    let mut reports: Vec<Option<AgentSignal>> = vec![None; n];
    let mut peripheral_signals = Vec::with_capacity(leaves.len());
    for (&leaf, emission) in leaves.iter().zip(leaf_out) {
        tokens.push(emission.tokens);
        warnings.extend(
            emission
                .warnings
                .iter()
                .map(|w| format!("{}: {w}", topology.node(leaf).id)),
        );
        reports[leaf] = Some(emission.signal.clone());
        peripheral_signals.push(node_signal(topology, leaf, emission.signal));
    }

    // Intermediate tier, if any: pools its own leaves.
    let mids = topology.indices_with_role(Role::Intermediate);
    let intermediate_signals = if mids.is_empty() {
        None
    } else {
        let leaf_reports: Vec<Vec<NeighborReport>> = mids.iter().map(|&m| reports_for(topology, m, &reports)).collect();
        let mid_out = map_agents(agents, &mids, |i, agent| {
            let k = mids.iter().position(|&m| m == i).expect("selected index");
            let mut t = Vec::new();
            let mut w = Vec::new();
            let (_, _, settled) = aggregate(agent, claim, &leaf_reports[k], params, &mut t, &mut w)?;
            Ok((settled, t, w))
        })?;
        let mut out = Vec::with_capacity(mids.len());
        for (&mid, (settled, t, w)) in mids.iter().zip(mid_out) {
            tokens.extend(t);
            warnings.extend(w);
            reports[mid] = Some(settled.clone());
            out.push(node_signal(topology, mid, settled));
        }
        Some(out)
    };

    let hub_reports = reports_for(topology, hub, &reports);
    let (central_initial, central_support, central_signal) = aggregate(
        &mut agents[hub],
        claim,
        &hub_reports,
        params,
        &mut tokens,
        &mut warnings,
    )?;

    Ok(CentralizedOutcome {
        central_node: hub,
        central_id: topology.node(hub).id.clone(),
        central_initial,
        central_support,
        central_signal,
        peripheral_signals,
        intermediate_signals,
        token_counts: tokens,
        warnings,
    })
}

fn initial_round(
    agents: &mut [Agent],
    claim: &ClaimRecord,
    warnings: &mut Vec<String>,
) -> Result<RoundState, ProtocolError> {
    let all: Vec<usize> = (0..agents.len()).collect();
    let emissions = map_agents(agents, &all, |_, agent| {
        agent
            .initial_signal(claim, PromptKind::DistInitial, &[])
            .map_err(agent_err(agent))
    })?;
    let mut signals = Vec::with_capacity(emissions.len());
    let mut tokens = Vec::with_capacity(emissions.len());
    for (agent, e) in agents.iter().zip(emissions) {
        warnings.extend(e.warnings.iter().map(|w| format!("{} t=0: {w}", agent.id())));
        signals.push(e.signal);
        tokens.push(e.tokens);
    }
    Ok(RoundState {
        round: 0,
        raw: vec![None; signals.len()],
        signals,
        supports: None,
        tokens,
    })
}

/// Advances one synchronous round from `state`.
pub fn step_round(
    topology: &Topology,
    agents: &mut [Agent],
    claim: &ClaimRecord,
    params: &PoolingParams,
    state: &RoundState,
) -> Result<(RoundState, Vec<String>), ProtocolError> {
    let order: Vec<usize> = (0..agents.len()).collect();
    step_round_in_order(topology, agents, claim, params, state, &order)
}

fn step_round_in_order(
    topology: &Topology,
    agents: &mut [Agent],
    claim: &ClaimRecord,
    params: &PoolingParams,
    state: &RoundState,
    order: &[usize],
) -> Result<(RoundState, Vec<String>), ProtocolError> {
    check_agents(topology, agents)?;
    let round = state.round + 1;
    let snapshot: Vec<Option<AgentSignal>> = state.signals.iter().cloned().map(Some).collect();
    let revisions: Vec<Revision> = map_agents(agents, order, |i, agent| {
        let reports = reports_for(topology, i, &snapshot);
        let own = &state.signals[i];
        let support = pool_support(own, reports.iter().map(|r| &r.signal), params)?;
        agent
            .revise_signal(claim, own, support, &reports, round, params)
            .map_err(agent_err(agent))
    })?;

    let n = agents.len();
    let mut slots: Vec<Option<Revision>> = vec![None; n];
    for (&i, rev) in order.iter().zip(revisions) {
        slots[i] = Some(rev);
    }
    let mut next = RoundState {
        round,
        signals: Vec::with_capacity(n),
        supports: Some(Vec::with_capacity(n)),
        raw: Vec::with_capacity(n),
        tokens: Vec::with_capacity(n),
    };
    let mut warnings = Vec::new();
    for (agent, slot) in agents.iter().zip(slots) {
        let rev = slot.expect("every agent evaluated once");
        warnings.extend(rev.warnings.iter().map(|w| format!("{} t={round}: {w}", agent.id())));
        next.signals.push(rev.signal);
        next.supports.as_mut().expect("set above").push(rev.support);
        next.raw.push(rev.raw);
        next.tokens.push(rev.tokens);
    }
    Ok((next, warnings))
}

/// Unanimous label, else the majority. Even splits go to the label with
/// more summed confidence, then to `ClaimTrue`.
pub fn majority_label(state: &RoundState) -> Label {
    let ones = state.signals.iter().filter(|s| s.judgment == Label::ClaimFalse).count();
    let zeros = state.signals.len() - ones;
    if ones != zeros {
        return if ones > zeros {
            Label::ClaimFalse
        } else {
            Label::ClaimTrue
        };
    }
    let mass = |label| {
        state
            .signals
            .iter()
            .filter(|s| s.judgment == label)
            .map(|s| s.confidence)
            .sum::<f64>()
    };
    if mass(Label::ClaimFalse) > mass(Label::ClaimTrue) {
        Label::ClaimFalse
    } else {
        Label::ClaimTrue
    }
}

pub fn run_distributed(
    topology: &Topology,
    agents: &mut [Agent],
    claim: &ClaimRecord,
    params: &PoolingParams,
    t_max: usize,
) -> Result<DistributedOutcome, ProtocolError> {
    if !matches!(topology.kind(), TopologyKind::Ring { .. } | TopologyKind::Complete) {
        return Err(ProtocolError::WrongTopology {
            protocol: "distributed",
            kind: topology.kind(),
        });
    }
    if t_max == 0 {
        return Err(ProtocolError::InvalidTMax);
    }
    check_agents(topology, agents)?;

    let mut warnings = Vec::new();
    let mut trace = vec![initial_round(agents, claim, &mut warnings)?];
    let mut consensus_round = None;
    loop {
        let last = trace.last().expect("non-empty");
        if detect_consensus(last) {
            consensus_round = Some(last.round);
            break;
        }
        if last.round >= t_max {
            break;
        }
        let (next, w) = step_round(topology, agents, claim, params, last)?;
        warnings.extend(w);
        trace.push(next);
    }
    let group_decision = majority_label(trace.last().expect("non-empty"));
    Ok(DistributedOutcome {
        converged: consensus_round.is_some(),
        trace,
        consensus_round,
        group_decision,
        t_max,
        warnings,
    })
}

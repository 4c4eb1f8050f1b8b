//! Agent backends.
//!
//! Three kinds of agent produce signals for the protocols:
//!
//! * scripted agents replay recorded `(y, p, just)` traces, optionally
//!   letting pooling drive revisions instead of the recording;
//! * synthetic agents draw an initial judgment that matches the ground
//!   truth with a fixed competence, with a Beta-distributed confidence;
//! * LLM agents delegate to a [`ReportSource`] (the HTTP gateway).
//!
//! Every synthetic agent owns its own seeded stream, so a run is a pure
//! function of its seed.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::ClaimRecord;
use crate::metrics::token_proxy;
use crate::model::{binarize, pool_support, AgentSignal, Label, ModelError, PoolingParams, SupportScore};
use crate::streams::agent_stream;
use crate::topology::Topology;

const CONFIDENCE_FLOOR: f64 = 0.01;
const CONFIDENCE_CEIL: f64 = 0.99;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent {agent}: scripted trace has no entry for round {round}")]
    TraceExhausted { agent: String, round: usize },
    #[error("no scripted trace named {0}")]
    MissingTrace(String),
    #[error("trace file line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error("claim {0} has no ground-truth label; synthetic agents need one")]
    MissingLabel(String),
    #[error("agent {agent} round {round}: {message}")]
    Llm {
        agent: String,
        round: usize,
        message: String,
    },
    #[error("assignment uses an LLM endpoint but no report source was configured")]
    NoReportSource,
    #[error("assignment has {got} backends for {expected} nodes")]
    AssignmentSize { expected: usize, got: usize },
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Confidence stays at its initial value.
    Static,
    /// Confidence tracks the pooled margin `max(s, 1 - s)`.
    CoupledToSupport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticAgentParams {
    pub competence: f64,
    pub conf_correct_mean: f64,
    pub conf_wrong_mean: f64,
    /// Beta pseudo-count; larger means tighter confidences.
    pub conf_spread: f64,
    pub confidence_mode: ConfidenceMode,
}

impl Default for SyntheticAgentParams {
    fn default() -> Self {
        SyntheticAgentParams {
            competence: 0.70,
            conf_correct_mean: 0.75,
            conf_wrong_mean: 0.60,
            conf_spread: 10.0,
            confidence_mode: ConfidenceMode::CoupledToSupport,
        }
    }
}

impl SyntheticAgentParams {
    pub fn with_competence(mut self, competence: f64) -> Self {
        self.competence = competence;
        self
    }

    pub fn with_confidence_mode(mut self, mode: ConfidenceMode) -> Self {
        self.confidence_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&self.competence) {
            return Err(AgentError::InvalidParams(format!(
                "competence {} outside [0, 1]",
                self.competence
            )));
        }
        for (name, mean) in [
            ("conf_correct_mean", self.conf_correct_mean),
            ("conf_wrong_mean", self.conf_wrong_mean),
        ] {
            if !(mean > 0.0 && mean < 1.0) {
                return Err(AgentError::InvalidParams(format!("{name} {mean} outside (0, 1)")));
            }
        }
        if !(self.conf_spread.is_finite() && self.conf_spread > 0.0) {
            return Err(AgentError::InvalidParams(format!(
                "conf_spread {} must be positive",
                self.conf_spread
            )));
        }
        Ok(())
    }
}

/// Recorded outputs of one agent, keyed by round.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedTrace {
    pub agent_id: String,
    pub rounds: BTreeMap<usize, AgentSignal>,
}

impl ScriptedTrace {
    pub fn new(agent_id: impl Into<String>, signals: Vec<AgentSignal>) -> Self {
        ScriptedTrace {
            agent_id: agent_id.into(),
            rounds: signals.into_iter().enumerate().collect(),
        }
    }

    pub fn at(&self, round: usize) -> Option<&AgentSignal> {
        self.rounds.get(&round)
    }
}

#[derive(Deserialize)]
struct TraceLine {
    agent_id: String,
    t: usize,
    #[serde(flatten)]
    signal: AgentSignal,
}

/// Reads `{agent_id, t, y, p, just}` lines into per-agent traces.
pub fn load_traces<R: BufRead>(reader: R) -> Result<BTreeMap<String, ScriptedTrace>, AgentError> {
    let mut traces: BTreeMap<String, ScriptedTrace> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| AgentError::TraceParse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| AgentError::TraceParse {
            line: line_no,
            message: e.to_string(),
        })?;
        parsed.signal.validate().map_err(|e| AgentError::TraceParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trace = traces.entry(parsed.agent_id.clone()).or_insert_with(|| ScriptedTrace {
            agent_id: parsed.agent_id.clone(),
            rounds: BTreeMap::new(),
        });
        if trace.rounds.insert(parsed.t, parsed.signal).is_some() {
            return Err(AgentError::TraceParse {
                line: line_no,
                message: format!("duplicate round {} for agent {}", parsed.t, parsed.agent_id),
            });
        }
    }
    Ok(traces)
}

/// How a scripted agent moves past its initial signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedRevision {
    /// Replays the recorded signal for each round verbatim.
    Replay,
    /// Adopts the pooled readout, like a synthetic agent.
    Pooled(ConfidenceMode),
}

impl Default for ScriptedRevision {
    fn default() -> Self {
        ScriptedRevision::Pooled(ConfidenceMode::CoupledToSupport)
    }
}

/// Which backend drives a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendDescriptor {
    Scripted {
        trace: String,
        #[serde(default)]
        revision: ScriptedRevision,
    },
    Synthetic(SyntheticAgentParams),
    Llm {
        endpoint: String,
    },
}

impl BackendDescriptor {
    pub fn is_llm(&self) -> bool {
        matches!(self, BackendDescriptor::Llm { .. })
    }

    pub fn label(&self) -> String {
        match self {
            BackendDescriptor::Scripted { trace, .. } => format!("scripted:{trace}"),
            BackendDescriptor::Synthetic(p) => format!("synthetic:{:.2}", p.competence),
            BackendDescriptor::Llm { endpoint } => format!("llm:{endpoint}"),
        }
    }
}

/// One backend per topology node, in node order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BackendAssignment(pub Vec<BackendDescriptor>);

impl BackendAssignment {
    pub fn homogeneous(backend: BackendDescriptor, n: usize) -> Self {
        BackendAssignment(vec![backend; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_llm(&self) -> bool {
        self.0.iter().any(BackendDescriptor::is_llm)
    }
}

/// Which prompt an LLM agent is shown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    LeafOneShot,
    HubOneShot,
    DistInitial,
    DistRound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub agent_id: String,
    #[serde(flatten)]
    pub signal: AgentSignal,
}

/// Everything an LLM backend needs to produce one report.
#[derive(Clone, Debug)]
pub struct ReportRequest<'a> {
    pub endpoint: &'a str,
    pub kind: PromptKind,
    pub agent_id: &'a str,
    pub claim: &'a ClaimRecord,
    pub round: usize,
    pub prior: Option<&'a AgentSignal>,
    pub neighbors: &'a [NeighborReport],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub signal: AgentSignal,
    pub tokens: u64,
    pub warnings: Vec<String>,
}

/// Produces agent reports from a language model.
pub trait ReportSource: Send + Sync {
    fn request(&self, request: &ReportRequest<'_>) -> Result<Report, AgentError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    pub signal: AgentSignal,
    pub tokens: u64,
    pub warnings: Vec<String>,
}

impl Emission {
    fn local(signal: AgentSignal) -> Self {
        let tokens = token_proxy(&signal.justification);
        Emission {
            signal,
            tokens,
            warnings: Vec::new(),
        }
    }
}

/// Result of one distributed revision step.
#[derive(Clone, Debug, PartialEq)]
pub struct Revision {
    pub signal: AgentSignal,
    /// The support the new judgment was read out from.
    pub support: SupportScore,
    /// Backend output before pooling, for backends that emit one.
    pub raw: Option<AgentSignal>,
    pub tokens: u64,
    pub warnings: Vec<String>,
}

enum Backend {
    Scripted {
        trace: ScriptedTrace,
        revision: ScriptedRevision,
    },
    Synthetic {
        params: SyntheticAgentParams,
        rng: Box<ChaCha8Rng>,
    },
    Llm {
        endpoint: String,
        source: Arc<dyn ReportSource>,
    },
}

pub struct Agent {
    id: String,
    backend: Backend,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.backend {
            Backend::Scripted { .. } => "scripted",
            Backend::Synthetic { .. } => "synthetic",
            Backend::Llm { .. } => "llm",
        };
        f.debug_struct("Agent")
            .field("id", &self.id)
            .field("backend", &kind)
            .finish()
    }
}

impl Agent {
    pub fn scripted(id: impl Into<String>, trace: ScriptedTrace, revision: ScriptedRevision) -> Self {
        Agent {
            id: id.into(),
            backend: Backend::Scripted { trace, revision },
        }
    }

    pub fn synthetic(id: impl Into<String>, params: SyntheticAgentParams, rng: ChaCha8Rng) -> Result<Self, AgentError> {
        params.validate()?;
        Ok(Agent {
            id: id.into(),
            backend: Backend::Synthetic {
                params,
                rng: Box::new(rng),
            },
        })
    }

    pub fn llm(id: impl Into<String>, endpoint: impl Into<String>, source: Arc<dyn ReportSource>) -> Self {
        Agent {
            id: id.into(),
            backend: Backend::Llm {
                endpoint: endpoint.into(),
                source,
            },
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn is_llm(&self) -> bool {
        matches!(self.backend, Backend::Llm { .. })
    }

    /// First judgment on a claim. `peers` is only consulted by LLM agents
    /// shown the hub prompt.
    pub fn initial_signal(
        &mut self,
        claim: &ClaimRecord,
        kind: PromptKind,
        peers: &[NeighborReport],
    ) -> Result<Emission, AgentError> {
        match &mut self.backend {
            Backend::Scripted { trace, .. } => {
                trace
                    .at(0)
                    .cloned()
                    .map(Emission::local)
                    .ok_or_else(|| AgentError::TraceExhausted {
                        agent: self.id.clone(),
                        round: 0,
                    })
            }
            Backend::Synthetic { params, rng } => {
                let truth = claim.label.ok_or_else(|| AgentError::MissingLabel(claim.id.clone()))?;
                Ok(Emission::local(draw_initial(params, truth, rng)))
            }
            Backend::Llm { endpoint, source } => {
                let report = source.request(&ReportRequest {
                    endpoint,
                    kind,
                    agent_id: &self.id,
                    claim,
                    round: 0,
                    prior: None,
                    neighbors: peers,
                })?;
                Ok(Emission {
                    signal: report.signal,
                    tokens: report.tokens,
                    warnings: report.warnings,
                })
            }
        }
    }

    /// The signal this agent holds after reading out `support` computed
    /// over `own` and its neighbors.
    pub fn settle(
        &self,
        own: &AgentSignal,
        support: SupportScore,
        round: usize,
        params: &PoolingParams,
    ) -> Result<AgentSignal, AgentError> {
        let judgment = binarize(support, params);
        match &self.backend {
            Backend::Scripted {
                trace,
                revision: ScriptedRevision::Replay,
            } => trace.at(round).cloned().ok_or_else(|| AgentError::TraceExhausted {
                agent: self.id.clone(),
                round,
            }),
            Backend::Scripted {
                revision: ScriptedRevision::Pooled(mode),
                ..
            } => Ok(pooled_signal(judgment, own, support, *mode)),
            Backend::Synthetic { params: sp, .. } => Ok(pooled_signal(judgment, own, support, sp.confidence_mode)),
            Backend::Llm { .. } => {
                if params.no_weight {
                    Ok(own.clone())
                } else {
                    Ok(AgentSignal {
                        judgment,
                        confidence: own.confidence,
                        justification: own.justification.clone(),
                    })
                }
            }
        }
    }

    /// One distributed round. `support` is pooled from the previous
    /// snapshot; LLM agents first restate their stance and are re-pooled
    /// over that fresh report.
    pub fn revise_signal(
        &mut self,
        claim: &ClaimRecord,
        prior: &AgentSignal,
        support: SupportScore,
        neighbors: &[NeighborReport],
        round: usize,
        params: &PoolingParams,
    ) -> Result<Revision, AgentError> {
        if let Backend::Llm { endpoint, source } = &self.backend {
            let report = source.request(&ReportRequest {
                endpoint,
                kind: PromptKind::DistRound,
                agent_id: &self.id,
                claim,
                round,
                prior: Some(prior),
                neighbors,
            })?;
            let raw = report.signal;
            let support = if params.no_weight {
                support
            } else {
                pool_support(&raw, neighbors.iter().map(|n| &n.signal), params)?
            };
            let signal = self.settle(&raw, support, round, params)?;
            return Ok(Revision {
                signal,
                support,
                raw: Some(raw),
                tokens: report.tokens,
                warnings: report.warnings,
            });
        }
        let signal = self.settle(prior, support, round, params)?;
        Ok(Revision {
            tokens: token_proxy(&signal.justification),
            signal,
            support,
            raw: None,
            warnings: Vec::new(),
        })
    }
}

fn pooled_signal(judgment: Label, own: &AgentSignal, support: SupportScore, mode: ConfidenceMode) -> AgentSignal {
    let confidence = match mode {
        ConfidenceMode::Static => own.confidence,
        ConfidenceMode::CoupledToSupport => support.margin(),
    };
    AgentSignal {
        judgment,
        confidence,
        justification: String::new(),
    }
}

fn draw_initial(params: &SyntheticAgentParams, truth: Label, rng: &mut ChaCha8Rng) -> AgentSignal {
    let correct = rng.random::<f64>() < params.competence;
    let mean = if correct {
        params.conf_correct_mean
    } else {
        params.conf_wrong_mean
    };
    let beta =
        Beta::new(mean * params.conf_spread, (1.0 - mean) * params.conf_spread).expect("validated Beta parameters");
    let raw = beta.sample(rng).clamp(CONFIDENCE_FLOOR, CONFIDENCE_CEIL);
    AgentSignal {
        judgment: if correct { truth } else { truth.flipped() },
        confidence: (raw * 100.0).round() / 100.0,
        justification: String::new(),
    }
}

/// Instantiates one agent per topology node. Synthetic agents get the named
/// stream `(run_seed, node id)`.
pub fn build_agents(
    topology: &Topology,
    assignment: &BackendAssignment,
    run_seed: u64,
    traces: &BTreeMap<String, ScriptedTrace>,
    source: Option<Arc<dyn ReportSource>>,
) -> Result<Vec<Agent>, AgentError> {
    if assignment.len() != topology.len() {
        return Err(AgentError::AssignmentSize {
            expected: topology.len(),
            got: assignment.len(),
        });
    }
    topology
        .nodes()
        .iter()
        .zip(&assignment.0)
        .map(|(node, backend)| match backend {
            BackendDescriptor::Scripted { trace, revision } => {
                let trace = traces
                    .get(trace)
                    .cloned()
                    .ok_or_else(|| AgentError::MissingTrace(trace.clone()))?;
                Ok(Agent::scripted(node.id.clone(), trace, *revision))
            }
            BackendDescriptor::Synthetic(params) => {
                Agent::synthetic(node.id.clone(), *params, agent_stream(run_seed, &node.id))
            }
            BackendDescriptor::Llm { endpoint } => {
                let source = source.clone().ok_or(AgentError::NoReportSource)?;
                Ok(Agent::llm(node.id.clone(), endpoint.clone(), source))
            }
        })
        .collect()
}

//! Conformity dynamics in networks of judging agents.
//!
//! Agents label a claim as true (`0`) or false (`1`) with a confidence,
//! then revise by confidence-weighted pooling over their in-neighbors.
//! Two protocols are provided: a single upward pass through a star or
//! hierarchy, and iterated synchronous rounds over rings and complete
//! graphs.

pub mod agents;
pub mod claim;
pub mod metrics;
pub mod model;
pub mod protocols;
pub mod streams;
pub mod topology;

pub use agents::{
    build_agents, Agent, AgentError, BackendAssignment, BackendDescriptor, ConfidenceMode, NeighborReport, PromptKind,
    Report, ReportRequest, ReportSource, ScriptedRevision, ScriptedTrace, SyntheticAgentParams,
};
pub use claim::ClaimRecord;
pub use metrics::{centralized_metrics, conformity_index, distributed_metrics, CentralizedMetrics, DistributedMetrics};
pub use model::{binarize, pool_support, AgentSignal, Label, ModelError, PoolingParams, SupportScore};
pub use protocols::{
    detect_consensus, run_centralized, run_distributed, CentralizedOutcome, DistributedOutcome, ProtocolError,
    RoundState,
};
pub use topology::{build_topology, validate, Role, Topology, TopologyKind, TopologySpec};

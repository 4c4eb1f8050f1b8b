//! Executing the full cross product of a config.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use conformity_core::agents::load_traces;
use conformity_core::protocols::UPDATE_SCHEME;
use conformity_core::streams::{agent_stream, derive_seed, fingerprint};
use conformity_core::{
    build_agents, build_topology, centralized_metrics, distributed_metrics, run_centralized, run_distributed,
    BackendAssignment, ClaimRecord, ReportSource, ScriptedTrace, Topology, TopologySpec,
};
use conformity_gateway::Gateway;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::claims::{load_claims, ClaimsError};
use crate::config::{Arm, ConfigError, ExperimentConfig, Setting};
use crate::records::{
    read_records_prefix, truncate_to, OutcomeSummary, ProtocolMeta, RecordsError, RunMetrics, RunRecord, RunStatus,
};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Claims(#[from] ClaimsError),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} already exists; pass --resume to continue it or choose another output directory")]
    OutputExists(String),
    #[error("{path} holds records from a different config ({found}, expected {expected})")]
    ForeignRecords {
        path: String,
        found: String,
        expected: String,
    },
    #[error("cannot load traces: {0}")]
    Traces(String),
    #[error("cannot set up the gateway: {0}")]
    Gateway(#[from] conformity_gateway::GatewayError),
    #[error("cannot start workers: {0}")]
    Workers(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SweepOptions {
    pub resume: bool,
    /// Stop after this many new runs. Used to simulate interruptions.
    pub max_runs: Option<usize>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub records_path: PathBuf,
    pub planned: usize,
    pub skipped: usize,
    pub executed: usize,
    pub failed: usize,
}

struct Unit<'a> {
    claim: &'a ClaimRecord,
    spec: &'a TopologySpec,
    topology: &'a Topology,
    arm: Arm,
    setting: &'a Setting,
    repeat: usize,
}

struct Shared<'a> {
    config: &'a ExperimentConfig,
    config_fingerprint: String,
    traces: BTreeMap<String, ScriptedTrace>,
    source: Option<Arc<dyn ReportSource>>,
    traces_dir: Option<PathBuf>,
}

impl Unit<'_> {
    fn topology_label(&self) -> String {
        self.spec.kind.label()
    }

    fn run_seed(&self, seed: u64) -> u64 {
        derive_seed(&[
            &seed.to_string(),
            &self.claim.id,
            &self.topology_label(),
            &self.arm.label(),
            &self.setting.label,
            &self.repeat.to_string(),
        ])
    }

    /// Independent of the arm so every α sees the same placement.
    fn placement_seed(&self, seed: u64) -> u64 {
        derive_seed(&[
            "placement",
            &seed.to_string(),
            &self.claim.id,
            &self.topology_label(),
            &self.setting.label,
            &self.repeat.to_string(),
        ])
    }

    /// Hash of everything that determines this run's result.
    fn fingerprint(&self, config: &ExperimentConfig) -> String {
        let backends = serde_json::to_string(&self.setting.layout.backends()).expect("backends serialize");
        let params =
            serde_json::to_string(&self.arm.params(config.tau, config.epsilon).ok()).expect("params serialize");
        let claim = serde_json::to_string(self.claim).expect("claim serializes");
        fingerprint(&[
            &config.seed.to_string(),
            &claim,
            &serde_json::to_string(self.spec).expect("spec serializes"),
            &self.arm.label(),
            &params,
            &self.setting.label,
            &backends,
            &self.repeat.to_string(),
            &config.t_max.to_string(),
        ])
    }
}

fn load_trace_file(path: &Path) -> Result<BTreeMap<String, ScriptedTrace>, SweepError> {
    let file = File::open(path).map_err(io_err(path))?;
    load_traces(BufReader::new(file)).map_err(|e| SweepError::Traces(format!("{}: {e}", path.display())))
}

/// Runs every missing unit of `config`, appending to
/// `<output_dir>/records.jsonl`.
pub fn run_experiment(config: &ExperimentConfig, options: SweepOptions) -> Result<SweepReport, SweepError> {
    config.validate()?;
    let claims = load_claims(&config.claims, true)?;
    let traces = match &config.traces {
        Some(path) => load_trace_file(path)?,
        None => BTreeMap::new(),
    };
    let source: Option<Arc<dyn ReportSource>> = if config.uses_llm() {
        Some(Arc::new(Gateway::from_configs(&config.endpoints)?))
    } else {
        None
    };

    std::fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let records_path = config.output_dir.join(RECORDS_FILE);
    let config_fingerprint = config.fingerprint();

    let mut done = HashSet::new();
    if records_path.exists() {
        if !options.resume {
            return Err(SweepError::OutputExists(records_path.display().to_string()));
        }
        let (existing, good_len) = read_records_prefix(&records_path)?;
        if let Some(r) = existing.iter().find(|r| r.config_fingerprint != config_fingerprint) {
            return Err(SweepError::ForeignRecords {
                path: records_path.display().to_string(),
                found: r.config_fingerprint.clone(),
                expected: config_fingerprint,
            });
        }
        truncate_to(&records_path, good_len)?;
        // Failed runs are attempted again.
        done.extend(existing.into_iter().filter(RunRecord::is_ok).map(|r| r.run_fingerprint));
    }

    let traces_dir = if config.persist_traces {
        let dir = config.output_dir.join(TRACES_DIR);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Some(dir)
    } else {
        None
    };

    let specs_and_topologies: Vec<(&TopologySpec, Topology)> = config
        .topologies
        .iter()
        .map(|spec| build_topology(spec).map(|t| (spec, t)))
        .collect::<Result<_, _>>()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let settings = config.expanded_settings();
    let arms = config.arms();

    let mut units = Vec::new();
    for claim in &claims {
        for (spec, topology) in &specs_and_topologies {
            for &arm in &arms {
                for setting in &settings {
                    for repeat in 0..config.repeats {
                        units.push(Unit {
                            claim,
                            spec,
                            topology,
                            arm,
                            setting,
                            repeat,
                        });
                    }
                }
            }
        }
    }
    let planned = units.len();
    let mut pending: Vec<(Unit, String)> = units
        .into_iter()
        .map(|u| {
            let fp = u.fingerprint(config);
            (u, fp)
        })
        .filter(|(_, fp)| !done.contains(fp))
        .collect();
    let skipped = planned - pending.len();
    if let Some(limit) = options.max_runs {
        pending.truncate(limit);
    }
    log::info!(
        "{planned} runs planned, {skipped} already recorded, {} to execute",
        pending.len()
    );

    let shared = Shared {
        config,
        config_fingerprint,
        traces,
        source,
        traces_dir,
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)
        .map_err(io_err(&records_path))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| SweepError::Workers(e.to_string()))?;

    let (sender, receiver) = mpsc::channel::<RunRecord>();
    let (executed, failed) = std::thread::scope(|scope| -> Result<(usize, usize), SweepError> {
        let appender = scope.spawn(move || -> std::io::Result<(usize, usize)> {
            let mut out = BufWriter::new(file);
            let (mut executed, mut failed) = (0, 0);
            for record in receiver {
                serde_json::to_writer(&mut out, &record)?;
                out.write_all(b"\n")?;
                out.flush()?;
                executed += 1;
                if !record.is_ok() {
                    failed += 1;
                    log::warn!(
                        "run {} failed: {}",
                        record.run_fingerprint,
                        record.error.as_deref().unwrap_or("")
                    );
                }
            }
            Ok((executed, failed))
        });
        pool.install(|| {
            pending.par_iter().for_each_with(sender, |tx, (unit, fp)| {
                let record = execute(unit, fp, &shared);
                tx.send(record).expect("appender alive");
            });
        });
        appender
            .join()
            .expect("appender panicked")
            .map_err(io_err(&records_path))
    })?;

    Ok(SweepReport {
        records_path,
        planned,
        skipped,
        executed,
        failed,
    })
}

struct Success {
    outcome: OutcomeSummary,
    metrics: RunMetrics,
    tokens: u64,
    warnings: Vec<String>,
    trace: serde_json::Value,
}

fn execute(unit: &Unit, run_fingerprint: &str, shared: &Shared) -> RunRecord {
    let config = shared.config;
    let start = Instant::now();
    let seed = unit.run_seed(config.seed);
    let mut placement_rng = agent_stream(unit.placement_seed(config.seed), "placement");
    let assignment = BackendAssignment(
        unit.setting
            .layout
            .assign(unit.topology, |order| order.shuffle(&mut placement_rng)),
    );
    let centralized = unit.spec.kind.is_centralized();

    let result = simulate(unit, &assignment, seed, shared);
    let mut record = RunRecord {
        config_fingerprint: shared.config_fingerprint.clone(),
        run_fingerprint: run_fingerprint.to_string(),
        claim_id: unit.claim.id.clone(),
        repeat: unit.repeat,
        seed,
        arm: unit.arm.label(),
        alpha: unit.arm.alpha(),
        no_weight: matches!(unit.arm, Arm::NoWeight),
        setting: unit.setting.label.clone(),
        topology: unit.topology_label(),
        degree: unit.topology.degree(),
        topology_doc: unit.topology.clone(),
        placement: assignment.0.iter().map(|b| b.label()).collect(),
        protocol: ProtocolMeta {
            protocol: if centralized { "centralized" } else { "distributed" }.into(),
            tau: config.tau,
            epsilon: config.epsilon,
            update_scheme: (!centralized).then(|| UPDATE_SCHEME.to_string()),
            t_max: (!centralized).then_some(config.t_max),
        },
        status: RunStatus::Ok,
        error: None,
        outcome: None,
        metrics: None,
        wall_time_ms: 0.0,
        token_total: 0,
        warnings: Vec::new(),
    };
    match result {
        Ok(success) => {
            if let Some(dir) = &shared.traces_dir {
                if let Err(e) = write_trace(dir, run_fingerprint, &success.trace) {
                    record.warnings.push(format!("trace not written: {e}"));
                }
            }
            record.outcome = Some(success.outcome);
            record.metrics = Some(success.metrics);
            record.token_total = success.tokens;
            record.warnings.extend(success.warnings);
        }
        Err(message) => {
            record.status = RunStatus::Failed;
            record.error = Some(message);
        }
    }
    record.wall_time_ms = start.elapsed().as_secs_f64() * 1000.0;
    record
}

fn simulate(unit: &Unit, assignment: &BackendAssignment, seed: u64, shared: &Shared) -> Result<Success, String> {
    let config = shared.config;
    let claim = unit.claim;
    let truth = claim.label.ok_or("claim has no label")?;
    let params = unit.arm.params(config.tau, config.epsilon).map_err(|e| e.to_string())?;
    let mut agents = build_agents(unit.topology, assignment, seed, &shared.traces, shared.source.clone())
        .map_err(|e| e.to_string())?;

    if unit.spec.kind.is_centralized() {
        let outcome = run_centralized(unit.topology, &mut agents, claim, &params).map_err(|e| e.to_string())?;
        let metrics = centralized_metrics(&outcome, truth);
        let mut judgments = vec![outcome.central_signal.judgment; unit.topology.len()];
        let mut confidences = vec![outcome.central_signal.confidence; unit.topology.len()];
        for n in outcome.non_central() {
            judgments[n.node] = n.signal.judgment;
            confidences[n.node] = n.signal.confidence;
        }
        Ok(Success {
            outcome: OutcomeSummary::Centralized {
                decision: outcome.decision(),
                central_id: outcome.central_id.clone(),
                central_initial: outcome.central_initial.judgment,
                central_support: outcome.central_support.map(|s| s.value()),
                judgments,
                confidences,
            },
            metrics: RunMetrics::Centralized(metrics),
            tokens: outcome.token_counts.iter().sum(),
            warnings: outcome.warnings.clone(),
            trace: serde_json::to_value(&outcome).map_err(|e| e.to_string())?,
        })
    } else {
        let outcome =
            run_distributed(unit.topology, &mut agents, claim, &params, config.t_max).map_err(|e| e.to_string())?;
        let metrics = distributed_metrics(&outcome, truth, &outcome.token_counts()).map_err(|e| e.to_string())?;
        let last = outcome.final_state();
        Ok(Success {
            outcome: OutcomeSummary::Distributed {
                group_decision: outcome.group_decision,
                consensus_round: outcome.consensus_round,
                converged: outcome.converged,
                rounds_played: outcome.trace.len(),
                judgments: last.judgments(),
                confidences: last.signals.iter().map(|s| s.confidence).collect(),
            },
            tokens: metrics.tt,
            metrics: RunMetrics::Distributed(metrics),
            warnings: outcome.warnings.clone(),
            trace: serde_json::to_value(&outcome).map_err(|e| e.to_string())?,
        })
    }
}

fn write_trace(dir: &Path, run_fingerprint: &str, trace: &impl Serialize) -> std::io::Result<()> {
    let path = dir.join(format!("{run_fingerprint}.json"));
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, trace)?;
    out.write_all(b"\n")?;
    out.flush()
}

//! Per-run records and the JSONL file that holds them.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::Path;

use conformity_core::{CentralizedMetrics, DistributedMetrics, Label, Topology};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMeta {
    pub protocol: String,
    pub tau: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
}

/// The parts of an outcome worth keeping per run. Full traces go to a
/// separate file when requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum OutcomeSummary {
    Centralized {
        decision: Label,
        central_id: String,
        central_initial: Label,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        central_support: Option<f64>,
        /// Final judgments and confidences in node order.
        judgments: Vec<Label>,
        confidences: Vec<f64>,
    },
    Distributed {
        group_decision: Label,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        consensus_round: Option<usize>,
        converged: bool,
        rounds_played: usize,
        judgments: Vec<Label>,
        confidences: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum RunMetrics {
    Centralized(CentralizedMetrics),
    Distributed(DistributedMetrics),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_fingerprint: String,
    pub run_fingerprint: String,
    pub claim_id: String,
    pub repeat: usize,
    pub seed: u64,
    pub arm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub no_weight: bool,
    pub setting: String,
    pub topology: String,
    /// In-degree for rings and complete graphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    pub topology_doc: Topology,
    /// Backend label per node, in node order.
    pub placement: Vec<String>,
    pub protocol: ProtocolMeta,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
    pub wall_time_ms: f64,
    pub token_total: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Records in file order, plus the byte length of the well-formed prefix.
/// A trailing line that is cut short or unparseable is treated as an
/// interrupted write and left out; a bad line anywhere else is an error.
pub fn read_records_prefix(path: &Path) -> Result<(Vec<RunRecord>, u64), RecordsError> {
    let io = |source| RecordsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut text = String::new();
    File::open(path).map_err(io)?.read_to_string(&mut text).map_err(io)?;

    let mut records = Vec::new();
    let mut good_end = 0usize;
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        offset += raw.len();
        let is_last = lines.peek().is_none();
        let complete = raw.ends_with('\n');
        let body = raw.trim_end();
        if body.is_empty() {
            if complete {
                good_end = offset;
            }
            continue;
        }
        match serde_json::from_str::<RunRecord>(body) {
            Ok(record) if complete => {
                records.push(record);
                good_end = offset;
            }
            Ok(_) => {
                log::warn!("{}: dropping unterminated final line", path.display());
            }
            Err(e) if is_last => {
                log::warn!("{}: dropping partial final line ({e})", path.display());
            }
            Err(e) => {
                return Err(RecordsError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((records, good_end as u64))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, RecordsError> {
    read_records_prefix(path.as_ref()).map(|(records, _)| records)
}

/// Drops any partial tail so appends start on a fresh line.
pub fn truncate_to(path: &Path, len: u64) -> Result<(), RecordsError> {
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|source| RecordsError::Io {
            path: path.display().to_string(),
            source,
        })?;
    file.set_len(len).map_err(|source| RecordsError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One record per run: a successful attempt wins over failures, and among
/// failures the last one is kept. Output is in fingerprint order.
pub fn latest_per_run(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut by_run: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    for r in records {
        by_run
            .entry(&r.run_fingerprint)
            .and_modify(|kept| {
                if !kept.is_ok() {
                    *kept = r;
                }
            })
            .or_insert(r);
    }
    by_run.into_values().collect()
}

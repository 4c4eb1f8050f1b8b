//! Experiment orchestration: claims in, seeded sweeps, JSONL records and
//! CSV summaries out.

pub mod claims;
pub mod config;
pub mod records;
pub mod summary;
pub mod sweep;

pub use claims::{load_claims, ClaimsError};
pub use config::{Arm, BackendPlan, ExperimentConfig, SettingConfig};
pub use records::{read_records, RunRecord, RunStatus};
pub use summary::{summarize, trajectories, Table};
pub use sweep::{run_experiment, SweepError, SweepOptions, SweepReport, RECORDS_FILE, TRACES_DIR};

use std::path::Path;

/// Writes every table the records support into `dir`: the centralized
/// and distributed summaries and the CI trajectories. Returns the files
/// written.
pub fn write_summaries(records: &[RunRecord], dir: &Path) -> std::io::Result<Vec<String>> {
    let mut written = Vec::new();
    let mut emit = |name: &str, body: Result<String, summary::SummaryError>| -> std::io::Result<()> {
        if let Ok(text) = body {
            std::fs::write(dir.join(name), text)?;
            written.push(name.to_string());
        }
        Ok(())
    };
    emit(Table::Centralized.file_name(), summarize(records, Table::Centralized))?;
    emit(Table::Distributed.file_name(), summarize(records, Table::Distributed))?;
    emit(summary::TRAJECTORIES_FILE, trajectories(records))?;
    Ok(written)
}

//! Group means and standard errors, written as CSV.

use std::collections::BTreeMap;

use conformity_core::metrics::BranchMetrics;
use conformity_core::topology::Branch;
use thiserror::Error;

use crate::records::{latest_per_run, RunMetrics, RunRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SummaryError {
    #[error("no records to summarize")]
    Empty,
    #[error("no {0} records among the input")]
    NoRecords(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    Centralized,
    Distributed,
}

impl Table {
    pub fn name(self) -> &'static str {
        match self {
            Table::Centralized => "centralized",
            Table::Distributed => "distributed",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Table::Centralized => "summary_centralized.csv",
            Table::Distributed => "summary_distributed.csv",
        }
    }

    fn matches(self, record: &RunRecord) -> bool {
        record.protocol.protocol == self.name()
    }
}

pub const TRAJECTORIES_FILE: &str = "ci_trajectories.csv";

/// Sample mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSe {
    pub n: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len();
    if n == 0 {
        return MeanSe {
            n,
            mean: None,
            se: None,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    MeanSe {
        n,
        mean: Some(mean),
        se,
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Sort key: in-degree, topology label, α arms before the baseline in
/// numeric order, then setting.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    degree: usize,
    topology: String,
    no_weight: bool,
    alpha_bits: u64,
    setting: String,
}

struct Group<'a> {
    runs: Vec<&'a RunRecord>,
    failed: usize,
}

fn group_records<'a>(records: &'a [RunRecord], table: Table) -> Result<BTreeMap<GroupKey, Group<'a>>, SummaryError> {
    if records.is_empty() {
        return Err(SummaryError::Empty);
    }
    let mut groups: BTreeMap<GroupKey, Group> = BTreeMap::new();
    for r in latest_per_run(records).into_iter().filter(|r| table.matches(r)) {
        let key = GroupKey {
            degree: r.degree.unwrap_or(0),
            topology: r.topology.clone(),
            no_weight: r.no_weight,
            // α is non-negative, so bit order is numeric order.
            alpha_bits: r.alpha.unwrap_or(0.0).to_bits(),
            setting: r.setting.clone(),
        };
        let group = groups.entry(key).or_insert(Group {
            runs: Vec::new(),
            failed: 0,
        });
        if r.is_ok() {
            group.runs.push(r);
        } else {
            group.failed += 1;
        }
    }
    if groups.is_empty() {
        return Err(SummaryError::NoRecords(table.name()));
    }
    Ok(groups)
}

fn arm_label(key: &GroupKey) -> (String, String) {
    if key.no_weight {
        ("no-weight".into(), String::new())
    } else {
        let alpha = f64::from_bits(key.alpha_bits);
        (format!("alpha={alpha}"), format!("{alpha}"))
    }
}

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("write to memory");
    for row in rows {
        writer.write_record(&row).expect("write to memory");
    }
    String::from_utf8(writer.into_inner().expect("flush to memory")).expect("utf-8 fields")
}

fn push_stat(row: &mut Vec<String>, stat: MeanSe) {
    row.push(fmt(stat.mean));
    row.push(fmt(stat.se));
}

/// One CSV row per (topology, arm, setting) group.
pub fn summarize(records: &[RunRecord], table: Table) -> Result<String, SummaryError> {
    let groups = group_records(records, table)?;
    match table {
        Table::Centralized => Ok(centralized_table(&groups)),
        Table::Distributed => Ok(distributed_table(&groups)),
    }
}

fn centralized_table(groups: &BTreeMap<GroupKey, Group>) -> String {
    let header = [
        "topology",
        "arm",
        "alpha",
        "setting",
        "runs",
        "failed",
        "ca_mean",
        "ca_se",
        "pa_mean",
        "pa_se",
        "cpc_mean",
        "cpc_se",
        "pa_left_mean",
        "pa_left_se",
        "pa_right_mean",
        "pa_right_se",
        "cpc_left_mean",
        "cpc_left_se",
        "cpc_right_mean",
        "cpc_right_se",
    ];
    let rows = groups
        .iter()
        .map(|(key, group)| {
            let metrics: Vec<_> = group
                .runs
                .iter()
                .filter_map(|r| match &r.metrics {
                    Some(RunMetrics::Centralized(m)) => Some(m),
                    _ => None,
                })
                .collect();
            let (arm, alpha) = arm_label(key);
            let mut row = vec![
                key.topology.clone(),
                arm,
                alpha,
                key.setting.clone(),
                metrics.len().to_string(),
                group.failed.to_string(),
            ];
            push_stat(
                &mut row,
                mean_se(&metrics.iter().map(|m| f64::from(m.ca)).collect::<Vec<_>>()),
            );
            push_stat(&mut row, mean_se(&metrics.iter().map(|m| m.pa).collect::<Vec<_>>()));
            push_stat(&mut row, mean_se(&metrics.iter().map(|m| m.cpc).collect::<Vec<_>>()));
            let picks: [fn(&BranchMetrics) -> f64; 2] = [|b| b.pa, |b| b.cpc];
            for pick in picks {
                for branch in [Branch::Left, Branch::Right] {
                    let values: Vec<f64> = metrics
                        .iter()
                        .filter_map(|m| m.branches.get(&branch).map(pick))
                        .collect();
                    push_stat(&mut row, mean_se(&values));
                }
            }
            row
        })
        .collect();
    to_csv(&header, rows)
}

fn distributed_table(groups: &BTreeMap<GroupKey, Group>) -> String {
    let header = [
        "topology",
        "m",
        "arm",
        "alpha",
        "setting",
        "runs",
        "failed",
        "fa_mean",
        "fa_se",
        "ttc_mean",
        "ttc_se",
        "converged",
        "convergence_rate",
        "aci_mean",
        "aci_se",
        "aci_realized_mean",
        "aci_realized_se",
        "tt_mean",
        "tt_se",
        "final_confidence_mean",
        "final_confidence_se",
    ];
    let rows = groups
        .iter()
        .map(|(key, group)| {
            let metrics: Vec<_> = group
                .runs
                .iter()
                .filter_map(|r| match &r.metrics {
                    Some(RunMetrics::Distributed(m)) => Some(m),
                    _ => None,
                })
                .collect();
            let (arm, alpha) = arm_label(key);
            let mut row = vec![
                key.topology.clone(),
                key.degree.to_string(),
                arm,
                alpha,
                key.setting.clone(),
                metrics.len().to_string(),
                group.failed.to_string(),
            ];
            push_stat(
                &mut row,
                mean_se(&metrics.iter().map(|m| f64::from(m.fa)).collect::<Vec<_>>()),
            );
            // Unconverged runs have no TTC and are left out of its mean.
            let ttc: Vec<f64> = metrics.iter().filter_map(|m| m.ttc.map(|t| t as f64)).collect();
            push_stat(&mut row, mean_se(&ttc));
            row.push(ttc.len().to_string());
            row.push(fmt(
                (!metrics.is_empty()).then(|| ttc.len() as f64 / metrics.len() as f64)
            ));
            push_stat(&mut row, mean_se(&metrics.iter().map(|m| m.aci).collect::<Vec<_>>()));
            push_stat(
                &mut row,
                mean_se(&metrics.iter().map(|m| m.aci_realized).collect::<Vec<_>>()),
            );
            push_stat(
                &mut row,
                mean_se(&metrics.iter().map(|m| m.tt as f64).collect::<Vec<_>>()),
            );
            push_stat(
                &mut row,
                mean_se(&metrics.iter().map(|m| m.final_confidence).collect::<Vec<_>>()),
            );
            row
        })
        .collect();
    to_csv(&header, rows)
}

/// Long-form mean CI per round. Each group gets one row per round up to its
/// longest trace; runs that stopped earlier count as unanimous.
pub fn trajectories(records: &[RunRecord]) -> Result<String, SummaryError> {
    let groups = group_records(records, Table::Distributed)?;
    let header = [
        "topology", "m", "arm", "alpha", "setting", "round", "runs", "mean_ci", "se_ci",
    ];
    let mut rows = Vec::new();
    for (key, group) in &groups {
        let series: Vec<&[f64]> = group
            .runs
            .iter()
            .filter_map(|r| match &r.metrics {
                Some(RunMetrics::Distributed(m)) => Some(m.ci_series.as_slice()),
                _ => None,
            })
            .collect();
        let rounds = series.iter().map(|s| s.len()).max().unwrap_or(0);
        let (arm, alpha) = arm_label(key);
        for t in 0..rounds {
            let values: Vec<f64> = series.iter().map(|s| s.get(t).copied().unwrap_or(1.0)).collect();
            let stat = mean_se(&values);
            rows.push(vec![
                key.topology.clone(),
                key.degree.to_string(),
                arm.clone(),
                alpha.clone(),
                key.setting.clone(),
                t.to_string(),
                stat.n.to_string(),
                fmt(stat.mean),
                fmt(stat.se),
            ]);
        }
    }
    Ok(to_csv(&header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let ca: Vec<f64> = [1.0; 8].into_iter().chain([0.0; 2]).collect();
        let s = mean_se(&ca);
        assert!((s.mean.unwrap() - 0.8).abs() < 1e-15);
        // Sample sd of eight ones and two zeros is sqrt(1.6/9).
        assert!((s.se.unwrap() - (1.6f64 / 9.0).sqrt() / 10f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[]).mean, None);
        assert_eq!(mean_se(&[3.0]).se, None);
    }

    #[test]
    fn fixed_decimals() {
        assert_eq!(fmt(Some(0.8)), "0.800000");
        assert_eq!(fmt(Some(2.0 / 3.0)), "0.666667");
        assert_eq!(fmt(None), "");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(summarize(&[], Table::Centralized), Err(SummaryError::Empty));
        assert_eq!(trajectories(&[]), Err(SummaryError::Empty));
    }
}

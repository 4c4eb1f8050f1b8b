//! Group-level evaluation quantities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Label;
use crate::protocols::{CentralizedOutcome, DistributedOutcome};
use crate::topology::Branch;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("conformity index of an empty group")]
    EmptyGroup,
    #[error("expected {expected} token counts, got {got}")]
    TokenCountMismatch { expected: usize, got: usize },
}

/// Words in `text` times 1.3, rounded up.
pub fn token_proxy(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 13).div_ceil(10)
}

/// Share of agents holding the majority label, in `[0.5, 1]`.
pub fn conformity_index(judgments: &[Label]) -> Result<f64, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let ones = judgments.iter().filter(|&&y| y == Label::ClaimFalse).count();
    let majority = ones.max(judgments.len() - ones);
    Ok(majority as f64 / judgments.len() as f64)
}

fn indicator(cond: bool) -> u8 {
    u8::from(cond)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchMetrics {
    pub pa: f64,
    pub cpc: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralizedMetrics {
    pub ca: u8,
    pub pa: f64,
    pub cpc: f64,
    /// Per-branch accuracy and consistency, keyed by branch.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub branches: BTreeMap<Branch, BranchMetrics>,
}

/// Central accuracy, peripheral accuracy and center-periphery consistency.
/// Peripheral means every non-central node (leaves and intermediates).
pub fn centralized_metrics(outcome: &CentralizedOutcome, truth: Label) -> CentralizedMetrics {
    let central = outcome.decision();
    let mean = |nodes: &[&crate::protocols::NodeSignal], target: Label| {
        if nodes.is_empty() {
            return 0.0;
        }
        nodes.iter().filter(|n| n.signal.judgment == target).count() as f64 / nodes.len() as f64
    };
    let all: Vec<_> = outcome.non_central().collect();

    let mut by_branch: BTreeMap<Branch, Vec<&crate::protocols::NodeSignal>> = BTreeMap::new();
    for n in &all {
        if let Some(b) = n.branch {
            by_branch.entry(b).or_default().push(n);
        }
    }
    let branches = by_branch
        .into_iter()
        .map(|(b, nodes)| {
            (
                b,
                BranchMetrics {
                    pa: mean(&nodes, truth),
                    cpc: mean(&nodes, central),
                    nodes: nodes.len(),
                },
            )
        })
        .collect();

    CentralizedMetrics {
        ca: indicator(central == truth),
        pa: mean(&all, truth),
        cpc: mean(&all, central),
        branches,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributedMetrics {
    pub fa: u8,
    pub ttc: Option<usize>,
    pub ci_series: Vec<f64>,
    /// Mean CI over rounds `1..=t_max`, rounds after consensus counted as 1.
    pub aci: f64,
    /// Mean CI over the rounds actually played after round 0.
    pub aci_realized: f64,
    pub tt: u64,
    /// Mean confidence at the final round.
    pub final_confidence: f64,
}

pub fn distributed_metrics(
    outcome: &DistributedOutcome,
    truth: Label,
    token_counts: &[u64],
) -> Result<DistributedMetrics, MetricsError> {
    let expected: usize = outcome.trace.iter().map(|r| r.signals.len()).sum();
    if token_counts.len() != expected {
        return Err(MetricsError::TokenCountMismatch {
            expected,
            got: token_counts.len(),
        });
    }
    let ci_series = outcome
        .trace
        .iter()
        .map(|r| conformity_index(&r.judgments()))
        .collect::<Result<Vec<_>, _>>()?;
    let (aci, aci_realized) = average_conformity(&ci_series, outcome.t_max);
    Ok(DistributedMetrics {
        fa: indicator(outcome.group_decision == truth),
        ttc: outcome.consensus_round,
        aci,
        aci_realized,
        ci_series,
        tt: token_counts.iter().sum(),
        final_confidence: outcome.final_state().mean_confidence(),
    })
}

/// Padded and realized-only averages of a CI series indexed from round 0.
/// Rounds missing from the series are treated as unanimous.
pub fn average_conformity(ci_series: &[f64], t_max: usize) -> (f64, f64) {
    let padded = (1..=t_max)
        .map(|t| ci_series.get(t).copied().unwrap_or(1.0))
        .sum::<f64>()
        / t_max as f64;
    let realized = if ci_series.len() > 1 {
        ci_series[1..].iter().sum::<f64>() / (ci_series.len() - 1) as f64
    } else {
        ci_series.first().copied().unwrap_or(1.0)
    };
    (padded, realized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentSignal;
    use crate::protocols::{NodeSignal, RoundState};

    fn labels(ys: &[u8]) -> Vec<Label> {
        ys.iter().map(|&y| Label::try_from(y).unwrap()).collect()
    }

    fn sig(y: u8) -> AgentSignal {
        AgentSignal::new(Label::try_from(y).unwrap(), 0.7).unwrap()
    }

    #[test]
    fn conformity_index_counts() {
        assert!((conformity_index(&labels(&[0, 0, 0, 1, 1, 0, 0])).unwrap() - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(conformity_index(&labels(&[1; 7])).unwrap(), 1.0);
        assert_eq!(conformity_index(&labels(&[0, 0, 1, 1])).unwrap(), 0.5);
        assert_eq!(conformity_index(&[]), Err(MetricsError::EmptyGroup));
    }

    fn star_outcome(central: u8, peripherals: &[u8]) -> CentralizedOutcome {
        CentralizedOutcome {
            central_node: 0,
            central_id: "H".into(),
            central_initial: sig(central),
            central_support: None,
            central_signal: sig(central),
            peripheral_signals: peripherals
                .iter()
                .enumerate()
                .map(|(k, &y)| NodeSignal {
                    node: k + 1,
                    id: format!("L{}", k + 1),
                    branch: Some(if k < 3 { Branch::Left } else { Branch::Right }),
                    signal: sig(y),
                })
                .collect(),
            intermediate_signals: None,
            token_counts: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn centralized_counts() {
        let m = centralized_metrics(&star_outcome(0, &[0, 0, 0, 0, 1, 0]), Label::ClaimTrue);
        assert_eq!(m.ca, 1);
        assert!((m.pa - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.cpc - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.branches[&Branch::Left].pa, 1.0);
        assert!((m.branches[&Branch::Right].cpc - 2.0 / 3.0).abs() < 1e-15);

        let m = centralized_metrics(&star_outcome(1, &[1; 6]), Label::ClaimTrue);
        assert_eq!((m.ca, m.pa, m.cpc), (0, 0.0, 1.0));
    }

    #[test]
    fn padded_aci_hand_sum() {
        let (aci, realized) = average_conformity(&[0.571, 0.714, 0.857, 1.0], 10);
        assert!((aci - 0.9571).abs() < 1e-12);
        assert!((realized - (0.714 + 0.857 + 1.0) / 3.0).abs() < 1e-12);
        assert_eq!(average_conformity(&[1.0], 10), (1.0, 1.0));
    }

    fn outcome(rounds: &[&[u8]], decision: u8, consensus: Option<usize>, t_max: usize) -> DistributedOutcome {
        DistributedOutcome {
            trace: rounds
                .iter()
                .enumerate()
                .map(|(t, ys)| RoundState {
                    round: t,
                    signals: ys.iter().map(|&y| sig(y)).collect(),
                    supports: None,
                    raw: vec![],
                    tokens: vec![2; ys.len()],
                })
                .collect(),
            consensus_round: consensus,
            group_decision: Label::try_from(decision).unwrap(),
            converged: consensus.is_some(),
            t_max,
            warnings: vec![],
        }
    }

    #[test]
    fn unconverged_majority_scores() {
        let o = outcome(&[&[1, 1, 0], &[1, 1, 0]], 1, None, 1);
        let m = distributed_metrics(&o, Label::ClaimFalse, &o.token_counts()).unwrap();
        assert_eq!(m.fa, 1);
        assert_eq!(m.ttc, None);
        assert_eq!(m.tt, 12);
        assert!((m.aci - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn token_count_length_checked() {
        let o = outcome(&[&[1, 1, 1]], 1, Some(0), 10);
        assert_eq!(
            distributed_metrics(&o, Label::ClaimFalse, &[1, 2]),
            Err(MetricsError::TokenCountMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn token_proxy_rounds_up() {
        assert_eq!(token_proxy(""), 0);
        assert_eq!(token_proxy("one"), 2);
        assert_eq!(token_proxy("Evidence appears mixed."), 4);
        assert_eq!(token_proxy("a b c d e f g h i j"), 13);
    }
}

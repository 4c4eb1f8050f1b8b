//! Confidence-normalized pooling and threshold readout.
//!
//! Every agent holds a binary [`Label`] together with a self-reported
//! confidence. At each update the agent's own signal and its in-neighbors'
//! signals are pooled into a support score for the `ClaimFalse` label:
//!
//! ```text
//!        a * p_self * y_self + (1 - a) * sum_j p_j * y_j
//!   s = -------------------------------------------------
//!        a * p_self         + (1 - a) * sum_j p_j + eps
//! ```
//!
//! and the score is read out as `ClaimFalse` iff `s >= tau`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Binary verdict on a claim. Encoded as `0` (claim is true) and `1`
/// (claim is false) on every wire format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    ClaimTrue,
    ClaimFalse,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::ClaimTrue => 0,
            Label::ClaimFalse => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::ClaimTrue => Label::ClaimFalse,
            Label::ClaimFalse => Label::ClaimTrue,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = ModelError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::ClaimTrue),
            1 => Ok(Label::ClaimFalse),
            other => Err(ModelError::InvalidLabel(i64::from(other))),
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_u8()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(i64),
    #[error("confidence must be a finite value in [0, 1], got {0}")]
    InvalidConfidence(f64),
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("epsilon must be finite and positive, got {0}")]
    InvalidEpsilon(f64),
}

/// Global dynamics parameters shared by every agent in a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingParams {
    /// Self-weight. `1` keeps agents fully independent, `0` makes them
    /// fully conformist.
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Baseline arm: drop both the self-weight and the confidences.
    #[serde(default)]
    pub no_weight: bool,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl PoolingParams {
    pub fn new(alpha: f64) -> Result<Self, ModelError> {
        let params = PoolingParams {
            alpha,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            no_weight: false,
        };
        params.validate()?;
        Ok(params)
    }

    /// The no-weight baseline. Alpha is irrelevant there and kept at 0.5.
    pub fn no_weight() -> Self {
        PoolingParams {
            alpha: 0.5,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            no_weight: true,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self, ModelError> {
        self.tau = tau;
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self, ModelError> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::InvalidAlpha(self.alpha));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(ModelError::InvalidTau(self.tau));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(ModelError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }
}

impl Default for PoolingParams {
    fn default() -> Self {
        PoolingParams {
            alpha: 0.5,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            no_weight: false,
        }
    }
}

/// One agent's output for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSignal {
    #[serde(rename = "y")]
    pub judgment: Label,
    #[serde(rename = "p")]
    pub confidence: f64,
    #[serde(rename = "just", default)]
    pub justification: String,
}

impl AgentSignal {
    pub fn new(judgment: Label, confidence: f64) -> Result<Self, ModelError> {
        check_confidence(confidence)?;
        Ok(AgentSignal {
            judgment,
            confidence,
            justification: String::new(),
        })
    }

    pub fn with_justification(mut self, text: impl Into<String>) -> Self {
        self.justification = text.into();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_confidence(self.confidence)
    }
}

fn check_confidence(p: f64) -> Result<(), ModelError> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ModelError::InvalidConfidence(p))
    }
}

/// Pooled support for the `ClaimFalse` label. Always in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportScore(f64);

impl SupportScore {
    pub fn value(self) -> f64 {
        self.0
    }

    /// Distance from the nearer end of the scale, in `[0.5, 1]`.
    pub fn margin(self) -> f64 {
        self.0.max(1.0 - self.0)
    }

    /// Wraps an externally computed score. Values outside `[0, 1]` are
    /// rejected.
    pub fn from_value(value: f64) -> Result<Self, ModelError> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(SupportScore(value))
        } else {
            Err(ModelError::InvalidConfidence(value))
        }
    }
}

/// Pools an agent's own signal with its in-neighbors' signals.
///
/// In no-weight mode every confidence is treated as `1` and the agent and
/// each neighbor get the same weight, i.e. the score is the share of
/// `ClaimFalse` votes among `1 + neighbors` participants (with `epsilon`
/// kept in the denominator).
///
/// An empty neighbor set is legal; the score then depends only on the
/// agent's own signal.
pub fn pool_support<'a, I>(own: &AgentSignal, neighbors: I, params: &PoolingParams) -> Result<SupportScore, ModelError>
where
    I: IntoIterator<Item = &'a AgentSignal>,
{
    params.validate()?;
    own.validate()?;

    let mut neighbor_votes = 0.0;
    let mut neighbor_mass = 0.0;
    let mut count = 0usize;
    for signal in neighbors {
        signal.validate()?;
        count += 1;
        if params.no_weight {
            neighbor_votes += signal.judgment.as_f64();
        } else {
            neighbor_votes += signal.confidence * signal.judgment.as_f64();
            neighbor_mass += signal.confidence;
        }
    }

    let score = if params.no_weight {
        let votes = own.judgment.as_f64() + neighbor_votes;
        votes / ((1 + count) as f64 + params.epsilon)
    } else {
        let alpha = params.alpha;
        let num = alpha * own.confidence * own.judgment.as_f64() + (1.0 - alpha) * neighbor_votes;
        let den = alpha * own.confidence + (1.0 - alpha) * neighbor_mass + params.epsilon;
        num / den
    };
    Ok(SupportScore(score))
}

/// Threshold readout: `ClaimFalse` iff `score >= tau`.
pub fn binarize(score: SupportScore, params: &PoolingParams) -> Label {
    if score.0 >= params.tau {
        Label::ClaimFalse
    } else {
        Label::ClaimTrue
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(y: u8, p: f64) -> AgentSignal {
        AgentSignal::new(Label::try_from(y).unwrap(), p).unwrap()
    }

    fn params(alpha: f64) -> PoolingParams {
        PoolingParams::new(alpha).unwrap()
    }

    #[test]
    fn full_self_weight_ignores_neighbors() {
        let s = pool_support(&sig(1, 0.8), &[sig(0, 0.9)], &params(1.0)).unwrap();
        assert!((s.value() - 0.8 / (0.8 + 1e-9)).abs() < 1e-15);
        assert!((s.value() - (1.0 - 1.25e-9)).abs() < 1e-12);
    }

    #[test]
    fn zero_self_weight_follows_neighbors() {
        let s = pool_support(&sig(1, 0.99), &[sig(0, 0.5), sig(0, 0.5)], &params(0.0)).unwrap();
        assert_eq!(s.value(), 0.0);
    }

    #[test]
    fn balanced_weight_hand_value() {
        // 0.5*0.6*1 + 0.5*(0.9*0 + 0.5*1) = 0.55 over 0.5*0.6 + 0.5*1.4 = 1.0
        let s = pool_support(&sig(1, 0.6), &[sig(0, 0.9), sig(1, 0.5)], &params(0.5)).unwrap();
        assert!((s.value() - 0.549_999_999_45).abs() < 1e-12);
        assert_eq!(binarize(s, &params(0.5)), Label::ClaimFalse);
    }

    #[test]
    fn confident_neighbors_sway_self_reliant_agent() {
        let neighbors = vec![sig(1, 0.95); 6];
        let s = pool_support(&sig(0, 0.9), &neighbors, &params(0.75)).unwrap();
        assert!((s.value() - 1.425 / (2.1 + 1e-9)).abs() < 1e-12);
        assert!((s.value() - 0.6786).abs() < 1e-4);
    }

    #[test]
    fn readout_threshold() {
        let p = PoolingParams::default();
        assert_eq!(binarize(SupportScore(0.55), &p), Label::ClaimFalse);
        assert_eq!(binarize(SupportScore(0.4999), &p), Label::ClaimTrue);
        assert_eq!(binarize(SupportScore(0.5), &p), Label::ClaimFalse);
    }

    #[test]
    fn isolated_agent_is_legal() {
        let s = pool_support(&sig(1, 0.7), [], &params(0.3)).unwrap();
        assert!(s.value() > 0.99);
        let s = pool_support(&sig(0, 0.7), [], &params(0.3)).unwrap();
        assert_eq!(s.value(), 0.0);
    }

    #[test]
    fn no_mass_pools_to_zero() {
        let s = pool_support(&sig(1, 0.0), &[sig(1, 0.0)], &params(0.5)).unwrap();
        assert_eq!(s.value(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = AgentSignal {
            judgment: Label::ClaimFalse,
            confidence: f64::NAN,
            justification: String::new(),
        };
        assert!(matches!(
            pool_support(&bad, [], &PoolingParams::default()),
            Err(ModelError::InvalidConfidence(_))
        ));
        assert!(matches!(
            pool_support(&sig(0, 0.5), [&bad], &PoolingParams::default()),
            Err(ModelError::InvalidConfidence(_))
        ));
        let p = PoolingParams {
            alpha: 1.5,
            ..PoolingParams::default()
        };
        assert_eq!(pool_support(&sig(0, 0.5), [], &p), Err(ModelError::InvalidAlpha(1.5)));
        assert!(PoolingParams::default().with_tau(1.0).is_err());
        assert!(PoolingParams::default().with_epsilon(0.0).is_err());
        assert!(AgentSignal::new(Label::ClaimTrue, 1.01).is_err());
        assert!(Label::try_from(2).is_err());
    }

    #[test]
    fn no_weight_is_a_vote_share() {
        let p = PoolingParams::no_weight();
        let s = pool_support(&sig(1, 0.1), &[sig(0, 0.9), sig(1, 0.2)], &p).unwrap();
        assert!((s.value() - 2.0 / (3.0 + 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn signal_wire_shape() {
        let s = sig(1, 0.58).with_justification("Evidence appears mixed.");
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"y":1,"p":0.58,"just":"Evidence appears mixed."}"#);
        let back: AgentSignal = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<AgentSignal>(r#"{"y":2,"p":0.5}"#).is_err());
    }

    fn arb_signal() -> impl Strategy<Value = AgentSignal> {
        (any::<bool>(), 0.0f64..=1.0).prop_map(|(y, p)| AgentSignal {
            judgment: if y { Label::ClaimFalse } else { Label::ClaimTrue },
            confidence: p,
            justification: String::new(),
        })
    }

    proptest! {
        #[test]
        fn score_is_bounded(
            own in arb_signal(),
            neighbors in prop::collection::vec(arb_signal(), 0..8),
            alpha in 0.0f64..=1.0,
        ) {
            let s = pool_support(&own, &neighbors, &params(alpha)).unwrap().value();
            prop_assert!((0.0..1.0).contains(&s));
        }

        #[test]
        fn zero_self_weight_is_self_independent(
            a in arb_signal(),
            b in arb_signal(),
            neighbors in prop::collection::vec(arb_signal(), 0..8),
        ) {
            let p = params(0.0);
            prop_assert_eq!(
                pool_support(&a, &neighbors, &p).unwrap(),
                pool_support(&b, &neighbors, &p).unwrap()
            );
        }

        #[test]
        fn scaling_confidences_preserves_readout(
            own in arb_signal(),
            neighbors in prop::collection::vec(arb_signal(), 0..8),
            alpha in 0.0f64..=1.0,
            c in 0.01f64..=1.0,
        ) {
            let p = params(alpha);
            let scale = |s: &AgentSignal| AgentSignal { confidence: s.confidence * c, ..s.clone() };
            let den = alpha * own.confidence
                + (1.0 - alpha) * neighbors.iter().map(|s| s.confidence).sum::<f64>();
            let before = pool_support(&own, &neighbors, &p).unwrap();
            let scaled: Vec<_> = neighbors.iter().map(scale).collect();
            let after = pool_support(&scale(&own), &scaled, &p).unwrap();
            prop_assume!(den * c > 1e-6);
            prop_assume!((before.value() - p.tau).abs() > 10.0 * p.epsilon / (den * c));
            prop_assert_eq!(binarize(before, &p), binarize(after, &p));
        }
    }
}

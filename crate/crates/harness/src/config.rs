//! Sweep configuration, read from a single JSON document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use conformity_core::agents::SyntheticAgentParams;
use conformity_core::model::{DEFAULT_EPSILON, DEFAULT_TAU};
use conformity_core::protocols::DEFAULT_T_MAX;
use conformity_core::streams::fingerprint;
use conformity_core::topology::Branch;
use conformity_core::{build_topology, BackendDescriptor, PoolingParams, Role, Topology, TopologySpec};
use conformity_gateway::EndpointConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// How backends are laid out over a topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case")]
pub enum BackendPlan {
    /// Every node uses the same backend.
    Homogeneous { backend: BackendDescriptor },
    /// Centralized topologies only: one backend for the hub or root, one
    /// per branch (intermediates belong to their branch).
    PerRole {
        hub: BackendDescriptor,
        left: BackendDescriptor,
        right: BackendDescriptor,
    },
    /// `k` nodes run `first` and the rest `second`, for each `k` in
    /// `counts`. Positions are shuffled per repeat.
    Ratio {
        first: BackendDescriptor,
        second: BackendDescriptor,
        counts: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingConfig {
    /// Label used in records and summaries; derived from the plan if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub plan: BackendPlan,
}

fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_t_max() -> usize {
    DEFAULT_T_MAX
}
fn default_repeats() -> usize {
    10
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_settings() -> Vec<SettingConfig> {
    vec![SettingConfig {
        name: None,
        plan: BackendPlan::Homogeneous {
            backend: BackendDescriptor::Synthetic(SyntheticAgentParams::default()),
        },
    }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub claims: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub topologies: Vec<TopologySpec>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub no_weight_arm: bool,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_settings")]
    pub settings: Vec<SettingConfig>,
    /// JSONL of recorded agent outputs, required by scripted backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub endpoints: BTreeMap<String, EndpointConfig>,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Also write every run's full round-by-round trace.
    #[serde(default)]
    pub persist_traces: bool,
}

/// One α value, or the unweighted baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arm {
    Alpha(f64),
    NoWeight,
}

impl Arm {
    pub fn label(self) -> String {
        match self {
            Arm::Alpha(a) => format!("alpha={a}"),
            Arm::NoWeight => "no-weight".into(),
        }
    }

    pub fn alpha(self) -> Option<f64> {
        match self {
            Arm::Alpha(a) => Some(a),
            Arm::NoWeight => None,
        }
    }

    pub fn params(self, tau: f64, epsilon: f64) -> Result<PoolingParams, ConfigError> {
        let base = match self {
            Arm::Alpha(a) => PoolingParams::new(a),
            Arm::NoWeight => Ok(PoolingParams::no_weight()),
        };
        base.and_then(|p| p.with_tau(tau))
            .and_then(|p| p.with_epsilon(epsilon))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// A backend layout ready to apply, with ratio sweeps expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub label: String,
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    Homogeneous(BackendDescriptor),
    PerRole {
        hub: BackendDescriptor,
        left: BackendDescriptor,
        right: BackendDescriptor,
    },
    Mixed {
        first: BackendDescriptor,
        second: BackendDescriptor,
        k: usize,
    },
}

impl Layout {
    pub fn backends(&self) -> Vec<&BackendDescriptor> {
        match self {
            Layout::Homogeneous(b) => vec![b],
            Layout::PerRole { hub, left, right } => vec![hub, left, right],
            Layout::Mixed { first, second, .. } => vec![first, second],
        }
    }

    /// Whether positions are reshuffled per repeat.
    pub fn is_randomized(&self) -> bool {
        matches!(self, Layout::Mixed { k, .. } if *k > 0)
    }

    /// Backends in node order. `shuffle` permutes node positions for mixed
    /// layouts and is ignored otherwise.
    pub fn assign(&self, topology: &Topology, shuffle: impl FnOnce(&mut Vec<usize>)) -> Vec<BackendDescriptor> {
        let n = topology.len();
        match self {
            Layout::Homogeneous(b) => vec![b.clone(); n],
            Layout::PerRole { hub, left, right } => topology
                .nodes()
                .iter()
                .map(|node| match (node.role, node.branch) {
                    (Role::Hub, _) => hub.clone(),
                    (_, Some(Branch::Left)) => left.clone(),
                    (_, Some(Branch::Right)) => right.clone(),
                    _ => unreachable!("validated: per-role layouts only on centralized topologies"),
                })
                .collect(),
            Layout::Mixed { first, second, k } => {
                let mut order: Vec<usize> = (0..n).collect();
                shuffle(&mut order);
                let mut out = vec![second.clone(); n];
                for &idx in order.iter().take(*k) {
                    out[idx] = first.clone();
                }
                out
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let read_err = |message: String| ConfigError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        // Relative data paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        config.claims = base.join(&config.claims);
        config.output_dir = base.join(&config.output_dir);
        config.traces = config.traces.map(|t| base.join(t));
        Ok(config)
    }

    pub fn arms(&self) -> Vec<Arm> {
        let mut arms: Vec<Arm> = self.alphas.iter().copied().map(Arm::Alpha).collect();
        if self.no_weight_arm {
            arms.push(Arm::NoWeight);
        }
        arms
    }

    pub fn expanded_settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        for s in &self.settings {
            match &s.plan {
                BackendPlan::Homogeneous { backend } => out.push(Setting {
                    label: s.name.clone().unwrap_or_else(|| backend.label()),
                    layout: Layout::Homogeneous(backend.clone()),
                }),
                BackendPlan::PerRole { hub, left, right } => out.push(Setting {
                    label: s.name.clone().unwrap_or_else(|| {
                        format!("hub={}/left={}/right={}", hub.label(), left.label(), right.label())
                    }),
                    layout: Layout::PerRole {
                        hub: hub.clone(),
                        left: left.clone(),
                        right: right.clone(),
                    },
                }),
                BackendPlan::Ratio { first, second, counts } => {
                    for &k in counts {
                        let prefix = s
                            .name
                            .clone()
                            .unwrap_or_else(|| format!("{}:{}", first.label(), second.label()));
                        out.push(Setting {
                            label: format!("{prefix}@{k}"),
                            layout: Layout::Mixed {
                                first: first.clone(),
                                second: second.clone(),
                                k,
                            },
                        });
                    }
                }
            }
        }
        out
    }

    pub fn uses_llm(&self) -> bool {
        self.expanded_settings()
            .iter()
            .any(|s| s.layout.backends().iter().any(|b| b.is_llm()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repeats < 1 {
            return invalid("repeats must be at least 1");
        }
        if self.t_max < 1 {
            return invalid("t_max must be at least 1");
        }
        if self.topologies.is_empty() {
            return invalid("no topologies");
        }
        if self.arms().is_empty() {
            return invalid("no alphas and no no-weight arm");
        }
        if self.settings.is_empty() {
            return invalid("no backend settings");
        }
        if self.workers == Some(0) {
            return invalid("workers must be at least 1");
        }
        for arm in self.arms() {
            arm.params(self.tau, self.epsilon)?;
        }

        let settings = self.expanded_settings();
        let mut labels = std::collections::BTreeSet::new();
        for s in &settings {
            if !labels.insert(s.label.clone()) {
                return invalid(format!("duplicate setting label {:?}", s.label));
            }
            for backend in s.layout.backends() {
                match backend {
                    BackendDescriptor::Synthetic(p) => {
                        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    }
                    BackendDescriptor::Llm { endpoint } if !self.endpoints.contains_key(endpoint) => {
                        return invalid(format!("setting {:?} uses unknown endpoint {endpoint:?}", s.label));
                    }
                    BackendDescriptor::Scripted { .. } if self.traces.is_none() => {
                        return invalid(format!("setting {:?} is scripted but no traces file is set", s.label));
                    }
                    _ => {}
                }
            }
        }
        for (name, endpoint) in &self.endpoints {
            endpoint
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("endpoint {name}: {e}")))?;
        }

        for spec in &self.topologies {
            let topology = build_topology(spec).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            for s in &settings {
                match &s.layout {
                    Layout::PerRole { .. } if !spec.kind.is_centralized() => {
                        return invalid(format!(
                            "per-role setting {:?} needs a star or hierarchical topology, not {}",
                            s.label, spec.kind
                        ));
                    }
                    Layout::Mixed { k, .. } if *k > topology.len() => {
                        return invalid(format!(
                            "setting {:?} places {k} agents on {} nodes",
                            s.label,
                            topology.len()
                        ));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Hash of every field that affects results. Output location and
    /// worker count are excluded.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        // Paths differ between machines; run fingerprints carry claim content.
        canonical.output_dir = PathBuf::new();
        canonical.claims = PathBuf::new();
        canonical.traces = canonical.traces.as_ref().map(|_| PathBuf::new());
        canonical.workers = None;
        canonical.persist_traces = false;
        fingerprint(&[&serde_json::to_string(&canonical).expect("config serializes")])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use conformity_core::TopologyKind;

    fn minimal() -> ExperimentConfig {
        serde_json::from_str(
            r#"{"claims": "c.jsonl", "output_dir": "out", "seed": 1,
                "topologies": [{"kind": "ring", "m": 2}, {"kind": "star"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = minimal();
        assert_eq!(c.alphas, [0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!((c.t_max, c.repeats, c.tau, c.epsilon), (10, 10, 0.5, 1e-9));
        assert_eq!(c.topologies[0].kind, TopologyKind::Ring { m: 2 });
        assert_eq!(c.topologies[0].n_agents, 7);
        assert_eq!(c.expanded_settings()[0].label, "synthetic:0.70");
        c.validate().unwrap();
    }

    #[test]
    fn arms_include_baseline_when_asked() {
        let mut c = minimal();
        c.no_weight_arm = true;
        let labels: Vec<_> = c.arms().into_iter().map(Arm::label).collect();
        assert_eq!(
            labels,
            [
                "alpha=0",
                "alpha=0.25",
                "alpha=0.5",
                "alpha=0.75",
                "alpha=1",
                "no-weight"
            ]
        );
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = minimal();
        c.alphas.push(1.5);
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.repeats = 0;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"claims": "c", "output_dir": "o", "seed": 1, "topologies": [], "alpha": [0.5]}"#
        )
        .is_err());
    }

    #[test]
    fn per_role_needs_centralized() {
        let mut c = minimal();
        let s = BackendDescriptor::Synthetic(SyntheticAgentParams::default());
        c.settings = vec![SettingConfig {
            name: Some("cap".into()),
            plan: BackendPlan::PerRole {
                hub: s.clone(),
                left: s.clone(),
                right: s,
            },
        }];
        assert!(c.validate().unwrap_err().to_string().contains("star or hierarchical"));
        c.topologies.remove(0);
        c.validate().unwrap();
    }

    #[test]
    fn ratio_expands_and_places() {
        let mut c = minimal();
        let strong = BackendDescriptor::Synthetic(SyntheticAgentParams::default().with_competence(0.9));
        let weak = BackendDescriptor::Synthetic(SyntheticAgentParams::default().with_competence(0.6));
        c.settings = vec![SettingConfig {
            name: Some("mix".into()),
            plan: BackendPlan::Ratio {
                first: strong.clone(),
                second: weak,
                counts: vec![0, 3, 7],
            },
        }];
        let settings = c.expanded_settings();
        assert_eq!(
            settings.iter().map(|s| s.label.as_str()).collect::<Vec<_>>(),
            ["mix@0", "mix@3", "mix@7"]
        );
        let topology = build_topology(&TopologySpec::ring(2, 7)).unwrap();
        let placed = settings[1].layout.assign(&topology, |order| order.reverse());
        let strong_at: Vec<_> = (0..7).filter(|&i| placed[i] == strong).collect();
        assert_eq!(strong_at, [4, 5, 6]);
        c.settings[0].plan = BackendPlan::Ratio {
            first: strong.clone(),
            second: strong,
            counts: vec![8],
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_output_location() {
        let a = minimal();
        let mut b = minimal();
        b.output_dir = "elsewhere".into();
        b.claims = "moved/c.jsonl".into();
        b.workers = Some(3);
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 2;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use conformity_harness::ExperimentConfig;
use serde_json::{json, Value};

pub const CLAIMS: &str = concat!(
    r#"{"id": "k1", "text": "Water boils at a lower temperature at high altitude.", "label": 0}"#,
    "\n",
    r#"{"id": "k2", "text": "The moon is larger than the earth.", "label": 1}"#,
    "\n"
);

pub fn write_claims(dir: &Path) -> PathBuf {
    let path = dir.join("claims.jsonl");
    std::fs::write(&path, CLAIMS).unwrap();
    path
}

/// A config document with the claim file written next to it.
pub fn config_value(dir: &Path, topologies: Value) -> Value {
    write_claims(dir);
    json!({
        "claims": "claims.jsonl",
        "output_dir": "out",
        "seed": 7,
        "topologies": topologies,
        "alphas": [0.0, 0.25, 0.5, 0.75, 1.0],
        "repeats": 10,
        "settings": [{"plan": "homogeneous", "backend": {"synthetic": {"competence": 0.7}}}]
    })
}

pub fn load(dir: &Path, value: &Value) -> ExperimentConfig {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    ExperimentConfig::from_path(&path).unwrap()
}

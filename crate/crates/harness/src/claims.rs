//! Claim files: JSONL or CSV with `id`, `text`, `label` and optional
//! `background` columns.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use conformity_core::{ClaimRecord, Label};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClaimsError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate claim id {id:?} (first seen on line {first})")]
    DuplicateId { line: u64, id: String, first: u64 },
    #[error("line {line}: claim {id:?} has no label")]
    MissingLabel { line: u64, id: String },
    #[error("no claims in {0}")]
    Empty(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClaimFormat {
    Jsonl,
    Csv,
}

impl ClaimFormat {
    /// `.csv` is CSV, anything else is read as JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ClaimFormat::Csv,
            _ => ClaimFormat::Jsonl,
        }
    }
}

pub fn load_claims(path: impl AsRef<Path>, require_labels: bool) -> Result<Vec<ClaimRecord>, ClaimsError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| ClaimsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let claims = read_claims(file, ClaimFormat::from_path(path), require_labels)?;
    if claims.is_empty() {
        return Err(ClaimsError::Empty(path.display().to_string()));
    }
    Ok(claims)
}

pub fn read_claims<R: Read>(
    reader: R,
    format: ClaimFormat,
    require_labels: bool,
) -> Result<Vec<ClaimRecord>, ClaimsError> {
    let numbered = match format {
        ClaimFormat::Jsonl => read_jsonl(reader)?,
        ClaimFormat::Csv => read_csv(reader)?,
    };
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut claims = Vec::with_capacity(numbered.len());
    for (line, claim) in numbered {
        if let Some(&first) = seen.get(&claim.id) {
            return Err(ClaimsError::DuplicateId {
                line,
                id: claim.id,
                first,
            });
        }
        if require_labels && claim.label.is_none() {
            return Err(ClaimsError::MissingLabel { line, id: claim.id });
        }
        seen.insert(claim.id.clone(), line);
        claims.push(claim);
    }
    Ok(claims)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClaim {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default)]
    background: Option<String>,
}

fn read_jsonl<R: Read>(reader: R) -> Result<Vec<(u64, ClaimRecord)>, ClaimsError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| ClaimsError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawClaim = serde_json::from_str(&line).map_err(|e| ClaimsError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, finish(raw, line_no)?));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CsvClaim {
    id: String,
    text: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    background: Option<String>,
}

fn read_csv<R: Read>(reader: R) -> Result<Vec<(u64, ClaimRecord)>, ClaimsError> {
    let mut csv = csv::Reader::from_reader(reader);
    let csv_error = |e: csv::Error| ClaimsError::Parse {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let headers = csv.headers().map_err(csv_error)?.clone();
    let mut out = Vec::new();
    for record in csv.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: CsvClaim = record.deserialize(Some(&headers)).map_err(|e| ClaimsError::Parse {
            line,
            message: e.to_string(),
        })?;
        let label = match row.label.trim() {
            "" => None,
            "0" => Some(Label::ClaimTrue),
            "1" => Some(Label::ClaimFalse),
            other => {
                return Err(ClaimsError::Parse {
                    line,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        let raw = RawClaim {
            id: row.id,
            text: row.text,
            label,
            background: row.background.filter(|b| !b.is_empty()),
        };
        out.push((line, finish(raw, line)?));
    }
    Ok(out)
}

fn finish(raw: RawClaim, line: u64) -> Result<ClaimRecord, ClaimsError> {
    if raw.id.trim().is_empty() {
        return Err(ClaimsError::Parse {
            line,
            message: "empty claim id".into(),
        });
    }
    Ok(ClaimRecord {
        id: raw.id,
        text: raw.text,
        label: raw.label,
        background: raw.background,
    })
}

//! Pulling the agent report out of a model reply.

use conformity_core::{AgentSignal, Label, PromptKind};
use serde_json::{Map, Value};

/// A validated agent report. `agent_id` and `t` are only present for the
/// distributed templates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedReport {
    pub agent_id: Option<String>,
    pub t: Option<u64>,
    pub y: Label,
    pub p: f64,
    pub just: String,
}

impl ParsedReport {
    pub fn signal(&self) -> AgentSignal {
        AgentSignal::new(self.y, self.p)
            .expect("p clamped during validation")
            .with_justification(self.just.clone())
    }
}

/// Keys each template asks the model to return.
pub fn required_keys(kind: PromptKind) -> &'static [&'static str] {
    match kind {
        PromptKind::LeafOneShot | PromptKind::HubOneShot => &["y", "p", "just"],
        PromptKind::DistInitial | PromptKind::DistRound => &["agent_id", "t", "y", "p", "just"],
    }
}

/// The first balanced `{...}` span in `text`, skipping braces inside JSON
/// strings. Returns `None` when no object closes.
pub fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in text.bytes().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses and validates a model reply. Out-of-range `p` is clamped and
/// reported through `warnings`; every other deviation is an error string.
pub fn parse_report(kind: PromptKind, reply: &str, warnings: &mut Vec<String>) -> Result<ParsedReport, String> {
    let span = first_json_object(reply).ok_or_else(|| "no JSON object in reply".to_string())?;
    let value: Value = serde_json::from_str(span).map_err(|e| format!("invalid JSON object: {e}"))?;
    let Value::Object(map) = value else {
        unreachable!("span starts with a brace")
    };
    validate(kind, &map, warnings)
}

fn validate(kind: PromptKind, map: &Map<String, Value>, warnings: &mut Vec<String>) -> Result<ParsedReport, String> {
    let required = required_keys(kind);
    if let Some(extra) = map.keys().find(|k| !required.contains(&k.as_str())) {
        return Err(format!("unexpected key {extra:?}"));
    }
    if let Some(missing) = required.iter().find(|k| !map.contains_key(**k)) {
        return Err(format!("missing key {missing:?}"));
    }

    let y = match map["y"].as_u64() {
        Some(0) => Label::ClaimTrue,
        Some(1) => Label::ClaimFalse,
        _ => return Err(format!("y must be 0 or 1, got {}", map["y"])),
    };
    let raw_p = map["p"]
        .as_f64()
        .ok_or_else(|| format!("p must be a number, got {}", map["p"]))?;
    let p = raw_p.clamp(0.0, 1.0);
    if p != raw_p {
        warnings.push(format!("p={raw_p} outside [0,1], clamped to {p}"));
    }
    let just = map["just"]
        .as_str()
        .ok_or_else(|| format!("just must be a string, got {}", map["just"]))?
        .to_string();

    let agent_id = match map.get("agent_id") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(format!("agent_id must be a string, got {other}")),
    };
    let t = match map.get("t") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| format!("t must be a non-negative integer, got {v}"))?,
        ),
    };
    Ok(ParsedReport {
        agent_id,
        t,
        y,
        p,
        just,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_skips_prose_and_string_braces() {
        assert_eq!(first_json_object("Sure! {\"a\": 1} done"), Some("{\"a\": 1}"));
        assert_eq!(
            first_json_object(r#"x {"just": "a } b \" {", "y": 0} y"#),
            Some(r#"{"just": "a } b \" {", "y": 0}"#)
        );
        assert_eq!(
            first_json_object(r#"{"o": {"i": 1}} {"b": 2}"#),
            Some(r#"{"o": {"i": 1}}"#)
        );
        assert_eq!(first_json_object("no braces"), None);
        assert_eq!(first_json_object("{ unclosed"), None);
        assert_eq!(first_json_object("} {\"a\":1}"), Some("{\"a\":1}"));
    }

    #[test]
    fn one_shot_report() {
        let mut w = vec![];
        let r = parse_report(PromptKind::LeafOneShot, r#"{"y":0,"p":0.71,"just":"ok"}"#, &mut w).unwrap();
        assert_eq!((r.y, r.p, r.just.as_str()), (Label::ClaimTrue, 0.71, "ok"));
        assert!(w.is_empty());
    }

    #[test]
    fn distributed_report_needs_all_keys() {
        let mut w = vec![];
        let err = parse_report(PromptKind::DistRound, r#"{"y":0,"p":0.7,"just":""}"#, &mut w).unwrap_err();
        assert!(err.contains("missing key"), "{err}");
        let r = parse_report(
            PromptKind::DistRound,
            r#"{"agent_id":"A3","t":2,"y":1,"p":0.6,"just":"j"}"#,
            &mut w,
        )
        .unwrap();
        assert_eq!((r.agent_id.as_deref(), r.t), (Some("A3"), Some(2)));
    }

    #[test]
    fn schema_violations() {
        let mut w = vec![];
        for bad in [
            r#"{"y":2,"p":0.5,"just":""}"#,
            r#"{"y":"0","p":0.5,"just":""}"#,
            r#"{"y":0,"p":"high","just":""}"#,
            r#"{"y":0,"p":0.5,"just":"","extra":1}"#,
            r#"{"y":0,"p":0.5}"#,
            r#"{"y":0,"p":0.5,"just":"",}"#,
        ] {
            assert!(parse_report(PromptKind::LeafOneShot, bad, &mut w).is_err(), "{bad}");
        }
    }

    #[test]
    fn out_of_range_confidence_is_clamped() {
        let mut w = vec![];
        let r = parse_report(PromptKind::HubOneShot, r#"{"y":1,"p":1.4,"just":""}"#, &mut w).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(w.len(), 1);
        let r = parse_report(PromptKind::HubOneShot, r#"{"y":1,"p":0.12345,"just":""}"#, &mut w).unwrap();
        assert_eq!(r.p, 0.12345);
    }
}

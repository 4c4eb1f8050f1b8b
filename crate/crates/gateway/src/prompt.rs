//! Prompt templates and their instantiation.

use conformity_core::{AgentSignal, NeighborReport, PromptKind};

use crate::GatewayError;

const LEAF_ONE_SHOT: &str = include_str!("templates/leaf_one_shot.txt");
const HUB_ONE_SHOT: &str = include_str!("templates/hub_one_shot.txt");
const DIST_INITIAL: &str = include_str!("templates/dist_initial.txt");
const DIST_ROUND: &str = include_str!("templates/dist_round.txt");

pub fn template_text(kind: PromptKind) -> &'static str {
    let raw = match kind {
        PromptKind::LeafOneShot => LEAF_ONE_SHOT,
        PromptKind::HubOneShot => HUB_ONE_SHOT,
        PromptKind::DistInitial => DIST_INITIAL,
        PromptKind::DistRound => DIST_ROUND,
    };
    raw.trim_end_matches('\n')
}

/// Per-agent values a template may reference.
#[derive(Clone, Copy, Debug, Default)]
pub struct PromptContext<'a> {
    pub agent_id: Option<&'a str>,
    pub round: Option<usize>,
    pub prior: Option<&'a AgentSignal>,
    pub neighbors: Option<&'a [NeighborReport]>,
}

/// Orders `A2` before `A10`: alphabetic prefix first, then the numeric
/// suffix, then the raw id.
fn natural_key(id: &str) -> (String, u64, String) {
    let split = id.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (prefix, digits) = id.split_at(split);
    (prefix.to_string(), digits.parse().unwrap_or(0), id.to_string())
}

/// Neighbor reports as a compact JSON array in agent-id order.
pub fn reports_json(reports: &[NeighborReport]) -> String {
    let mut sorted: Vec<&NeighborReport> = reports.iter().collect();
    sorted.sort_by_key(|r| natural_key(&r.agent_id));
    serde_json::to_string(&sorted).expect("reports serialize")
}

pub fn render_prompt(
    kind: PromptKind,
    claim: &str,
    background: &str,
    ctx: &PromptContext<'_>,
) -> Result<String, GatewayError> {
    let missing = |what: &'static str| GatewayError::MissingPlaceholder { template: kind, what };
    let mut values: Vec<(&str, String)> = vec![
        ("{{CLAIM}}", claim.to_string()),
        ("{{BACKGROUND}}", background.to_string()),
    ];
    match kind {
        PromptKind::LeafOneShot => {}
        PromptKind::HubOneShot => {
            let peers = ctx.neighbors.ok_or_else(|| missing("PEER_JSON_LIST"))?;
            values.push(("{{PEER_JSON_LIST}}", reports_json(peers)));
        }
        PromptKind::DistInitial => {
            let id = ctx.agent_id.ok_or_else(|| missing("AGENT_ID"))?;
            values.push(("{{AGENT_ID}}", id.to_string()));
        }
        PromptKind::DistRound => {
            let id = ctx.agent_id.ok_or_else(|| missing("AGENT_ID"))?;
            let round = ctx.round.ok_or_else(|| missing("ROUND"))?;
            let prior = ctx.prior.ok_or_else(|| missing("Y_PREV/P_PREV"))?;
            let neighbors = ctx.neighbors.ok_or_else(|| missing("NEIGHBOR_JSON_LIST"))?;
            values.push(("{{AGENT_ID}}", id.to_string()));
            values.push(("{{ROUND}}", round.to_string()));
            values.push(("{{Y_PREV}}", prior.judgment.to_string()));
            values.push(("{{P_PREV}}", serde_json::to_string(&prior.confidence).expect("finite")));
            values.push(("{{NEIGHBOR_JSON_LIST}}", reports_json(neighbors)));
        }
    }

    // Single left-to-right pass so substituted text is never rescanned.
    let template = template_text(kind);
    let mut out = String::with_capacity(template.len() + claim.len() + background.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        match values.iter().find(|(key, _)| tail.starts_with(key)) {
            Some((key, value)) => {
                out.push_str(value);
                rest = &tail[key.len()..];
            }
            None => {
                let end = tail.find("}}").map(|e| e + 2).unwrap_or(tail.len());
                return Err(GatewayError::MissingPlaceholder {
                    template: kind,
                    what: leak_name(&tail[..end]),
                });
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn leak_name(placeholder: &str) -> &'static str {
    match placeholder {
        "{{AGENT_ID}}" => "AGENT_ID",
        "{{ROUND}}" => "ROUND",
        "{{Y_PREV}}" => "Y_PREV",
        "{{P_PREV}}" => "P_PREV",
        "{{PEER_JSON_LIST}}" => "PEER_JSON_LIST",
        "{{NEIGHBOR_JSON_LIST}}" => "NEIGHBOR_JSON_LIST",
        _ => "unknown placeholder",
    }
}

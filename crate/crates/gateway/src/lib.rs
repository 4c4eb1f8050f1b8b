//! LLM-backed agent reports over OpenAI-compatible chat completions.
//!
//! [`Gateway`] owns named endpoints and implements the core
//! [`ReportSource`] trait, so agents built with an `llm` backend route
//! their prompts through it.

use std::collections::BTreeMap;
use std::sync::Arc;

use conformity_core::{AgentError, ClaimRecord, PromptKind, Report, ReportRequest, ReportSource};
use thiserror::Error;

pub mod endpoint;
pub mod prompt;
pub mod report;
pub mod stub;

pub use endpoint::{CallOutcome, Endpoint, EndpointConfig, REPAIR_INSTRUCTION};
pub use prompt::{render_prompt, PromptContext};
pub use report::{first_json_object, parse_report, ParsedReport};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{template:?} prompt needs a value for {what}")]
    MissingPlaceholder { template: PromptKind, what: &'static str },
    #[error("API key variable {0} is not set")]
    MissingApiKey(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("no endpoint named {0:?}")]
    UnknownEndpoint(String),
    #[error("{endpoint}: agent {agent} round {round} failed after {attempts} attempt(s): {cause}")]
    Exhausted {
        endpoint: String,
        agent: String,
        round: usize,
        attempts: u32,
        cause: String,
    },
}

/// Named endpoints shared by every agent of every concurrent run.
#[derive(Debug, Default)]
pub struct Gateway {
    endpoints: BTreeMap<String, Arc<Endpoint>>,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_configs<'a>(
        configs: impl IntoIterator<Item = (&'a String, &'a EndpointConfig)>,
    ) -> Result<Self, GatewayError> {
        let mut gateway = Gateway::new();
        for (name, config) in configs {
            gateway.add(Endpoint::new(name.clone(), config.clone())?);
        }
        Ok(gateway)
    }

    pub fn add(&mut self, endpoint: Endpoint) {
        self.endpoints.insert(endpoint.name().to_string(), Arc::new(endpoint));
    }

    pub fn endpoint(&self, name: &str) -> Result<&Arc<Endpoint>, GatewayError> {
        self.endpoints
            .get(name)
            .ok_or_else(|| GatewayError::UnknownEndpoint(name.to_string()))
    }

    pub fn has_endpoint(&self, name: &str) -> bool {
        self.endpoints.contains_key(name)
    }

    /// Renders, calls and validates one report, checking the echoed agent
    /// id and round against what was asked.
    pub fn report(&self, request: &ReportRequest<'_>) -> Result<Report, GatewayError> {
        let endpoint = self.endpoint(request.endpoint)?;
        let ctx = PromptContext {
            agent_id: Some(request.agent_id),
            round: Some(request.round),
            prior: request.prior,
            neighbors: Some(request.neighbors),
        };
        let prompt = render_prompt(request.kind, &request.claim.text, request.claim.background_text(), &ctx)?;
        let outcome = endpoint.call_and_parse(request.kind, &prompt, request.agent_id, request.round)?;
        let mut warnings = outcome.warnings;
        if let Some(id) = outcome.report.agent_id.as_deref().filter(|id| *id != request.agent_id) {
            warnings.push(format!("reply names agent {id}, expected {}", request.agent_id));
        }
        if let Some(t) = outcome.report.t.filter(|&t| t != request.round as u64) {
            warnings.push(format!("reply names round {t}, expected {}", request.round));
        }
        Ok(Report {
            signal: outcome.report.signal(),
            tokens: outcome.tokens,
            warnings,
        })
    }

    /// Asks `endpoint` for a short neutral background note on a claim.
    /// Output quality is not checked.
    pub fn generate_background(&self, endpoint: &str, claim: &ClaimRecord) -> Result<String, GatewayError> {
        let prompt = format!(
            "Write a short, neutral background note (at most 120 words) giving context useful for judging \
             the following claim. Do not state whether the claim is true.\n\nClaim: {}",
            claim.text
        );
        Ok(self.endpoint(endpoint)?.complete(&prompt)?.trim().to_string())
    }
}

impl ReportSource for Gateway {
    fn request(&self, request: &ReportRequest<'_>) -> Result<Report, AgentError> {
        self.report(request).map_err(|e| AgentError::Llm {
            agent: request.agent_id.to_string(),
            round: request.round,
            message: e.to_string(),
        })
    }
}

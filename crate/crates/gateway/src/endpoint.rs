//! One chat-completions endpoint with retries and a concurrency cap.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use conformity_core::metrics::token_proxy;
use conformity_core::PromptKind;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::report::{parse_report, ParsedReport};
use crate::GatewayError;

/// Appended to the prompt when the previous reply did not parse.
pub const REPAIR_INSTRUCTION: &str = "Return only the JSON object.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Environment variable holding the bearer token. `null` sends no
    /// authorization header, for local servers.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_api_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".into())
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_parallel() -> usize {
    4
}
fn default_backoff_base_ms() -> u64 {
    1000
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            temperature: default_temperature(),
            api_key_env: default_api_key_env(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            max_parallel: default_max_parallel(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: String| Err(GatewayError::InvalidConfig(msg));
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_parallel < 1 {
            return bad("max_parallel must be at least 1".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return bad(format!("base_url must be http(s), got {:?}", self.base_url));
        }
        Ok(())
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Counting semaphore; a permit is held for the duration of one request.
struct Permits {
    free: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

/// Why one attempt failed, and whether another is worthwhile.
#[derive(Debug)]
enum AttemptError {
    Retry(String),
    Parse(String),
    Fatal(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CallOutcome {
    pub report: ParsedReport,
    /// Tokens over every attempt, failed ones included.
    pub tokens: u64,
    pub warnings: Vec<String>,
    pub attempts: u32,
}

pub struct Endpoint {
    name: String,
    config: EndpointConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    permits: Permits,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("name", &self.name)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Endpoint {
    /// Resolves the API key now so a missing variable fails before any run.
    pub fn new(name: impl Into<String>, config: EndpointConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            None => None,
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::MissingApiKey(var.clone()))?),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::InvalidConfig(format!("http client: {e}")))?;
        Ok(Endpoint {
            name: name.into(),
            permits: Permits::new(config.max_parallel),
            config,
            api_key,
            client,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Sends `prompt`, extracts and validates the report, retrying per the
    /// endpoint policy. `agent` and `round` only label the error.
    pub fn call_and_parse(
        &self,
        kind: PromptKind,
        prompt: &str,
        agent: &str,
        round: usize,
    ) -> Result<CallOutcome, GatewayError> {
        let mut tokens = 0;
        let mut warnings = Vec::new();
        let mut repair = false;
        let mut last_cause = String::new();
        let attempts = self.config.max_retries + 1;

        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let text = if repair {
                format!("{prompt}\n{REPAIR_INSTRUCTION}")
            } else {
                prompt.to_string()
            };
            let outcome = self.complete_once(&text).and_then(|(reply, used)| {
                tokens += used.unwrap_or_else(|| token_proxy(&text) + token_proxy(&reply));
                let mut attempt_warnings = Vec::new();
                parse_report(kind, &reply, &mut attempt_warnings)
                    .map(|report| (report, attempt_warnings))
                    .map_err(AttemptError::Parse)
            });
            match outcome {
                Ok((report, attempt_warnings)) => {
                    warnings.extend(attempt_warnings);
                    return Ok(CallOutcome {
                        report,
                        tokens,
                        warnings,
                        attempts: attempt + 1,
                    });
                }
                Err(AttemptError::Fatal(cause)) => {
                    return Err(self.exhausted(agent, round, attempt + 1, cause));
                }
                Err(AttemptError::Retry(cause)) => {
                    log::warn!("{}: {agent} round {round} attempt {}: {cause}", self.name, attempt + 1);
                    warnings.push(format!("attempt {}: {cause}", attempt + 1));
                    last_cause = cause;
                }
                Err(AttemptError::Parse(cause)) => {
                    log::warn!("{}: {agent} round {round} attempt {}: {cause}", self.name, attempt + 1);
                    warnings.push(format!("attempt {}: {cause}", attempt + 1));
                    repair = true;
                    last_cause = cause;
                }
            }
        }
        Err(self.exhausted(agent, round, attempts, last_cause))
    }

    /// Free-form completion with the same retry policy, minus parsing.
    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let attempts = self.config.max_retries + 1;
        let mut last_cause = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.complete_once(prompt) {
                Ok((reply, _)) => return Ok(reply),
                Err(AttemptError::Fatal(cause)) => return Err(self.exhausted("-", 0, attempt + 1, cause)),
                Err(AttemptError::Retry(cause) | AttemptError::Parse(cause)) => last_cause = cause,
            }
        }
        Err(self.exhausted("-", 0, attempts, last_cause))
    }

    fn exhausted(&self, agent: &str, round: usize, attempts: u32, cause: String) -> GatewayError {
        GatewayError::Exhausted {
            endpoint: self.name.clone(),
            agent: agent.to_string(),
            round,
            attempts,
            cause,
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_ms.saturating_mul(1 << retry.min(16));
        let jitter = if base > 0 {
            rand::rng().random_range(0..=base / 4)
        } else {
            0
        };
        Duration::from_millis(base + jitter)
    }

    /// One HTTP round trip. Returns the message text and reported usage.
    fn complete_once(&self, prompt: &str) -> Result<(String, Option<u64>), AttemptError> {
        let url = self.config.completions_url();
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let auth = if self.api_key.is_some() {
            "Bearer [redacted]"
        } else {
            "none"
        };
        log::debug!("POST {url} authorization={auth} body={body}");

        let _permit = self.permits.acquire();
        let mut request = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| AttemptError::Retry(format!("transport: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| AttemptError::Retry(format!("reading body: {e}")))?;
        log::debug!("{url} -> {status} body={text}");

        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| AttemptError::Parse(format!("response is not JSON: {e}")))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| AttemptError::Parse("response has no choices[0].message.content".into()))?;
        let usage = value.pointer("/usage/total_tokens").and_then(Value::as_u64);
        Ok((content.to_string(), usage))
    }
}

fn truncate(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_from_json() {
        let c: EndpointConfig =
            serde_json::from_str(r#"{"base_url": "http://localhost:1", "model_name": "m"}"#).unwrap();
        assert_eq!(c, EndpointConfig::new("http://localhost:1", "m"));
        assert_eq!(c.temperature, 0.7);
        assert_eq!(c.api_key_env.as_deref(), Some("OPENAI_API_KEY"));
        let c: EndpointConfig =
            serde_json::from_str(r#"{"base_url": "http://x", "model_name": "m", "api_key_env": null}"#).unwrap();
        assert_eq!(c.api_key_env, None);
        assert!(
            serde_json::from_str::<EndpointConfig>(r#"{"base_url": "http://x", "model_name": "m", "temp": 1}"#)
                .is_err()
        );
    }

    #[test]
    fn config_invariants() {
        let mut c = EndpointConfig::new("http://x", "m");
        c.max_parallel = 0;
        assert!(c.validate().is_err());
        let mut c = EndpointConfig::new("http://x", "m");
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        assert!(EndpointConfig::new("ftp://x", "m").validate().is_err());
    }

    #[test]
    fn missing_key_variable_fails_early() {
        let mut c = EndpointConfig::new("http://127.0.0.1:9", "m");
        c.api_key_env = Some("CONFORMITY_TEST_SURELY_UNSET_VAR".into());
        assert!(matches!(Endpoint::new("e", c), Err(GatewayError::MissingApiKey(_))));
    }

    #[test]
    fn url_joins_cleanly() {
        assert_eq!(
            EndpointConfig::new("http://h/v1/", "m").completions_url(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn backoff_doubles_with_bounded_jitter() {
        let mut c = EndpointConfig::new("http://x", "m");
        c.api_key_env = None;
        c.backoff_base_ms = 100;
        let e = Endpoint::new("e", c).unwrap();
        for retry in 0..4 {
            let d = e.backoff(retry).as_millis() as u64;
            let base = 100 << retry;
            assert!((base..=base + base / 4).contains(&d), "{d}");
        }
    }
}

//! LLM backends, the structured response schema and token accounting.

use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prompt::PromptBundle;

pub const API_KEY_ENV: &str = "PLANNER_DOCTOR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub temperature: f64,
    pub token_limit: usize,
    pub model_name: String,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            token_limit: 8000,
            model_name: "gpt-4-turbo".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisPair {
    pub diagnosis: String,
    pub prescription: String,
}

impl DiagnosisPair {
    pub fn new(diagnosis: impl Into<String>, prescription: impl Into<String>) -> Self {
        Self {
            diagnosis: diagnosis.into(),
            prescription: prescription.into(),
        }
    }
}

/// A parsed model response: diagnoses plus the patch payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    #[serde(rename = "diagnoses")]
    pub pairs: Vec<DiagnosisPair>,
    pub patched_heuristic: String,
    #[serde(rename = "motion_primitives_id")]
    pub primitive_set_id: String,
}

impl DiagnosisResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain strings always serialize")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("malformed response JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("missing response key: {0}")]
    MissingKey(String),
    #[error("invalid response: {0}")]
    Invalid(String),
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("mock script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
    #[error("token budget exceeded: prompt needs {needed} tokens, {remaining} remaining")]
    BudgetExceeded { needed: usize, remaining: usize },
    #[error("backend configuration error: {0}")]
    Config(String),
}

const RESPONSE_KEYS: [&str; 3] = ["diagnoses", "patched_heuristic", "motion_primitives_id"];

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, LlmError> {
    match obj.get(key) {
        None => Err(LlmError::MissingKey(key.to_string())),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(LlmError::Invalid(format!("\"{key}\" must be a string, got {other}"))),
    }
}

/// Parses and validates a raw response against the response schema.
///
/// Heuristic and ID syntax is not checked here; that happens when the
/// patch is applied.
pub fn parse_response(raw: &str) -> Result<DiagnosisResult, LlmError> {
    let value: Value = serde_json::from_str(raw.trim()).map_err(|e| LlmError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(LlmError::Invalid("response must be a JSON object".into()));
    };
    if let Some(missing) = RESPONSE_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(LlmError::MissingKey(missing.to_string()));
    }
    let Value::Array(items) = &obj["diagnoses"] else {
        return Err(LlmError::Invalid("\"diagnoses\" must be a list".into()));
    };
    if items.is_empty() {
        return Err(LlmError::Invalid("\"diagnoses\" must not be empty".into()));
    }
    let mut pairs = Vec::with_capacity(items.len());
    for item in items {
        let Value::Object(pair) = item else {
            return Err(LlmError::Invalid("each diagnosis must be an object".into()));
        };
        pairs.push(DiagnosisPair {
            diagnosis: string_field(pair, "diagnosis")?,
            prescription: string_field(pair, "prescription")?,
        });
    }
    Ok(DiagnosisResult {
        pairs,
        patched_heuristic: string_field(&obj, "patched_heuristic")?,
        primitive_set_id: string_field(&obj, "motion_primitives_id")?,
    })
}

/// Deterministic token estimate: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub limit: usize,
    pub consumed: usize,
}

impl TokenBudget {
    pub fn new(limit: usize) -> Self {
        Self { limit, consumed: 0 }
    }

    pub fn exhausted(&self) -> bool {
        self.consumed >= self.limit
    }

    pub fn remaining(&self) -> usize {
        self.limit.saturating_sub(self.consumed)
    }

    /// Whether a prompt of `tokens` may still be sent.
    pub fn can_afford(&self, tokens: usize) -> bool {
        !self.exhausted() && tokens <= self.remaining()
    }

    pub fn consume(&mut self, tokens: usize) {
        self.consumed += tokens;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Total tokens reported by the provider, if any.
    pub reported_tokens: Option<usize>,
}

pub trait LlmBackend: Send {
    fn complete(&mut self, system: &str, user: &str, params: &LlmParams) -> Result<Completion, LlmError>;

    /// Whether provider-reported token counts may replace the estimate.
    fn reports_usage(&self) -> bool {
        false
    }
}

/// Replays a fixed list of responses in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MockBackend {
    responses: Vec<String>,
    served: usize,
}

impl MockBackend {
    pub fn new(responses: Vec<String>) -> Self {
        Self { responses, served: 0 }
    }

    /// Parses a JSONL script. A line holding a JSON string literal yields the
    /// decoded string; any other non-blank line is used verbatim.
    pub fn from_script(text: &str) -> Self {
        let responses = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| match serde_json::from_str::<String>(l) {
                Ok(s) => s,
                Err(_) => l.to_string(),
            })
            .collect();
        Self::new(responses)
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::from_script(&std::fs::read_to_string(path)?))
    }

    pub fn served(&self) -> usize {
        self.served
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - self.served
    }
}

impl LlmBackend for MockBackend {
    fn complete(&mut self, _system: &str, _user: &str, _params: &LlmParams) -> Result<Completion, LlmError> {
        let text = self
            .responses
            .get(self.served)
            .cloned()
            .ok_or(LlmError::ScriptExhausted { served: self.served })?;
        self.served += 1;
        Ok(Completion {
            text,
            reported_tokens: None,
        })
    }
}

/// OpenAI-compatible chat-completion endpoint.
pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
    max_retries: u32,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent,
            max_retries: 3,
        }
    }

    /// Reads the API key from `PLANNER_DOCTOR_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self, LlmError> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.is_empty() => Ok(Self::new(endpoint, key)),
            _ => Err(LlmError::Config(format!("environment variable {API_KEY_ENV} is not set"))),
        }
    }

    fn request_once(&self, body: &Value) -> Result<Completion, LlmError> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| {
                let retriable = match &e {
                    ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
                    ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed => true,
                    _ => false,
                };
                LlmError::Transport {
                    message: e.to_string(),
                    retriable,
                }
            })?;
        let json: Value = response.body_mut().read_json().map_err(|e| LlmError::Transport {
            message: format!("unreadable response body: {e}"),
            retriable: false,
        })?;
        let text = json["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::Invalid("chat completion without message content".into()))?
            .to_string();
        let reported_tokens = json["usage"]["total_tokens"].as_u64().map(|n| n as usize);
        Ok(Completion { text, reported_tokens })
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&mut self, system: &str, user: &str, params: &LlmParams) -> Result<Completion, LlmError> {
        let body = serde_json::json!({
            "model": params.model_name,
            "temperature": params.temperature,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut attempt = 0;
        loop {
            match self.request_once(&body) {
                Err(LlmError::Transport { retriable: true, message }) if attempt < self.max_retries => {
                    attempt += 1;
                    tracing::warn!(attempt, %message, "retrying chat completion");
                    std::thread::sleep(Duration::from_millis(500 << attempt));
                }
                other => return other,
            }
        }
    }

    fn reports_usage(&self) -> bool {
        true
    }
}

/// Sends the bundle to the backend and charges the budget.
pub fn query(
    bundle: &PromptBundle,
    params: &LlmParams,
    backend: &mut dyn LlmBackend,
    budget: &mut TokenBudget,
) -> Result<String, LlmError> {
    let user = bundle.assemble();
    let prompt_tokens = estimate_tokens(&bundle.system) + estimate_tokens(&user);
    if !budget.can_afford(prompt_tokens) {
        return Err(LlmError::BudgetExceeded {
            needed: prompt_tokens,
            remaining: budget.remaining(),
        });
    }
    let completion = backend.complete(&bundle.system, &user, params)?;
    let estimated = prompt_tokens + estimate_tokens(&completion.text);
    let charged = match completion.reported_tokens {
        Some(n) if backend.reports_usage() && n > 0 => n,
        _ => estimated,
    };
    budget.consume(charged.max(1));
    Ok(completion.text)
}

//! Generative backends that turn a rendered prompt into a judgment.

mod parse;
mod remote;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_judgment, Judgment, ParseFailure};
pub use remote::{RateLimiter, RemoteBackend, RemoteConfig, RequestStyle, Sleeper, ThreadSleeper};

use crate::sha256_hex;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("authentication rejected (status {status})")]
    Auth { status: u16 },
    #[error("request timed out")]
    Timeout,
    #[error("non-retryable status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("replay log has no completion for prompt {sha256}")]
    ReplayMiss { sha256: String },
    #[error("response format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl GenParams {
    /// Deterministic settings used for scoring.
    pub fn scoring(model_id: impl Into<String>) -> Self {
        GenParams {
            temperature: 0.0,
            max_tokens: 32,
            model_id: model_id.into(),
        }
    }

    pub fn critic(model_id: impl Into<String>) -> Self {
        GenParams {
            temperature: 1.0,
            max_tokens: 2048,
            model_id: model_id.into(),
        }
    }
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams::scoring("mock")
    }
}

pub trait GlmBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, GlmError>;
}

impl<T: GlmBackend + ?Sized> GlmBackend for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, GlmError> {
        (**self).complete(prompt, params)
    }
}

impl<T: GlmBackend + ?Sized> GlmBackend for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, GlmError> {
        (**self).complete(prompt, params)
    }
}

/// Echoes the judgment of the first retrieved example, making the whole
/// pipeline a 1-nearest-neighbour classifier.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

fn example_one() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"Example 1:\nAnswer: [^\n]*\nJudgment: ([^\n]*)").expect("valid regex")
    })
}

impl GlmBackend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, prompt: &str, _params: &GenParams) -> Result<String, GlmError> {
        let judgment = example_one()
            .captures(prompt)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_else(|| crate::corpus::INCORRECT.to_string());
        Ok(format!("<judgment>{judgment}</judgment>"))
    }
}

/// One logged request/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GenParams>,
    pub response: String,
}

pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

/// Serves completions recorded in a JSONL exchange log.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_exchanges(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        ReplayBackend {
            responses: exchanges
                .into_iter()
                .map(|e| (e.prompt_sha256, e.response))
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GlmError> {
        let text = fs::read_to_string(path)?;
        let mut exchanges = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let e: Exchange = serde_json::from_str(line)
                .map_err(|e| GlmError::Format(format!("replay line {}: {e}", i + 1)))?;
            exchanges.push(e);
        }
        Ok(ReplayBackend::from_exchanges(exchanges))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl GlmBackend for ReplayBackend {
    fn id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, prompt: &str, _params: &GenParams) -> Result<String, GlmError> {
        let sha256 = prompt_hash(prompt);
        self.responses
            .get(&sha256)
            .cloned()
            .ok_or(GlmError::ReplayMiss { sha256 })
    }
}

pub(crate) fn default_timeout() -> Duration {
    Duration::from_secs(60)
}

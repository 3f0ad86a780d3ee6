use std::env;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{default_timeout, prompt_hash, Exchange, GenParams, GlmBackend, GlmError};

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestStyle {
    /// `{"model", "prompt", "temperature", "max_tokens"}`
    Prompt,
    /// `{"model", "messages": [{"role": "user", "content"}], ...}`
    Messages,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Dot path to the completion text in the response JSON, e.g.
    /// `choices.0.message.content`. `None` returns the body verbatim.
    pub response_path: Option<String>,
    pub request_style: RequestStyle,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub requests_per_second: Option<f64>,
    pub max_in_flight: usize,
    pub log_path: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            response_path: None,
            request_style: RequestStyle::Prompt,
            timeout: default_timeout(),
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            requests_per_second: None,
            max_in_flight: 4,
            log_path: None,
        }
    }

    /// Read `RAGSCORE_GLM_ENDPOINT` (required), `RAGSCORE_GLM_API_KEY`,
    /// `RAGSCORE_GLM_RESPONSE_PATH`, `RAGSCORE_GLM_REQUEST_STYLE`
    /// (`prompt`|`messages`), `RAGSCORE_GLM_RPS`, `RAGSCORE_GLM_MAX_IN_FLIGHT`
    /// and `RAGSCORE_GLM_LOG`.
    pub fn from_env() -> Result<Self, GlmError> {
        let endpoint = env::var("RAGSCORE_GLM_ENDPOINT")
            .map_err(|_| GlmError::Config("RAGSCORE_GLM_ENDPOINT is not set".into()))?;
        let mut c = RemoteConfig::new(endpoint);
        c.api_key = env::var("RAGSCORE_GLM_API_KEY").ok();
        c.response_path = env::var("RAGSCORE_GLM_RESPONSE_PATH")
            .ok()
            .filter(|s| !s.is_empty());
        if let Ok(style) = env::var("RAGSCORE_GLM_REQUEST_STYLE") {
            c.request_style = match style.to_ascii_lowercase().as_str() {
                "prompt" => RequestStyle::Prompt,
                "messages" | "chat" => RequestStyle::Messages,
                other => return Err(GlmError::Config(format!("unknown request style {other:?}"))),
            };
        }
        if let Ok(v) = env::var("RAGSCORE_GLM_RPS") {
            c.requests_per_second = Some(
                v.parse()
                    .map_err(|_| GlmError::Config(format!("bad RAGSCORE_GLM_RPS {v:?}")))?,
            );
        }
        if let Ok(v) = env::var("RAGSCORE_GLM_MAX_IN_FLIGHT") {
            c.max_in_flight = v
                .parse()
                .map_err(|_| GlmError::Config(format!("bad RAGSCORE_GLM_MAX_IN_FLIGHT {v:?}")))?;
        }
        c.log_path = env::var_os("RAGSCORE_GLM_LOG").map(PathBuf::from);
        Ok(c)
    }
}

struct LimiterState {
    tokens: f64,
    last: Instant,
    in_flight: usize,
}

/// Token bucket plus a cap on concurrent requests.
pub struct RateLimiter {
    rps: Option<f64>,
    max_in_flight: usize,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.limiter.state.lock().expect("limiter lock");
        s.in_flight -= 1;
        self.limiter.cv.notify_all();
    }
}

impl RateLimiter {
    pub fn new(requests_per_second: Option<f64>, max_in_flight: usize) -> Self {
        RateLimiter {
            rps: requests_per_second.filter(|r| *r > 0.0),
            max_in_flight: max_in_flight.max(1),
            state: Mutex::new(LimiterState {
                tokens: 1.0,
                last: Instant::now(),
                in_flight: 0,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().expect("limiter lock");
        loop {
            if s.in_flight >= self.max_in_flight {
                s = self.cv.wait(s).expect("limiter lock");
                continue;
            }
            let Some(rps) = self.rps else { break };
            let now = Instant::now();
            s.tokens =
                (s.tokens + now.duration_since(s.last).as_secs_f64() * rps).min(rps.max(1.0));
            s.last = now;
            if s.tokens >= 1.0 {
                s.tokens -= 1.0;
                break;
            }
            let wait = Duration::from_secs_f64((1.0 - s.tokens) / rps);
            s = self.cv.wait_timeout(s, wait).expect("limiter lock").0;
        }
        s.in_flight += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().expect("limiter lock").in_flight
    }
}

/// HTTP completion client with bounded retries and rate limiting.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    sleeper: Arc<dyn Sleeper>,
    log: Option<Mutex<File>>,
}

enum Attempt {
    Done(String),
    Retry(String),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GlmError> {
        Self::with_sleeper(config, Arc::new(ThreadSleeper))
    }

    pub fn with_sleeper(config: RemoteConfig, sleeper: Arc<dyn Sleeper>) -> Result<Self, GlmError> {
        if config.max_attempts == 0 {
            return Err(GlmError::Config("max_attempts must be at least 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let log = match &config.log_path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(p)?,
            )),
            None => None,
        };
        let limiter = RateLimiter::new(config.requests_per_second, config.max_in_flight);
        Ok(RemoteBackend {
            config,
            agent,
            limiter,
            sleeper,
            log,
        })
    }

    pub fn from_env() -> Result<Self, GlmError> {
        Self::new(RemoteConfig::from_env()?)
    }

    fn request_body(&self, prompt: &str, params: &GenParams) -> Value {
        match self.config.request_style {
            RequestStyle::Prompt => json!({
                "model": params.model_id,
                "prompt": prompt,
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            }),
            RequestStyle::Messages => json!({
                "model": params.model_id,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            }),
        }
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, GlmError> {
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(GlmError::Timeout),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(GlmError::Timeout)
            }
            Err(
                e
                @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound),
            ) => return Ok(Attempt::Retry(e.to_string())),
            Err(e) => return Err(GlmError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(GlmError::Timeout),
            Err(e) => return Ok(Attempt::Retry(format!("reading body: {e}"))),
        };
        match status {
            200..=299 => Ok(Attempt::Done(text)),
            401 | 403 => Err(GlmError::Auth { status }),
            429 | 500..=599 => Ok(Attempt::Retry(format!("status {status}"))),
            _ => Err(GlmError::Status { status, body: text }),
        }
    }

    fn extract(&self, body: String) -> Result<String, GlmError> {
        let Some(path) = &self.config.response_path else {
            return Ok(body);
        };
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| GlmError::Format(format!("response is not JSON: {e}")))?;
        let mut cur = &value;
        for part in path.split('.') {
            let next = match part.parse::<usize>() {
                Ok(i) => cur.get(i),
                Err(_) => cur.get(part),
            };
            cur =
                next.ok_or_else(|| GlmError::Format(format!("response has no field {path:?}")))?;
        }
        match cur {
            Value::String(s) => Ok(s.clone()),
            other => Err(GlmError::Format(format!(
                "field {path:?} is not a string: {other}"
            ))),
        }
    }

    fn record(&self, prompt: &str, params: &GenParams, response: &str) -> Result<(), GlmError> {
        if let Some(log) = &self.log {
            let e = Exchange {
                prompt_sha256: prompt_hash(prompt),
                prompt: Some(prompt.to_string()),
                params: Some(params.clone()),
                response: response.to_string(),
            };
            let line = serde_json::to_string(&e).map_err(|e| GlmError::Format(e.to_string()))?;
            let mut f = log.lock().expect("log lock");
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl GlmBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.config.endpoint)
    }

    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, GlmError> {
        let body = self.request_body(prompt, params);
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                let backoff = self.config.base_backoff * 2u32.pow(attempt - 2);
                log::debug!("retrying after {backoff:?}: {last}");
                self.sleeper.sleep(backoff);
            }
            match self.attempt(&body)? {
                Attempt::Done(text) => {
                    let out = self.extract(text)?;
                    self.record(prompt, params, &out)?;
                    return Ok(out);
                }
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(GlmError::RetriesExhausted {
            attempts: self.config.max_attempts,
            last,
        })
    }
}

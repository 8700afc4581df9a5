//! Diversifier backends: recorded replies and an HTTP chat-completion endpoint.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::diversify::{DiversifierRequest, PromptAnswer, DEFAULT_DEMONSTRATIONS};

/// Environment variable holding the endpoint credential.
pub const CREDENTIAL_ENV: &str = "EMBFORGE_DIVERSIFIER_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("non-conforming reply: {0}")]
    NonConforming(String),
    #[error("no recorded reply {0}")]
    MissingReply(PathBuf),
    #[error("unsupported request: {0}")]
    Unsupported(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Anything that can answer a [`DiversifierRequest`]. Implementations must be
/// safe to call from several threads at once.
pub trait DiversifierClient: Send + Sync {
    fn complete(&self, req: &DiversifierRequest) -> Result<PromptAnswer, ClientError>;

    /// Demonstrations to attach to each request (2 or 3).
    fn demonstrations(&self) -> usize {
        DEFAULT_DEMONSTRATIONS
    }
}

/// Extracts `{"prompt", "answer"}` from model text, tolerating a code fence.
pub fn parse_reply_text(text: &str) -> Result<PromptAnswer, ClientError> {
    let mut t = text.trim();
    if let Some(inner) = t.strip_prefix("```") {
        let inner = inner.strip_prefix("json").unwrap_or(inner);
        t = inner.strip_suffix("```").unwrap_or(inner).trim();
    }
    serde_json::from_str(t).map_err(|e| ClientError::NonConforming(e.to_string()))
}

/// Replies recorded as `{request key}.json` files in one directory.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    dir: PathBuf,
    demonstrations: usize,
}

impl ReplayClient {
    pub fn new(dir: impl Into<PathBuf>, demonstrations: usize) -> Self {
        Self {
            dir: dir.into(),
            demonstrations,
        }
    }

    pub fn reply_path(&self, req: &DiversifierRequest) -> PathBuf {
        self.dir.join(format!("{}.json", req.key()))
    }

    /// Stores `reply` as the recorded answer to `req`.
    pub fn record(&self, req: &DiversifierRequest, reply: &PromptAnswer) -> Result<PathBuf, ClientError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ClientError::Io { path, source }
        };
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.reply_path(req);
        let body = serde_json::to_string_pretty(reply).expect("reply serializes");
        fs::write(&path, body).map_err(io_err(&path))?;
        Ok(path)
    }
}

impl DiversifierClient for ReplayClient {
    fn complete(&self, req: &DiversifierRequest) -> Result<PromptAnswer, ClientError> {
        let path = self.reply_path(req);
        match fs::read_to_string(&path) {
            Ok(text) => parse_reply_text(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(ClientError::MissingReply(path)),
            Err(source) => Err(ClientError::Io { path, source }),
        }
    }

    fn demonstrations(&self) -> usize {
        self.demonstrations
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct RateLimiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a RateLimiter);

impl RateLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpClientConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub demonstrations: usize,
}

/// Client for an OpenAI-style chat-completions endpoint.
pub struct HttpClient {
    cfg: HttpClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl HttpClient {
    /// Reads the credential from [`CREDENTIAL_ENV`].
    pub fn new(cfg: HttpClientConfig) -> Self {
        let api_key = std::env::var(CREDENTIAL_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: HttpClientConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let limiter = RateLimiter::new(cfg.max_in_flight);
        Self {
            cfg,
            api_key,
            agent,
            limiter,
        }
    }

    pub fn request_body(&self, req: &DiversifierRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": req.system_prompt})];
        for d in &req.demonstrations {
            messages.push(json!({"role": "user", "content": d.input}));
            let out = serde_json::to_string(&d.output).expect("demonstration serializes");
            messages.push(json!({"role": "assistant", "content": out}));
        }
        messages.push(json!({"role": "user", "content": req.user_message()}));
        json!({
            "model": self.cfg.model,
            "seed": req.seed,
            "temperature": 0.7,
            "messages": messages,
        })
    }
}

impl DiversifierClient for HttpClient {
    fn complete(&self, req: &DiversifierRequest) -> Result<PromptAnswer, ClientError> {
        let body = self.request_body(req);
        let _permit = self.limiter.acquire();
        let mut call = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => ClientError::Timeout,
            other => ClientError::Transport(other.to_string()),
        };
        let reply: Value = call
            .send_json(&body)
            .map_err(map_err)?
            .into_body()
            .read_json()
            .map_err(|e| ClientError::NonConforming(e.to_string()))?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ClientError::NonConforming("missing choices[0].message.content".into()))?;
        parse_reply_text(content)
    }

    fn demonstrations(&self) -> usize {
        self.cfg.demonstrations
    }
}

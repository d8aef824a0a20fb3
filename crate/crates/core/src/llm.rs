//! Blocking client for OpenAI-style chat completion endpoints.
//!
//! Request body: `{"model", "messages": [system, user], "temperature": 0}`.
//! The reply text is `choices[0].message.content`. Transport errors, 429 and
//! 5xx responses are retried with exponential backoff; other 4xx responses
//! fail immediately.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "STRANK_API_KEY";
pub const SYSTEM_LINE: &str = "You are a precise assistant for document summarization and ranking.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    content: String,
}

pub struct LlmClient {
    agent: ureq::Agent,
    cfg: RemoteConfig,
    api_key: Option<String>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("url", &self.cfg.url)
            .field("model", &self.cfg.model)
            .finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, cfg, api_key }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": SYSTEM_LINE},
                {"role": "user", "content": prompt},
            ],
            "temperature": 0,
        })
    }

    /// Sends one prompt, retrying up to `max_retries` times.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let body = self.request_body(prompt);
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(msg)) => return Err(Error::BackendUnavailable(msg)),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("remote attempt {} failed: {msg}", attempt + 1);
                    last_err = msg;
                }
            }
        }
        Err(Error::BackendUnavailable(format!(
            "{} after {} retries: {last_err}",
            self.cfg.url, self.cfg.max_retries
        )))
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut req = self.agent.post(&self.cfg.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(format!("HTTP {status} from {}", self.cfg.url)));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Retry(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Attempt::Retry("response has no choices".into()))
    }

    /// Opens a TCP connection to the endpoint's host without sending a request.
    pub fn probe(&self) -> Result<()> {
        let uri: ureq::http::Uri = self
            .cfg
            .url
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("remote url `{}`: {e}", self.cfg.url)))?;
        let host = uri
            .host()
            .ok_or_else(|| Error::InvalidConfig(format!("remote url `{}` has no host", self.cfg.url)))?;
        let port = uri
            .port_u16()
            .unwrap_or(if uri.scheme_str() == Some("https") { 443 } else { 80 });
        use std::net::ToSocketAddrs;
        let addrs = (host, port)
            .to_socket_addrs()
            .map_err(|e| Error::BackendUnavailable(format!("{host}:{port}: {e}")))?;
        for addr in addrs {
            if std::net::TcpStream::connect_timeout(&addr, Duration::from_secs(3)).is_ok() {
                return Ok(());
            }
        }
        Err(Error::BackendUnavailable(format!("{host}:{port} unreachable")))
    }
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

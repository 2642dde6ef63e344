//! Minimal blocking JSON-over-HTTP client shared by the remote providers.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Prefix of the environment variables holding provider API keys,
/// e.g. `TCRA_API_KEY_OPENAI`.
pub const API_KEY_ENV_PREFIX: &str = "TCRA_API_KEY_";

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("HTTP {status} from {endpoint}: {body}")]
    Status { endpoint: String, status: u16, body: String },
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("invalid response from {endpoint}: {message}")]
    InvalidResponse { endpoint: String, message: String },
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
}

impl HttpError {
    pub fn status(&self) -> Option<u16> {
        match self {
            HttpError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    /// Transport failures, throttling and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            HttpError::Transport { .. } => true,
            HttpError::InvalidResponse { .. } | HttpError::MissingApiKey(_) => false,
        }
    }

    pub fn is_auth(&self) -> bool {
        matches!(self.status(), Some(401 | 403)) || matches!(self, HttpError::MissingApiKey(_))
    }
}

/// Where a remote provider lives and how to authenticate to it.
///
/// The key itself is never stored; `api_key_env` names the environment
/// variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Endpoint {
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Endpoint { url: url.into(), timeout_secs: default_timeout_secs(), ..Default::default() }
    }

    fn api_key(&self) -> Result<Option<String>, HttpError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| HttpError::MissingApiKey(var.clone())),
        }
    }

    pub fn post_json(&self, body: &Value) -> Result<Value, HttpError> {
        let key = self.api_key()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&self.url).header("Content-Type", "application/json");
        for (k, v) in &self.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        if let Some(key) = key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let transport = |e: ureq::Error| HttpError::Transport { endpoint: self.url.clone(), message: e.to_string() };
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(HttpError::Status { endpoint: self.url.clone(), status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::InvalidResponse {
            endpoint: self.url.clone(),
            message: e.to_string(),
        })
    }

    pub fn invalid(&self, message: impl Into<String>) -> HttpError {
        HttpError::InvalidResponse { endpoint: self.url.clone(), message: message.into() }
    }
}

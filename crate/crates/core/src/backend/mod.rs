//! Chat backends: a live chat-completions client and a scripted mock.

mod live;
mod mock;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::LiveClient;
pub use mock::{MatchKey, MockEntry, MockReply, MockScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

/// Routing hint for the mock. Never sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestTag {
    pub template_id: String,
    pub trial_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_name: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: Option<u32>,
    pub tag: Option<RequestTag>,
}

impl ChatRequest {
    /// A request with the whole prompt as one user message.
    pub fn user(model_name: &str, temperature: f64, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest {
            model_name: model_name.to_string(),
            temperature,
            messages: vec![ChatMessage {
                role: MessageRole::User,
                content: prompt.into(),
            }],
            max_tokens: None,
            tag: None,
        }
    }

    pub fn with_tag(mut self, template_id: &str, trial_index: usize) -> ChatRequest {
        self.tag = Some(RequestTag {
            template_id: template_id.to_string(),
            trial_index,
        });
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::Protocol("request has no messages".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Protocol(format!(
                "temperature {} must be a finite value >= 0",
                self.temperature
            )));
        }
        Ok(())
    }

    /// All message contents joined; what prefix matching looks at.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(s: Option<&str>) -> FinishReason {
        match s {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FinishReason::Stop => "stop",
            FinishReason::Length => "length",
            FinishReason::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    /// First completion's message content, verbatim. May be empty.
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LiveHttp,
    ScriptedMock,
}

/// Backend settings. Everything here goes into the run's config hash; the
/// API key itself never does, only the name of the variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub api_key_env_var: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Delay before retry i is `retry_backoff_ms[min(i, len - 1)]`.
    pub retry_backoff_ms: Vec<u64>,
    pub max_concurrency: usize,
    pub requests_per_second: Option<f64>,
    /// Mock only; `None` means the built-in script.
    pub fixtures_dir: Option<PathBuf>,
}

impl BackendConfig {
    pub fn mock() -> BackendConfig {
        BackendConfig {
            kind: BackendKind::ScriptedMock,
            endpoint_url: None,
            api_key_env_var: None,
            timeout_ms: 120_000,
            max_retries: 3,
            retry_backoff_ms: vec![1_000, 4_000, 16_000],
            max_concurrency: 8,
            requests_per_second: None,
            fixtures_dir: None,
        }
    }

    pub fn live(endpoint_url: &str, api_key_env_var: &str) -> BackendConfig {
        BackendConfig {
            kind: BackendKind::LiveHttp,
            endpoint_url: Some(endpoint_url.to_string()),
            api_key_env_var: Some(api_key_env_var.to_string()),
            ..BackendConfig::mock()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn backoff(&self, retry: usize) -> Duration {
        match self.retry_backoff_ms.as_slice() {
            [] => Duration::ZERO,
            s => Duration::from_millis(s[retry.min(s.len() - 1)]),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.kind == BackendKind::LiveHttp {
            match &self.endpoint_url {
                Some(u) if u.starts_with("http://") || u.starts_with("https://") => {}
                Some(u) => return Err(BackendError::Config(format!("endpoint {u:?} is not an http(s) URL"))),
                None => return Err(BackendError::Config("live backend needs an endpoint URL".into())),
            }
            if self.api_key_env_var.as_deref().is_none_or(str::is_empty) {
                return Err(BackendError::Config("live backend needs an API key variable name".into()));
            }
            if self.timeout_ms == 0 {
                return Err(BackendError::Config("timeout must be positive".into()));
            }
            if self.max_concurrency == 0 {
                return Err(BackendError::Config("max_concurrency must be at least 1".into()));
            }
            if let Some(r) = self.requests_per_second {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(BackendError::Config(format!("requests_per_second {r} must be positive")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("response carried no completions")]
    EmptyChoice,
    #[error("no mock fixture matches template {template:?}")]
    NoFixture { template: Option<String> },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Recorded in every transcript.
    fn id(&self) -> String;

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// Builds the backend described by `config`. A live backend reads its API
/// key from the environment here.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn ChatBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::ScriptedMock => {
            let script = match &config.fixtures_dir {
                Some(dir) => MockScript::load_dir(dir)?,
                None => MockScript::builtin(),
            };
            Arc::new(script)
        }
        BackendKind::LiveHttp => Arc::new(LiveClient::from_config(config)?),
    })
}

/// One-shot convenience: build the backend and run a single request.
pub async fn complete(config: &BackendConfig, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
    request.validate()?;
    build_backend(config)?.complete(request).await
}

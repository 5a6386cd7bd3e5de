//! HTTP chat-completions client with bounded retries, a concurrency cap and
//! a token-bucket rate limit shared by every task using the client.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};
use tokio::time::Instant;

use super::{BackendConfig, BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, FinishReason, Usage};

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    // null content is legal on the wire and means an empty completion
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Decodes a chat-completions body. Content is returned exactly as decoded.
fn decode_body(body: &[u8]) -> Result<ChatResponse, BackendError> {
    let wire: WireResponse =
        serde_json::from_slice(body).map_err(|e| BackendError::Protocol(format!("malformed response body: {e}")))?;
    let Some(first) = wire.choices.into_iter().next() else {
        return Err(BackendError::EmptyChoice);
    };
    Ok(ChatResponse {
        content: first.message.content.unwrap_or_default(),
        finish_reason: FinishReason::from_wire(first.finish_reason.as_deref()),
        usage: wire.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
    })
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> TokenBucket {
        let capacity = rate.max(1.0);
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    async fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().await;
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.rate;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.rate)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

enum Attempt {
    Done(ChatResponse),
    Retry(BackendError),
    Fatal(BackendError),
}

pub struct LiveClient {
    http: reqwest::Client,
    endpoint: String,
    api_key: String,
    max_retries: u32,
    config: BackendConfig,
    permits: Arc<Semaphore>,
    bucket: Option<TokenBucket>,
}

impl LiveClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_config(config: &BackendConfig) -> Result<LiveClient, BackendError> {
        config.validate()?;
        let var = config.api_key_env_var.as_deref().unwrap_or_default();
        let api_key = std::env::var(var)
            .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?;
        let http = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(LiveClient {
            http,
            endpoint: config.endpoint_url.clone().unwrap_or_default(),
            api_key,
            max_retries: config.max_retries,
            config: config.clone(),
            permits: Arc::new(Semaphore::new(config.max_concurrency.max(1))),
            bucket: config.requests_per_second.map(TokenBucket::new),
        })
    }

    async fn attempt(&self, request: &ChatRequest) -> Attempt {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        if let Some(bucket) = &self.bucket {
            bucket.acquire().await;
        }
        let body = WireRequest {
            model: &request.model_name,
            temperature: request.temperature,
            messages: &request.messages,
            max_tokens: request.max_tokens,
        };
        let sent = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await;
        let response = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout { attempts: 0 }),
            Err(e) => return Attempt::Fatal(BackendError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let bytes = match response.bytes().await {
            Ok(b) => b,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout { attempts: 0 }),
            Err(e) => return Attempt::Fatal(BackendError::Transport(e.to_string())),
        };
        match status {
            200..=299 => match decode_body(&bytes) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(BackendError::Auth(status)),
            429 => Attempt::Retry(BackendError::RateLimited { attempts: 0 }),
            500..=599 => Attempt::Retry(http_error(status, &bytes)),
            _ => Attempt::Fatal(http_error(status, &bytes)),
        }
    }
}

fn http_error(status: u16, body: &[u8]) -> BackendError {
    let mut body = String::from_utf8_lossy(body).into_owned();
    if body.len() > 500 {
        let mut cut = 500;
        while !body.is_char_boundary(cut) {
            cut -= 1;
        }
        body.truncate(cut);
    }
    BackendError::Http { status, body }
}

#[async_trait]
impl ChatBackend for LiveClient {
    fn id(&self) -> String {
        format!("live:{}", self.endpoint)
    }

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let err = match self.attempt(request).await {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => e,
            };
            if attempts > self.max_retries {
                return Err(match err {
                    BackendError::RateLimited { .. } => BackendError::RateLimited { attempts },
                    BackendError::Timeout { .. } => BackendError::Timeout { attempts },
                    other => other,
                });
            }
            let delay = self.config.backoff(attempts as usize - 1);
            tracing::warn!(attempt = attempts, ?delay, error = %err, "transient backend failure, retrying");
            tokio::time::sleep(delay).await;
        }
    }
}

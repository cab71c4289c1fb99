//! Blocking client for OpenAI-compatible `/v1/embeddings` and
//! `/v1/chat/completions` endpoints.

use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "ERA_API_KEY";
/// Environment variable holding the endpoint root, e.g. `https://api.example.com`.
pub const API_BASE_ENV: &str = "ERA_API_BASE";

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// Exponential backoff: `base * factor^(attempt - 1)` between attempts.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base * self.factor.saturating_pow(attempt.saturating_sub(1))
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock();
        while *permits == 0 {
            self.cond.wait(&mut permits);
        }
        *permits -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock() += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<usize>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// Token counts as reported by the provider.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
pub struct ChatUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub struct OpenAiClient {
    base: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    retry: RetryPolicy,
    in_flight: Semaphore,
}

impl std::fmt::Debug for OpenAiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiClient")
            .field("base", &self.base)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl OpenAiClient {
    pub fn new(base: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            api_key,
            http,
            retry: RetryPolicy::default(),
            in_flight: Semaphore::new(DEFAULT_MAX_IN_FLIGHT),
        })
    }

    /// Resolves the endpoint root (`endpoint`, or `ERA_API_BASE` when empty)
    /// and reads the bearer token from `api_key_env`.
    pub fn from_env(endpoint: &str, api_key_env: &str) -> Result<Self> {
        let base = if endpoint.is_empty() {
            std::env::var(API_BASE_ENV).map_err(|_| Error::Config(format!("{API_BASE_ENV} is not set")))?
        } else {
            endpoint.to_string()
        };
        Self::new(base, std::env::var(api_key_env).ok())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.in_flight = Semaphore::new(n);
        self
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{}", self.base, path);
        let _permit = self.in_flight.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.http.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let (message, retryable) = match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .json::<R>()
                        .map_err(|e| Error::provider(format!("malformed response from {url}: {e}"), attempt, false));
                }
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    let retryable = status.is_server_error() || status.as_u16() == 429;
                    (format!("{url} returned {status}: {}", text.trim()), retryable)
                }
                Err(e) => (format!("request to {url} failed: {e}"), true),
            };
            if !retryable || attempt >= self.retry.max_attempts {
                return Err(Error::provider(message, attempt, retryable));
            }
            log::warn!("{message}; retrying (attempt {attempt})");
            std::thread::sleep(self.retry.delay(attempt));
        }
    }

    /// Embeds `inputs` in one request; vectors come back in input order.
    pub fn embeddings(&self, model: &str, inputs: &[&str]) -> Result<Vec<Vec<f32>>> {
        let resp: EmbeddingsResponse = self.post("/v1/embeddings", &EmbeddingsRequest { model, input: inputs })?;
        if resp.data.len() != inputs.len() {
            return Err(Error::provider(
                format!(
                    "embeddings response has {} entries for {} inputs",
                    resp.data.len(),
                    inputs.len()
                ),
                1,
                false,
            ));
        }
        let mut out = vec![Vec::new(); inputs.len()];
        for (pos, datum) in resp.data.into_iter().enumerate() {
            let i = datum.index.unwrap_or(pos);
            if i >= out.len() {
                return Err(Error::provider(format!("embedding index {i} out of range"), 1, false));
            }
            out[i] = datum.embedding;
        }
        Ok(out)
    }

    /// Single-turn chat completion.
    pub fn chat(&self, model: &str, prompt: &str, max_tokens: Option<usize>) -> Result<(String, Option<ChatUsage>)> {
        let resp: ChatResponse = self.post(
            "/v1/chat/completions",
            &ChatRequest {
                model,
                messages: [ChatMessage {
                    role: "user",
                    content: prompt,
                }],
                max_tokens,
            },
        )?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::provider("chat response has no content", 1, false))?;
        Ok((text, resp.usage))
    }
}

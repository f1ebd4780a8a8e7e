//! HTTP completion and embedding clients speaking the common JSON wire
//! shapes: `POST .../chat/completions` and `POST .../embeddings`. Transport
//! is a trait so tests replay recorded responses without a socket.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use crate::backends::{BackendError, CompletionClient, CompletionParams, TextEmbedder};
use crate::numeric;

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One POST of a JSON body. Implementations return `Err` only for
/// transport-level failures (connect, timeout); any HTTP status is `Ok`.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
        bearer: Option<&str>,
    ) -> Result<HttpResponse, String>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Issue a request with exponential backoff on transport errors, 429 and
/// 5xx. Other statuses return immediately.
fn post_with_retry(
    transport: &dyn Transport,
    retry: &RetryPolicy,
    url: &str,
    body: &serde_json::Value,
    bearer: Option<&str>,
) -> Result<HttpResponse, BackendError> {
    let attempts = retry.max_attempts.max(1);
    let mut last_failure = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = retry.base_delay * 2u32.saturating_pow(attempt - 1);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
        }
        let started = Instant::now();
        match transport.post_json(url, body, bearer) {
            Ok(resp) => {
                log::debug!(
                    "POST {url} -> {} in {:?} (attempt {})",
                    resp.status,
                    started.elapsed(),
                    attempt + 1
                );
                if (200..300).contains(&resp.status) {
                    return Ok(resp);
                }
                if resp.status == 429 || resp.status >= 500 {
                    last_failure = format!("status {}", resp.status);
                    continue;
                }
                return Err(BackendError::Unavailable {
                    detail: format!("{url} answered status {}", resp.status),
                });
            }
            Err(e) => {
                log::debug!(
                    "POST {url} transport failure in {:?} (attempt {}): {e}",
                    started.elapsed(),
                    attempt + 1
                );
                last_failure = e;
            }
        }
    }
    Err(BackendError::Unavailable {
        detail: format!("{url} still failing after {attempts} attempts: {last_failure}"),
    })
}

/// Extract the first choice's message content from a chat completion body.
pub fn parse_chat_response(body: &str) -> Result<String, BackendError> {
    #[derive(Deserialize)]
    struct Message {
        content: String,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: Message,
    }
    #[derive(Deserialize)]
    struct ChatBody {
        choices: Vec<Choice>,
    }
    let parsed: ChatBody = serde_json::from_str(body).map_err(|e| {
        BackendError::MalformedResponse {
            detail: format!("chat body: {e}"),
        }
    })?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| BackendError::MalformedResponse {
            detail: "chat body has no choices".to_string(),
        })
}

/// Extract embeddings ordered by their `index` field and L2-normalize each.
pub fn parse_embeddings_response(
    body: &str,
    expected: usize,
) -> Result<Vec<Vec<f32>>, BackendError> {
    #[derive(Deserialize)]
    struct Row {
        index: usize,
        embedding: Vec<f32>,
    }
    #[derive(Deserialize)]
    struct EmbedBody {
        data: Vec<Row>,
    }
    let parsed: EmbedBody = serde_json::from_str(body).map_err(|e| {
        BackendError::MalformedResponse {
            detail: format!("embeddings body: {e}"),
        }
    })?;
    if parsed.data.len() != expected {
        return Err(BackendError::MalformedResponse {
            detail: format!(
                "asked for {expected} embeddings, response carries {}",
                parsed.data.len()
            ),
        });
    }
    let mut rows = parsed.data;
    rows.sort_by_key(|r| r.index);
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.embedding.is_empty() {
            return Err(BackendError::MalformedResponse {
                detail: format!("embedding {} is empty", row.index),
            });
        }
        let f64s: Vec<f64> = row.embedding.iter().map(|v| *v as f64).collect();
        let unit =
            numeric::normalized_f32(&f64s).ok_or_else(|| BackendError::MalformedResponse {
                detail: format!("embedding {} has zero norm", row.index),
            })?;
        out.push(unit);
    }
    Ok(out)
}

pub struct HttpCompletionClient {
    transport: Arc<dyn Transport>,
    pub url: String,
    pub model: String,
    pub bearer: Option<String>,
    pub retry: RetryPolicy,
}

impl HttpCompletionClient {
    pub fn new(
        transport: Arc<dyn Transport>,
        url: String,
        model: String,
        bearer: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        HttpCompletionClient {
            transport,
            url,
            model,
            bearer,
            retry,
        }
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "seed": params.seed,
        });
        if let Some(max) = params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let resp = post_with_retry(
            self.transport.as_ref(),
            &self.retry,
            &self.url,
            &body,
            self.bearer.as_deref(),
        )?;
        parse_chat_response(&resp.body)
    }
}

pub struct HttpEmbeddingClient {
    transport: Arc<dyn Transport>,
    pub url: String,
    pub model: String,
    pub bearer: Option<String>,
    pub retry: RetryPolicy,
}

impl HttpEmbeddingClient {
    pub fn new(
        transport: Arc<dyn Transport>,
        url: String,
        model: String,
        bearer: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        HttpEmbeddingClient {
            transport,
            url,
            model,
            bearer,
            retry,
        }
    }
}

impl TextEmbedder for HttpEmbeddingClient {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = json!({ "model": self.model, "input": texts });
        let resp = post_with_retry(
            self.transport.as_ref(),
            &self.retry,
            &self.url,
            &body,
            self.bearer.as_deref(),
        )?;
        parse_embeddings_response(&resp.body, texts.len())
    }
}

/// Live transport over ureq. Nothing in the test suite uses this.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        UreqTransport {
            agent: config.into(),
        }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
        bearer: Option<&str>,
    ) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(token) = bearer {
            req = req.header("authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| format!("transport: {e}"))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| format!("read body: {e}"))?;
        Ok(HttpResponse { status, body: text })
    }
}

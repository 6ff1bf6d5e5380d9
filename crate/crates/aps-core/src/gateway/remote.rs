//! Wire client for OpenAI-compatible chat completions endpoints, with
//! exponential backoff on transient failures. The transport is a trait
//! so tests can inject failures without a network.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CallLedger, ChatRequest, LedgerSnapshot, LlmGateway, Role};
use crate::error::{ApsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_in_flight() -> usize {
    4
}

impl EndpointConfig {
    pub fn chat_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

/// Raw HTTP reply: status code plus body.
#[derive(Debug, Clone)]
pub struct TransportReply {
    pub status: u16,
    pub body: String,
}

/// Sends one serialized request body; retry policy lives above this.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> std::result::Result<TransportReply, String>;
}

/// Blocking reqwest transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout_secs: u64) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| ApsError::Config(format!("http client construction failed: {e}")))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> std::result::Result<TransportReply, String> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(TransportReply { status, body })
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

pub struct RemoteGateway {
    config: EndpointConfig,
    transport: Box<dyn Transport>,
    ledger: Arc<CallLedger>,
}

impl RemoteGateway {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        let transport = HttpTransport::new(config.timeout_secs)?;
        Ok(Self::with_transport(config, Box::new(transport)))
    }

    pub fn with_transport(config: EndpointConfig, transport: Box<dyn Transport>) -> Self {
        RemoteGateway {
            config,
            transport,
            ledger: Arc::new(CallLedger::default()),
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let messages: Vec<WireMessage> = request
            .messages
            .iter()
            .map(|m| WireMessage {
                role: match m.role {
                    Role::System => "system",
                    Role::User => "user",
                },
                content: &m.content,
            })
            .collect();
        serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        })
    }

    fn parse_reply(&self, reply: &TransportReply) -> Result<String> {
        let parsed: WireResponse = serde_json::from_str(&reply.body).map_err(|e| {
            ApsError::Protocol(format!("chat completion body malformed: {e}"))
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ApsError::Protocol("chat completion has no choices".into()))?;
        Ok(content)
    }
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl LlmGateway for RemoteGateway {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        let body = self.request_body(request);
        let url = self.config.chat_url();
        let attempts = self.config.max_retries + 1;
        let mut last_failure = String::new();

        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(
                    self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(8)),
                ));
            }
            match self.transport.send(&url, self.config.api_key.as_deref(), &body) {
                Ok(reply) if reply.status == 200 => {
                    let content = self.parse_reply(&reply)?;
                    self.ledger.record(request.stage);
                    return Ok(content);
                }
                Ok(reply) if is_transient(reply.status) => {
                    last_failure = format!("http {}: {}", reply.status, truncate(&reply.body));
                }
                Ok(reply) => {
                    return Err(ApsError::Gateway {
                        stage: request.stage,
                        attempts: attempt + 1,
                        message: format!("http {}: {}", reply.status, truncate(&reply.body)),
                    });
                }
                Err(transport_error) => {
                    last_failure = transport_error;
                }
            }
        }

        Err(ApsError::Gateway {
            stage: request.stage,
            attempts,
            message: last_failure,
        })
    }

    fn ledger(&self) -> LedgerSnapshot {
        self.ledger.snapshot()
    }

    fn model_id(&self) -> String {
        self.config.model.clone()
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}

fn truncate(s: &str) -> String {
    const LIMIT: usize = 400;
    if s.len() <= LIMIT {
        s.to_string()
    } else {
        format!("{}...", &s[..LIMIT])
    }
}

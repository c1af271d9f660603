use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::PromptBundle;
use crate::consensus::{ConsensusPolicy, IntentPolicy, PolicyError, ProposalRequest, RefineRequest};

pub const ENDPOINT_ENV: &str = "SWARM_ENDPOINT";
pub const API_KEY_ENV: &str = "SWARM_API_KEY";

/// Connection settings for an OpenAI-compatible server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000".into(),
            model: "local".into(),
            temperature: 0.2,
            max_tokens: 600,
            timeout_secs: 30.0,
            max_retries: 2,
            backoff_ms: 250,
            max_in_flight: 4,
            api_key: None,
        }
    }
}

impl RemoteConfig {
    /// Applies `SWARM_ENDPOINT` and `SWARM_API_KEY` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            self.endpoint = url;
        }
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            self.api_key = Some(key);
        }
        self
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RemoteError {
    #[error("request timed out")]
    Timeout,
    #[error("server answered with status {0}")]
    Status(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response body: {0}")]
    Body(String),
    #[error("invalid request: {0}")]
    Request(String),
}

/// All attempts failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transport failure after {attempts} attempts: {last}")]
pub struct TransportFailure {
    pub attempts: u32,
    pub last: RemoteError,
}

struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.slots.lock().expect("gate lock");
        while *free == 0 {
            free = self.freed.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("gate lock") += 1;
        self.0.freed.notify_one();
    }
}

/// Blocking chat-completions client with retries and an in-flight cap.
pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("config", &self.config).finish()
    }
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate {
            slots: Mutex::new(config.max_in_flight.max(1)),
            freed: Condvar::new(),
        };
        RemoteClient { config, agent, gate }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    fn attempt(&self, req: &ChatRequest) -> Result<ChatResponse, RemoteError> {
        let mut call = self.agent.post(self.config.url());
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call.send_json(req).map_err(classify)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(RemoteError::Status(status));
        }
        let body: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| match classify(e) {
                RemoteError::Transport(m) => RemoteError::Body(m),
                other => other,
            })?;
        let choice = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| RemoteError::Body("no choices".into()))?;
        Ok(ChatResponse {
            content: choice
                .message
                .content
                .ok_or_else(|| RemoteError::Body("missing message content".into()))?,
            finish_reason: choice.finish_reason,
        })
    }

    /// Sends the request, retrying up to `max_retries` times with exponential
    /// backoff.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, TransportFailure> {
        if req.messages.is_empty() {
            return Err(TransportFailure {
                attempts: 0,
                last: RemoteError::Request("empty message list".into()),
            });
        }
        let _slot = self.gate.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(req) {
                Ok(r) => return Ok(r),
                Err(last) if attempts > self.config.max_retries => return Err(TransportFailure { attempts, last }),
                Err(_) => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
}

fn classify(e: ureq::Error) -> RemoteError {
    match e {
        ureq::Error::Timeout(_) => RemoteError::Timeout,
        ureq::Error::StatusCode(code) => RemoteError::Status(code),
        other => RemoteError::Transport(other.to_string()),
    }
}

/// Sends one request through `client`. Convenience form of
/// [`RemoteClient::complete`].
pub fn remote_complete(client: &RemoteClient, req: &ChatRequest) -> Result<String, TransportFailure> {
    client.complete(req).map(|r| r.content)
}

/// Both decision stages backed by a remote model.
#[derive(Debug)]
pub struct RemotePolicy {
    pub client: RemoteClient,
    pub bundle: PromptBundle,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig, bundle: PromptBundle) -> Self {
        RemotePolicy { client: RemoteClient::new(config), bundle }
    }

    fn ask(&self, user: String) -> Result<String, PolicyError> {
        let req = self
            .client
            .request(vec![ChatMessage::system(self.bundle.system_prompt()), ChatMessage::user(user)]);
        remote_complete(&self.client, &req).map_err(|e| PolicyError(e.to_string()))
    }
}

impl IntentPolicy for RemotePolicy {
    fn propose(&self, req: &ProposalRequest<'_>) -> Result<String, PolicyError> {
        self.ask(self.bundle.render_init_prompt(req.obs))
    }
}

impl ConsensusPolicy for RemotePolicy {
    fn refine(&self, req: &RefineRequest<'_>) -> Result<String, PolicyError> {
        self.ask(self.bundle.render_cons_prompt(req.info, req.role, req.intent))
    }
}

//! Minimal chat-completion client with a deterministic mock transport.
//!
//! The live transport posts to any OpenAI-compatible `/v1/chat/completions`
//! route, configured through environment variables. The mock transport
//! returns scripted responses keyed by a hash of the final user payload, so
//! the whole decomposition/planning pipeline is testable without a network.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fnv1a;

pub const ENV_BASE_URL: &str = "CLOTHSKILL_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "CLOTHSKILL_LLM_API_KEY";
pub const ENV_MODEL: &str = "CLOTHSKILL_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Prompt scaffolding shared by the decomposer and the planner: a system
/// preamble, worked few-shot examples, sampling settings, and the marker
/// separating chain-of-thought text from the final answer lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub system: String,
    /// (user, assistant) exemplar pairs inserted before the real request.
    pub few_shot: Vec<(String, String)>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// How many times a caller may re-ask after a malformed response.
    pub retries: u32,
    /// Text preceding the final answer lines, e.g. `ANSWER:`.
    pub answer_marker: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            system: String::new(),
            few_shot: Vec::new(),
            temperature: 0.0,
            max_tokens: 1024,
            retries: 2,
            answer_marker: "ANSWER:".to_string(),
        }
    }
}

/// Builds the standard message sequence: system, few-shot pairs, then the
/// real user payload.
pub fn build_messages(config: &PromptConfig, user_payload: &str) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2 + 2 * config.few_shot.len());
    if !config.system.is_empty() {
        messages.push(ChatMessage::system(config.system.clone()));
    }
    for (user, assistant) in &config.few_shot {
        messages.push(ChatMessage::user(user.clone()));
        messages.push(ChatMessage::assistant(assistant.clone()));
    }
    messages.push(ChatMessage::user(user_payload.to_string()));
    messages
}

/// Hash of the final user message; the key under which the mock transport
/// scripts its responses.
pub fn user_payload_key(messages: &[ChatMessage]) -> u64 {
    let payload = messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("");
    fnv1a(payload.as_bytes())
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("llm configuration error: {0}")]
    Config(String),
    #[error("mock transport has no scripted response for payload key {key:#018x}")]
    MockMissing { key: u64 },
    #[error("llm endpoint returned status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("llm request timed out after {seconds:.1}s")]
    Timeout { seconds: f64 },
    #[error("llm transport error: {0}")]
    Transport(String),
    #[error("llm response body was not a chat completion: {0}")]
    MalformedBody(String),
    #[error("transcript log error: {0}")]
    TranscriptIo(#[from] std::io::Error),
}

/// Scripted responses for offline runs. Each payload key holds a response
/// sequence; repeated calls walk the sequence and stay on the last entry,
/// so retry behavior is scriptable. An optional fallback answers unknown
/// payloads.
#[derive(Debug, Default)]
pub struct MockTransport {
    scripts: Mutex<BTreeMap<u64, (Vec<String>, usize)>>,
    fallback: Option<String>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Responds to every payload with the same text.
    pub fn always(response: impl Into<String>) -> Self {
        MockTransport { scripts: Mutex::new(BTreeMap::new()), fallback: Some(response.into()) }
    }

    /// Scripts one response for the payload with this exact user text.
    pub fn script(&mut self, user_payload: &str, response: impl Into<String>) {
        self.script_sequence(user_payload, vec![response.into()]);
    }

    /// Scripts a response sequence for one payload (useful for retry tests).
    pub fn script_sequence(&mut self, user_payload: &str, responses: Vec<String>) {
        assert!(!responses.is_empty(), "a script needs at least one response");
        let key = fnv1a(user_payload.as_bytes());
        self.scripts.lock().unwrap().insert(key, (responses, 0));
    }

    fn respond(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let key = user_payload_key(messages);
        let mut scripts = self.scripts.lock().unwrap();
        if let Some((responses, cursor)) = scripts.get_mut(&key) {
            let response = responses[(*cursor).min(responses.len() - 1)].clone();
            *cursor += 1;
            return Ok(response);
        }
        drop(scripts);
        match &self.fallback {
            Some(f) => Ok(f.clone()),
            None => Err(LlmError::MockMissing { key }),
        }
    }
}

/// Connection settings for a live OpenAI-compatible endpoint.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads the endpoint configuration from the environment. Fails before
    /// any network activity when the base URL or credential is absent.
    pub fn from_env() -> Result<HttpConfig, LlmError> {
        let base_url = std::env::var(ENV_BASE_URL)
            .map_err(|_| LlmError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let api_key = std::env::var(ENV_API_KEY)
            .map_err(|_| LlmError::Config(format!("{ENV_API_KEY} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        Ok(HttpConfig { base_url, api_key, model, timeout: Duration::from_secs(60) })
    }
}

pub enum Transport {
    Mock(MockTransport),
    Http(HttpConfig),
}

impl Transport {
    pub fn is_mock(&self) -> bool {
        matches!(self, Transport::Mock(_))
    }

    pub fn model_name(&self) -> &str {
        match self {
            Transport::Mock(_) => "mock",
            Transport::Http(cfg) => &cfg.model,
        }
    }
}

/// One persisted exchange: the exact messages sent, the raw response, and
/// timing. Replaying a transcript through [`extract_answer`] is
/// deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub response: String,
    pub latency_ms: u64,
}

pub struct LlmClient {
    transport: Transport,
    transcript_log: Option<PathBuf>,
    log_lock: Mutex<()>,
}

impl LlmClient {
    pub fn new(transport: Transport) -> Self {
        LlmClient { transport, transcript_log: None, log_lock: Mutex::new(()) }
    }

    pub fn mock(transport: MockTransport) -> Self {
        LlmClient::new(Transport::Mock(transport))
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Ok(LlmClient::new(Transport::Http(HttpConfig::from_env()?)))
    }

    pub fn is_mock(&self) -> bool {
        self.transport.is_mock()
    }

    /// Appends every exchange to a JSON-lines transcript log.
    pub fn with_transcript_log(mut self, path: PathBuf) -> Self {
        self.transcript_log = Some(path);
        self
    }

    /// Sends the messages and returns the assistant text.
    pub fn complete(
        &self,
        messages: &[ChatMessage],
        config: &PromptConfig,
    ) -> Result<String, LlmError> {
        let started = Instant::now();
        let response = match &self.transport {
            Transport::Mock(mock) => mock.respond(messages)?,
            Transport::Http(http) => http_complete(http, messages, config)?,
        };
        // Mock latency is recorded as zero to keep offline artifacts
        // byte-reproducible.
        let latency_ms = match &self.transport {
            Transport::Mock(_) => 0,
            Transport::Http(_) => started.elapsed().as_millis() as u64,
        };
        if let Some(path) = &self.transcript_log {
            let transcript = ChatTranscript {
                model: self.transport.model_name().to_string(),
                messages: messages.to_vec(),
                response: response.clone(),
                latency_ms,
            };
            let _guard = self.log_lock.lock().unwrap();
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            let line = serde_json::to_string(&transcript).expect("transcript serializes");
            writeln!(file, "{line}")?;
        }
        Ok(response)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

fn map_ureq_error(err: ureq::Error, timeout: Duration) -> LlmError {
    match err {
        ureq::Error::Timeout(_) => LlmError::Timeout { seconds: timeout.as_secs_f64() },
        ureq::Error::Io(e) => LlmError::Transport(e.to_string()),
        ureq::Error::HostNotFound => LlmError::Transport("host not found".to_string()),
        other => LlmError::Transport(other.to_string()),
    }
}

fn http_complete(
    http: &HttpConfig,
    messages: &[ChatMessage],
    config: &PromptConfig,
) -> Result<String, LlmError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(http.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}/v1/chat/completions", http.base_url.trim_end_matches('/'));
    let body = CompletionRequest {
        model: &http.model,
        messages,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let mut response = agent
        .post(&url)
        .header("authorization", format!("Bearer {}", http.api_key))
        .send_json(&body)
        .map_err(|e| map_ureq_error(e, http.timeout))?;
    let status = response.status();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| map_ureq_error(e, http.timeout))?;
    if !status.is_success() {
        return Err(LlmError::HttpStatus { status: status.as_u16(), body: text });
    }
    let parsed: CompletionResponse =
        serde_json::from_str(&text).map_err(|e| LlmError::MalformedBody(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| LlmError::MalformedBody("no choices in response".to_string()))
}

/// The answer lines pulled out of a raw response, and whether the marker was
/// missing (whole-text fallback).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedAnswer {
    pub lines: Vec<String>,
    pub used_fallback: bool,
}

fn strip_line_decoration(line: &str) -> &str {
    let mut t = line.trim();
    t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(stripped) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            t = stripped.trim_start();
        }
    }
    t.trim_end()
}

/// Takes the text after the last answer marker (discarding chain-of-thought
/// preamble), splits it into lines, and strips numbering and bullets. When
/// the marker is absent the whole response is used and the fallback flag is
/// set so callers can warn.
pub fn extract_answer(response: &str, config: &PromptConfig) -> ExtractedAnswer {
    let (body, used_fallback) = match response.rfind(&config.answer_marker) {
        Some(pos) => (&response[pos + config.answer_marker.len()..], false),
        None => (response, true),
    };
    let lines = body
        .lines()
        .map(strip_line_decoration)
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect();
    ExtractedAnswer { lines, used_fallback }
}

//! HTTP adapters: a chat-completion client and an NLI classifier client.
//!
//! The chat side speaks the common completions protocol: POST
//! `{model, messages, temperature, max_tokens, seed?}` and read
//! `choices[0].message.content`. The entailment side POSTs
//! `{premise, hypothesis}` and reads `{label, scores}`; only the label is
//! kept (scores change with classifier versions and would poison the cache's
//! value as a determinism record).

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, CompletionRequest, EntailmentBackend};

fn transient_status(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

fn build_client(timeout: Duration) -> Result<Client, BackendError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| BackendError::fatal(format!("http client: {e}")))
}

fn body_snippet(text: &str) -> String {
    let trimmed = text.trim();
    if trimmed.len() <= 200 {
        return trimmed.to_string();
    }
    let mut end = 200;
    while !trimmed.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &trimmed[..end])
}

// --- chat completions ---

#[derive(Serialize)]
struct ChatCompletionRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: String,
}

pub struct HttpChatBackend {
    id: String,
    url: String,
    model: String,
    token: Option<String>,
    client: Client,
}

impl HttpChatBackend {
    /// `base_url` may be a server root (the standard `/v1/chat/completions`
    /// path is appended) or a full completions URL.
    pub fn new(base_url: &str, model: &str, token: Option<String>) -> Result<Self, BackendError> {
        let trimmed = base_url.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/v1/chat/completions")
        };
        Ok(HttpChatBackend {
            id: format!("{url}#{model}"),
            url,
            model: model.to_string(),
            token,
            client: build_client(Duration::from_secs(120))?,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = ChatCompletionRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.decode.temperature,
            max_tokens: request.decode.max_tokens,
            seed: request.decode.seed,
        };
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::transient(format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::transient(format!("reading response body: {e}")))?;
        if !status.is_success() {
            let err = BackendError {
                transient: transient_status(status),
                detail: format!("http {}: {}", status.as_u16(), body_snippet(&text)),
            };
            return Err(err);
        }
        let parsed: ChatCompletionResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::fatal(format!("malformed completion response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::fatal("completion response carried no choices"))
    }
}

// --- entailment classifier ---

#[derive(Serialize)]
struct EntailRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct EntailResponse {
    label: String,
    #[serde(default)]
    #[allow(dead_code)]
    scores: Option<serde_json::Value>,
}

pub struct HttpEntailmentBackend {
    id: String,
    url: String,
    token: Option<String>,
    client: Client,
}

impl HttpEntailmentBackend {
    pub fn new(url: &str, token: Option<String>) -> Result<Self, BackendError> {
        Ok(HttpEntailmentBackend {
            id: format!("nli:{url}"),
            url: url.to_string(),
            token,
            client: build_client(Duration::from_secs(60))?,
        })
    }
}

impl EntailmentBackend for HttpEntailmentBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.url).json(&EntailRequest {
            premise,
            hypothesis,
        });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::transient(format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::transient(format!("reading response body: {e}")))?;
        if !status.is_success() {
            return Err(BackendError {
                transient: transient_status(status),
                detail: format!("http {}: {}", status.as_u16(), body_snippet(&text)),
            });
        }
        let parsed: EntailResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::fatal(format!("malformed entailment response: {e}")))?;
        Ok(parsed.label)
    }
}

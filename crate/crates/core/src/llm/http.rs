use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmEndpoint, LlmError, Message, Reply, Transport, TransportError, Usage};

/// OpenAI-compatible `/chat/completions` over blocking HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &LlmEndpoint) -> Result<Self, LlmError> {
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Setup(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            agent: ureq::Agent::new_with_config(config),
            url: format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest<'_>) -> Result<Reply, TransportError> {
        let body = serde_json::to_vec(&Body {
            model: request.model,
            messages: request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
        .map_err(|e| TransportError::Malformed(e.to_string()))?;
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = req.send(&body[..]).map_err(map_error)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_error)?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { code: status, body: truncate(text) });
        }
        parse_completion(&text)
    }
}

fn map_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::StatusCode(code) => TransportError::Status { code, body: String::new() },
        other => TransportError::Network(other.to_string()),
    }
}

fn truncate(mut s: String) -> String {
    if s.len() > 512 {
        let mut cut = 512;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

pub(super) fn parse_completion(text: &str) -> Result<Reply, TransportError> {
    let c: Completion =
        serde_json::from_str(text).map_err(|e| TransportError::Malformed(e.to_string()))?;
    let content = c
        .choices
        .into_iter()
        .next()
        .and_then(|ch| ch.message.content)
        .ok_or_else(|| TransportError::Malformed("no choices[0].message.content".into()))?;
    Ok(Reply { text: content, usage: c.usage })
}

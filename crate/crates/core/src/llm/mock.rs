use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, Message, Reply, Role, Transport, TransportError};
use crate::error::{Error, IoContext, Result};
use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMatch {
    /// Matches when the last user message contains the string.
    Substring(String),
    /// Matches the [`prompt_hash`] of the full message list.
    PromptHash(String),
    Any,
}

/// One line of a mock script. `{{input}}` in the response is replaced with
/// the last user message. With `per_line`, the response is rendered once for
/// every input line starting with the prefix, `{{value}}` being the rest of
/// that line. The first `fail_times` matches fail with `fail_status`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: MockMatch,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub fail_times: u32,
    #[serde(default = "default_fail_status")]
    pub fail_status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_line: Option<String>,
}

impl MockRule {
    pub fn new(matcher: MockMatch, response: impl Into<String>) -> Self {
        Self {
            matcher,
            response: response.into(),
            fail_times: 0,
            fail_status: default_fail_status(),
            per_line: None,
        }
    }

    fn render(&self, input: &str) -> String {
        match &self.per_line {
            None => self.response.replace("{{input}}", input),
            Some(prefix) => {
                let mut out = String::new();
                for value in input.lines().filter_map(|l| l.strip_prefix(prefix.as_str())) {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(&self.response.replace("{{value}}", value.trim()));
                }
                out
            }
        }
    }
}

fn default_fail_status() -> u16 {
    429
}

pub fn prompt_hash(messages: &[Message]) -> String {
    sha256_hex(&serde_json::to_vec(messages).expect("messages serialize"))
}

/// Rules are tried in order; the first match answers. No match is a 404.
pub struct ScriptedMock {
    rules: Vec<MockRule>,
    failures: Vec<AtomicU32>,
    calls: AtomicU64,
}

impl ScriptedMock {
    pub fn new(rules: Vec<MockRule>) -> Self {
        let failures = rules.iter().map(|_| AtomicU32::new(0)).collect();
        Self { rules, failures, calls: AtomicU64::new(0) }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let rule = serde_json::from_str(line).map_err(|e| {
                Error::Config(format!("{}:{}: bad mock rule: {e}", path.display(), i + 1))
            })?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Transport for ScriptedMock {
    fn send(&self, request: &ChatRequest<'_>) -> Result<Reply, TransportError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let input = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let mut hash = None;
        for (rule, failed) in self.rules.iter().zip(&self.failures) {
            let hit = match &rule.matcher {
                MockMatch::Any => true,
                MockMatch::Substring(s) => input.contains(s.as_str()),
                MockMatch::PromptHash(h) => {
                    hash.get_or_insert_with(|| prompt_hash(request.messages)) == h
                }
            };
            if !hit {
                continue;
            }
            let n = failed.fetch_add(1, Ordering::Relaxed);
            if n < rule.fail_times {
                return Err(TransportError::Status {
                    code: rule.fail_status,
                    body: "scripted failure".into(),
                });
            }
            return Ok(Reply { text: rule.render(input), usage: None });
        }
        Err(TransportError::Status { code: 404, body: "no mock rule matched".into() })
    }
}

/// Transport backed by a closure, for tests.
pub struct FnTransport<F>(F);

impl<F> FnTransport<F>
where
    F: Fn(&ChatRequest<'_>) -> Result<Reply, TransportError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> Transport for FnTransport<F>
where
    F: Fn(&ChatRequest<'_>) -> Result<Reply, TransportError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest<'_>) -> Result<Reply, TransportError> {
        (self.0)(request)
    }
}

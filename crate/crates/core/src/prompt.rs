//! Editable prompt templates. Built-in copies are compiled in; any of them
//! can be replaced by a TOML file with the same fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::llm::Message;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShot {
    /// Complete user turn.
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
    #[serde(default)]
    pub few_shots: Vec<FewShot>,
    #[serde(default)]
    pub void_sentinel: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinPrompt {
    Extract,
    Refine,
    Triage,
    Subject,
}

impl BuiltinPrompt {
    fn source(self) -> &'static str {
        match self {
            BuiltinPrompt::Extract => include_str!("../prompts/extract.toml"),
            BuiltinPrompt::Refine => include_str!("../prompts/refine.toml"),
            BuiltinPrompt::Triage => include_str!("../prompts/triage.toml"),
            BuiltinPrompt::Subject => include_str!("../prompts/subject.toml"),
        }
    }
}

impl PromptTemplate {
    pub fn builtin(which: BuiltinPrompt) -> Self {
        Self::from_toml(which.source(), "<builtin>").expect("built-in prompt parses")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let mut t: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("prompt {origin}: {e}")))?;
        t.system = t.system.trim().to_owned();
        t.user = t.user.trim().to_owned();
        for shot in &mut t.few_shots {
            shot.input = shot.input.trim().to_owned();
            shot.output = shot.output.trim().to_owned();
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Built-in template unless `path` is given.
    pub fn resolve(which: BuiltinPrompt, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::builtin(which)),
        }
    }

    /// Extraction prompts need a void sentinel that one few-shot demonstrates.
    pub fn validate_extraction(&self) -> Result<&str> {
        let Some(sentinel) = self.void_sentinel.as_deref() else {
            return Err(Error::Config("extraction prompt: void_sentinel is required".into()));
        };
        if self.few_shots.is_empty() {
            return Err(Error::Config("extraction prompt: needs at least one few-shot".into()));
        }
        if !self.few_shots.iter().any(|s| s.output == sentinel) {
            return Err(Error::Config(
                "extraction prompt: no few-shot demonstrates the void sentinel".into(),
            ));
        }
        Ok(sentinel)
    }

    /// System turn, few-shot turns, then the rendered user turn.
    pub fn render(&self, vars: &[(&str, &str)]) -> Vec<Message> {
        let mut messages = Vec::with_capacity(2 + 2 * self.few_shots.len());
        messages.push(Message::system(substitute(&self.system, vars)));
        for shot in &self.few_shots {
            messages.push(Message::user(shot.input.clone()));
            messages.push(Message::assistant(shot.output.clone()));
        }
        messages.push(Message::user(substitute(&self.user, vars)));
        messages
    }
}

/// Replaces `{{name}}` placeholders in one pass; inserted values are not rescanned.
pub fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let hit = after.find("}}").and_then(|end| {
            let name = &after[..end];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (end, *v))
        });
        match hit {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 2..];
            }
            None => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

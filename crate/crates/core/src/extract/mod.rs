//! HTML cleaning and LLM extraction of question-answer pairs.

mod clean;

use serde::{Deserialize, Serialize};

pub use clean::{
    clean_html, identifier_parts, CleanDocument, CleanSkip, Cleaner, BOILERPLATE_PATTERNS,
    DROPPED_TAGS,
};

use crate::hash::short_id;
use crate::llm::{LlmClient, LlmError};
use crate::prompt::PromptTemplate;

pub const VOID_SENTINEL: &str = "NO_QA_FOUND";
pub const QUESTION_MARKER: &str = "QUESTION:";
pub const ANSWER_MARKER: &str = "ANSWER:";
pub const BLOCK_DELIMITER: &str = "---";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QACandidate {
    pub candidate_id: String,
    pub doc_id: String,
    pub url: String,
    pub question: String,
    pub answer: String,
    pub extractor: String,
}

pub fn candidate_id(doc_id: &str, ordinal: usize) -> String {
    short_id(&[doc_id.as_bytes(), ordinal.to_string().as_bytes()])
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedExtraction {
    pub pairs: Vec<(String, String)>,
    /// Blocks missing a marker or with an empty field.
    pub rejected: usize,
    pub void: bool,
}

fn marker_rest<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    line.trim_start().strip_prefix(marker)
}

/// Parses one block: a `QUESTION:` line, question lines, an `ANSWER:` line,
/// answer lines. Text on a marker line after the colon counts as content.
pub fn parse_block(block: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = block.lines().collect();
    let q = lines.iter().position(|l| marker_rest(l, QUESTION_MARKER).is_some())?;
    let a = q + 1 + lines[q + 1..].iter().position(|l| marker_rest(l, ANSWER_MARKER).is_some())?;
    let gather = |first: &str, rest: &[&str]| {
        let mut s = first.trim().to_owned();
        for l in rest {
            s.push('\n');
            s.push_str(l);
        }
        s.trim().to_owned()
    };
    let question = gather(marker_rest(lines[q], QUESTION_MARKER)?, &lines[q + 1..a]);
    let answer = gather(marker_rest(lines[a], ANSWER_MARKER)?, &lines[a + 1..]);
    (!question.is_empty() && !answer.is_empty()).then_some((question, answer))
}

/// Splits on `---` lines and parses each block; a reply equal to the sentinel
/// is void. Empty blocks (for example after a trailing delimiter) are ignored.
pub fn parse_extraction(response: &str, void_sentinel: &str) -> ParsedExtraction {
    let trimmed = response.trim();
    let mut out = ParsedExtraction::default();
    if trimmed == void_sentinel {
        out.void = true;
        return out;
    }
    let mut block = String::new();
    let flush = |block: &mut String, out: &mut ParsedExtraction| {
        if !block.trim().is_empty() {
            match parse_block(block) {
                Some(pair) => out.pairs.push(pair),
                None => out.rejected += 1,
            }
        }
        block.clear();
    };
    for line in trimmed.lines() {
        if line.trim() == BLOCK_DELIMITER {
            flush(&mut block, &mut out);
        } else {
            block.push_str(line);
            block.push('\n');
        }
    }
    flush(&mut block, &mut out);
    out
}

/// Byte prefix of `text` holding its first `max_tokens` whitespace tokens.
pub fn head_tokens(text: &str, max_tokens: usize) -> Option<&str> {
    let mut count = 0;
    let mut in_token = false;
    let mut end = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token && count == max_tokens {
                end.get_or_insert(i);
            }
            in_token = false;
        } else if !in_token {
            in_token = true;
            count += 1;
            if count > max_tokens {
                return Some(end.map_or_else(|| text[..i].trim_end(), |e| &text[..e]));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractCounters {
    pub docs: u64,
    pub llm_calls: u64,
    pub void: u64,
    pub malformed: u64,
    pub truncated: u64,
    pub rejected_blocks: u64,
    pub docs_with_candidates: u64,
    pub candidates: u64,
    pub skipped_empty: u64,
    pub skipped_not_text: u64,
}

impl ExtractCounters {
    pub fn merge(&mut self, o: &ExtractCounters) {
        self.docs += o.docs;
        self.llm_calls += o.llm_calls;
        self.void += o.void;
        self.malformed += o.malformed;
        self.truncated += o.truncated;
        self.rejected_blocks += o.rejected_blocks;
        self.docs_with_candidates += o.docs_with_candidates;
        self.candidates += o.candidates;
        self.skipped_empty += o.skipped_empty;
        self.skipped_not_text += o.skipped_not_text;
    }
}

/// One LLM call for one document. Documents over the endpoint's context
/// budget are cut to their head.
pub fn extract_qa(
    llm: &LlmClient,
    doc: &CleanDocument,
    prompt: &PromptTemplate,
) -> Result<(Vec<QACandidate>, ExtractCounters), LlmError> {
    let sentinel = prompt.void_sentinel.as_deref().unwrap_or(VOID_SENTINEL);
    let mut counters = ExtractCounters { docs: 1, ..Default::default() };
    let mut text = doc.text.as_str();
    if let Some(budget) = llm.endpoint().context_budget_tokens {
        if let Some(head) = head_tokens(text, budget) {
            text = head;
            counters.truncated = 1;
        }
    }
    if text.trim().is_empty() {
        return Err(LlmError::InvalidRequest(format!("document {} has no text", doc.doc_id)));
    }
    let messages = prompt.render(&[("document", text)]);
    counters.llm_calls = 1;
    let exchange = llm.complete(&messages)?;
    let parsed = parse_extraction(&exchange.response_text, sentinel);
    counters.rejected_blocks = parsed.rejected as u64;
    if parsed.void {
        counters.void = 1;
    } else if parsed.pairs.is_empty() {
        counters.malformed = 1;
    }
    let candidates: Vec<QACandidate> = parsed
        .pairs
        .into_iter()
        .enumerate()
        .map(|(ordinal, (question, answer))| QACandidate {
            candidate_id: candidate_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            url: doc.url.clone(),
            question,
            answer,
            extractor: llm.model().to_owned(),
        })
        .collect();
    counters.candidates = candidates.len() as u64;
    counters.docs_with_candidates = u64::from(!candidates.is_empty());
    Ok((candidates, counters))
}

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DomainStats;
use crate::corpus::DomainKey;
use crate::llm::{map_concurrent, LlmClient, LlmError};
use crate::prompt::PromptTemplate;

/// Rationale given to domains the judge's reply did not cover.
pub const PARSE_FAILURE: &str = "parse-failure";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainVerdict {
    pub domain: DomainKey,
    pub keep: bool,
    pub rationale: String,
    pub judge: String,
}

#[derive(Debug, Error)]
#[error("{failed} of {batches} triage batches failed: {source}")]
pub struct TriageFailure {
    /// Verdicts of the batches that succeeded, in batch order.
    pub completed: Vec<DomainVerdict>,
    pub failed: usize,
    pub batches: usize,
    #[source]
    pub source: LlmError,
}

/// One `DOMAIN:` block per site with counts, sample URLs and snippets.
pub fn render_domains(batch: &[DomainStats]) -> String {
    let mut out = String::new();
    for s in batch {
        let _ = writeln!(out, "DOMAIN: {}", s.domain);
        let _ = writeln!(out, "DOCUMENTS: {}", s.doc_count);
        let _ = writeln!(out, "TOKENS: {}", s.token_count);
        for u in &s.sample_urls {
            let _ = writeln!(out, "URL: {u}");
        }
        for sn in &s.sample_snippets {
            let _ = writeln!(out, "SNIPPET: {sn}");
        }
        out.push('\n');
    }
    out
}

/// Reads `domain<TAB>KEEP|DROP<TAB>rationale` lines. Every domain of the
/// batch gets exactly one verdict, in batch order; domains without a valid
/// line are dropped with [`PARSE_FAILURE`].
pub fn parse_verdicts(response: &str, batch: &[DomainStats], judge: &str) -> Vec<DomainVerdict> {
    let mut found: FxHashMap<&str, (bool, &str)> = FxHashMap::default();
    for line in response.lines() {
        let mut fields = line.trim_end_matches('\r').splitn(3, '\t');
        let (Some(domain), Some(decision), Some(rationale)) = (fields.next(), fields.next(), fields.next())
        else {
            continue;
        };
        let keep = match decision {
            "KEEP" => true,
            "DROP" => false,
            _ => continue,
        };
        let rationale = rationale.trim();
        if domain.is_empty() || rationale.is_empty() {
            continue;
        }
        found.entry(domain).or_insert((keep, rationale));
    }
    batch
        .iter()
        .map(|s| {
            let (keep, rationale) = found.get(s.domain.as_str()).copied().unwrap_or((false, PARSE_FAILURE));
            DomainVerdict {
                domain: s.domain.clone(),
                keep,
                rationale: rationale.to_owned(),
                judge: judge.to_owned(),
            }
        })
        .collect()
}

pub fn triage_batch(
    judge: &LlmClient,
    prompt: &PromptTemplate,
    batch: &[DomainStats],
) -> Result<Vec<DomainVerdict>, LlmError> {
    let listing = render_domains(batch);
    let messages = prompt.render(&[("domains", listing.trim_end())]);
    let exchange = judge.complete(&messages)?;
    Ok(parse_verdicts(&exchange.response_text, batch, judge.model()))
}

/// Judges `stats` in batches of `batch_size`, issuing batches concurrently
/// up to the client's in-flight bound.
pub fn triage_domains(
    judge: &LlmClient,
    prompt: &PromptTemplate,
    stats: &[DomainStats],
    batch_size: usize,
) -> Result<Vec<DomainVerdict>, TriageFailure> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let batches: Vec<&[DomainStats]> = stats.chunks(batch_size).collect();
    let results = map_concurrent(&batches, judge.endpoint().max_in_flight, |_, b| {
        triage_batch(judge, prompt, b)
    });
    let mut completed = Vec::with_capacity(stats.len());
    let mut first_error = None;
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => completed.extend(v),
            Err(e) => {
                failed += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        None => Ok(completed),
        Some(source) => Err(TriageFailure { completed, failed, batches: batches.len(), source }),
    }
}

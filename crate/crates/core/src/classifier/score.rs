use serde::{Deserialize, Serialize};

use super::{Scratch, TextClassifier};
use crate::corpus::{read_shard, CorpusShard, RawDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    /// Keep documents whose positive-class probability is at least this.
    pub threshold: f64,
    /// Stop before the kept token total would exceed this.
    pub token_budget: Option<u64>,
}

impl ScoreOptions {
    pub fn new(threshold: f64, token_budget: Option<u64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!(
                "recall threshold {threshold} is outside [0, 1]"
            )));
        }
        Ok(Self {
            threshold,
            token_budget,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallReport {
    pub docs_seen: u64,
    pub docs_kept: u64,
    pub tokens_kept: u64,
    pub bytes_seen: u64,
    pub skipped_records: u64,
    pub budget_exhausted: bool,
}

impl RecallReport {
    pub fn merge(&mut self, other: &RecallReport) {
        self.docs_seen += other.docs_seen;
        self.docs_kept += other.docs_kept;
        self.tokens_kept += other.tokens_kept;
        self.bytes_seen += other.bytes_seen;
        self.skipped_records += other.skipped_records;
        self.budget_exhausted |= other.budget_exhausted;
    }
}

impl TextClassifier {
    /// Positive-class probability of a document's content.
    pub fn score_document(&self, doc: &RawDocument, scratch: &mut Scratch) -> f64 {
        let text = doc.content();
        let labels = self.labels().len();
        let mut probs = [0f64; 8];
        if labels <= probs.len() {
            self.logits_into(&text, scratch, &mut probs[..labels]);
            super::softmax_in_place(&mut probs[..labels]);
            probs[self.positive_label()]
        } else {
            self.probabilities_with(&text, scratch)[self.positive_label()]
        }
    }
}

/// Filters a document stream through the classifier, handing kept documents
/// to `sink` in input order.
pub fn score_documents(
    model: &TextClassifier,
    docs: impl IntoIterator<Item = RawDocument>,
    opts: ScoreOptions,
    report: &mut RecallReport,
    mut sink: impl FnMut(RawDocument) -> Result<()>,
) -> Result<()> {
    let mut scratch = Scratch::default();
    for doc in docs {
        if report.budget_exhausted {
            break;
        }
        report.docs_seen += 1;
        report.bytes_seen += doc.html.len() as u64;
        let p = model.score_document(&doc, &mut scratch);
        if p < opts.threshold {
            continue;
        }
        let tokens = doc.token_count as u64;
        if let Some(budget) = opts.token_budget {
            if report.tokens_kept + tokens > budget {
                report.budget_exhausted = true;
                break;
            }
        }
        report.docs_kept += 1;
        report.tokens_kept += tokens;
        sink(doc)?;
    }
    Ok(())
}

/// Scores every shard in order, stopping early once the budget is reached.
pub fn score_corpus(
    model: &TextClassifier,
    shards: &[CorpusShard],
    opts: ScoreOptions,
    mut sink: impl FnMut(RawDocument) -> Result<()>,
) -> Result<RecallReport> {
    let mut report = RecallReport::default();
    for shard in shards {
        if report.budget_exhausted {
            break;
        }
        let mut reader = read_shard(shard)?;
        let mut failure = None;
        let docs = reader.by_ref().map_while(|d| match d {
            Ok(doc) => Some(doc),
            Err(e) => {
                failure = Some(e);
                None
            }
        });
        score_documents(model, docs, opts, &mut report, &mut sink)?;
        if let Some(e) = failure {
            return Err(e);
        }
        report.skipped_records += reader.skipped();
    }
    Ok(report)
}

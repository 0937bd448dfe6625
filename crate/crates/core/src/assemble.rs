//! SFT records, subject labels, dataset statistics and audit samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::corpus::count_tokens;
use crate::error::{Error, Result};
use crate::extract::QACandidate;
use crate::llm::LlmClient;
use crate::prompt::PromptTemplate;
use crate::refine::RefinedQA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Gpt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: Speaker,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subject {
    Mathematics,
    Physics,
    Chemistry,
    Biology,
    Business,
    #[serde(rename = "Art & Design")]
    ArtDesign,
    #[serde(rename = "Health & Medicine")]
    HealthMedicine,
    Other,
}

impl Subject {
    pub const ALL: [Subject; 8] = [
        Subject::Mathematics,
        Subject::Physics,
        Subject::Chemistry,
        Subject::Biology,
        Subject::Business,
        Subject::ArtDesign,
        Subject::HealthMedicine,
        Subject::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subject::Mathematics => "Mathematics",
            Subject::Physics => "Physics",
            Subject::Chemistry => "Chemistry",
            Subject::Biology => "Biology",
            Subject::Business => "Business",
            Subject::ArtDesign => "Art & Design",
            Subject::HealthMedicine => "Health & Medicine",
            Subject::Other => "Other",
        }
    }

    /// Case-insensitive exact name, else the first taxonomy name contained in the reply.
    pub fn parse(reply: &str) -> Option<Subject> {
        let r = reply.trim().trim_end_matches(['.', '!']).trim().to_lowercase();
        if let Some(s) = Self::ALL.iter().find(|s| s.name().to_lowercase() == r) {
            return Some(*s);
        }
        Self::ALL.iter().copied().find(|s| r.contains(&s.name().to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMetadata {
    pub source_url: String,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<Subject>,
    pub refiner: String,
    pub extractor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    pub conversations: Vec<Turn>,
    pub metadata: SftMetadata,
}

pub fn to_sft(pair: &RefinedQA) -> SftRecord {
    SftRecord {
        id: pair.candidate_id.clone(),
        conversations: vec![
            Turn { from: Speaker::Human, value: pair.question.clone() },
            Turn { from: Speaker::Gpt, value: pair.answer.clone() },
        ],
        metadata: SftMetadata {
            source_url: pair.url.clone(),
            domain: pair.domain.to_string(),
            subject: None,
            refiner: pair.refiner.clone(),
            extractor: pair.extractor.clone(),
        },
    }
}

/// Alternating turns starting with the human, all non-empty.
pub fn validate_record(r: &SftRecord) -> std::result::Result<(), String> {
    if r.id.is_empty() {
        return Err("empty id".into());
    }
    if r.conversations.is_empty() || r.conversations.len() % 2 != 0 {
        return Err(format!("{}: expected an even, non-zero number of turns", r.id));
    }
    for (i, t) in r.conversations.iter().enumerate() {
        let want = if i % 2 == 0 { Speaker::Human } else { Speaker::Gpt };
        if t.from != want {
            return Err(format!("{}: turn {i} is not from {want:?}", r.id));
        }
        if t.value.trim().is_empty() {
            return Err(format!("{}: turn {i} is empty", r.id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelOutcome {
    Matched,
    NoMatch,
    Failed,
}

/// Best-effort: unmatched replies and endpoint failures both give `Other`.
pub fn label_subject(llm: &LlmClient, prompt: &PromptTemplate, question: &str) -> (Subject, LabelOutcome) {
    let names: Vec<&str> = Subject::ALL.iter().map(|s| s.name()).collect();
    let listing = names.join("\n");
    let messages = prompt.render(&[("subjects", listing.as_str()), ("question", question)]);
    match llm.complete(&messages) {
        Ok(ex) => match Subject::parse(&ex.response_text) {
            Some(s) => (s, LabelOutcome::Matched),
            None => (Subject::Other, LabelOutcome::NoMatch),
        },
        Err(e) => {
            log::warn!("subject labelling failed: {e}");
            (Subject::Other, LabelOutcome::Failed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Education,
    Forum,
}

pub const FORUM_PATTERNS: &[&str] =
    &["forum", "thread", "/t/", "community", "discussion", "stackexchange", "reddit"];

pub fn classify_source(url: &str) -> SourceKind {
    let (host, path) = match url::Url::parse(url) {
        Ok(u) => (u.host_str().unwrap_or("").to_lowercase(), u.path().to_lowercase()),
        Err(_) => (String::new(), url.to_lowercase()),
    };
    let hit = FORUM_PATTERNS.iter().any(|p| host.contains(p) || path.contains(p));
    if hit {
        SourceKind::Forum
    } else {
        SourceKind::Education
    }
}

pub const TOP_DOMAINS: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pair_count: u64,
    pub token_count: u64,
    pub per_domain: BTreeMap<String, u64>,
    pub per_subject: BTreeMap<String, u64>,
    pub per_source: BTreeMap<SourceKind, u64>,
    pub top_domains: Vec<(String, u64)>,
    /// Pair count before dedup, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_before_dedup: Option<u64>,
}

#[derive(Debug, Default, Clone)]
pub struct StatsAccumulator {
    stats: DatasetStats,
}

impl StatsAccumulator {
    pub fn add(&mut self, r: &SftRecord) {
        let s = &mut self.stats;
        s.pair_count += 1;
        s.token_count += r.conversations.iter().map(|t| count_tokens(&t.value) as u64).sum::<u64>();
        *s.per_domain.entry(r.metadata.domain.clone()).or_default() += 1;
        if let Some(sub) = r.metadata.subject {
            *s.per_subject.entry(sub.name().to_owned()).or_default() += 1;
        }
        *s.per_source.entry(classify_source(&r.metadata.source_url)).or_default() += 1;
    }

    pub fn merge(&mut self, other: StatsAccumulator) {
        let s = &mut self.stats;
        let o = other.stats;
        s.pair_count += o.pair_count;
        s.token_count += o.token_count;
        for (k, v) in o.per_domain {
            *s.per_domain.entry(k).or_default() += v;
        }
        for (k, v) in o.per_subject {
            *s.per_subject.entry(k).or_default() += v;
        }
        for (k, v) in o.per_source {
            *s.per_source.entry(k).or_default() += v;
        }
    }

    pub fn finish(mut self) -> DatasetStats {
        let mut top: Vec<(String, u64)> = self.stats.per_domain.iter().map(|(k, v)| (k.clone(), *v)).collect();
        top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        top.truncate(TOP_DOMAINS);
        self.stats.top_domains = top;
        self.stats
    }
}

pub fn compute_stats<'a>(records: impl IntoIterator<Item = &'a SftRecord>) -> DatasetStats {
    let mut acc = StatsAccumulator::default();
    records.into_iter().for_each(|r| acc.add(r));
    acc.finish()
}

pub fn render_stats_table(s: &DatasetStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "pairs   {}", s.pair_count);
    if let Some(b) = s.pairs_before_dedup {
        let _ = writeln!(out, "before dedup   {b}");
    }
    let _ = writeln!(out, "tokens  {}", s.token_count);
    let pct = |n: u64| if s.pair_count == 0 { 0.0 } else { 100.0 * n as f64 / s.pair_count as f64 };
    let _ = writeln!(out, "\nsource");
    for (k, v) in &s.per_source {
        let _ = writeln!(out, "  {:<20} {:>10} {:>6.2}%", format!("{k:?}").to_lowercase(), v, pct(*v));
    }
    if !s.per_subject.is_empty() {
        let _ = writeln!(out, "\nsubject");
        for (k, v) in &s.per_subject {
            let _ = writeln!(out, "  {k:<20} {v:>10} {:>6.2}%", pct(*v));
        }
    }
    let _ = writeln!(out, "\ntop domains");
    for (k, v) in &s.top_domains {
        let _ = writeln!(out, "  {k:<40} {v:>10} {:>6.2}%", pct(*v));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub id: String,
    pub extracted_question: String,
    pub extracted_answer: String,
    pub refined_question: String,
    pub refined_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditSample {
    pub rows: Vec<AuditRow>,
    pub seed: u64,
    pub size: usize,
}

pub const AUDIT_RUBRIC: &str = "# rating: improved | neutral | worse | hallucination";

/// Seeded uniform sample of `n` refined pairs, without replacement.
pub fn sample_audit(candidates: &[QACandidate], refined: &[RefinedQA], n: usize, seed: u64) -> Result<AuditSample> {
    if n > refined.len() {
        return Err(Error::Config(format!("audit size {n} exceeds the {} refined pairs", refined.len())));
    }
    let by_id: FxHashMap<&str, &QACandidate> = candidates.iter().map(|c| (c.candidate_id.as_str(), c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, refined.len(), n);
    let mut rows = Vec::with_capacity(n);
    for i in picks {
        let r = &refined[i];
        let c = by_id
            .get(r.candidate_id.as_str())
            .ok_or_else(|| Error::Integrity(format!("refined pair {} has no candidate", r.candidate_id)))?;
        rows.push(AuditRow {
            id: r.candidate_id.clone(),
            extracted_question: c.question.clone(),
            extracted_answer: c.answer.clone(),
            refined_question: r.question.clone(),
            refined_answer: r.answer.clone(),
        });
    }
    Ok(AuditSample { rows, seed, size: n })
}

impl AuditSample {
    /// RFC 4180 CSV with a rubric comment line and an empty rating column.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(AUDIT_RUBRIC.as_bytes());
        out.extend_from_slice(b"\r\n");
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
        let io = |e: csv::Error| Error::Stage { stage: "audit".into(), detail: e.to_string() };
        w.write_record([
            "id", "extracted_question", "extracted_answer", "refined_question", "refined_answer", "rating",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                &r.id, &r.extracted_question, &r.extracted_answer, &r.refined_question, &r.refined_answer, "",
            ])
            .map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Stage { stage: "audit".into(), detail: e.to_string() })
    }
}

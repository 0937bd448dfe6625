//! Benchmark decontamination by word n-gram overlap, and exact dedup.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::PathBuf;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::hash::{fnv1a64_byte, mix64, sha256_hex, FNV_OFFSET};
use crate::refine::RefinedQA;

pub const DEFAULT_ORDER: usize = 10;
pub const MATCH_LOG_CAP: usize = 1000;
const BASE: u64 = 0x9e37_79b9_7f4a_7c15 | 1;
const FILTER_BITS: u32 = 24;

/// Lowercases, turns ASCII punctuation into spaces and splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let mut buf = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_ascii_punctuation() {
            buf.push(' ');
        } else {
            buf.extend(c.to_lowercase());
        }
    }
    buf.split_whitespace().map(str::to_owned).collect()
}

/// Reusable buffers for allocation-free tokenizing.
#[derive(Default)]
pub struct Tokens {
    text: String,
    spans: Vec<(u32, u32)>,
    hashes: Vec<u64>,
}

impl Tokens {
    /// Same tokens as [`normalize`], stored in one buffer with a hash each.
    pub fn fill(&mut self, input: &str) {
        self.text.clear();
        self.spans.clear();
        self.hashes.clear();
        let mut start: Option<usize> = None;
        let mut h = FNV_OFFSET;
        let bytes = input.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            if b < 0x80 {
                i += 1;
                if b.is_ascii_punctuation() || b.is_ascii_whitespace() || b == 0x0b {
                    if let Some(s) = start.take() {
                        self.end_token(s, h);
                    }
                } else {
                    if start.is_none() {
                        start = Some(self.text.len());
                        h = FNV_OFFSET;
                    }
                    let lb = b.to_ascii_lowercase();
                    self.text.push(lb as char);
                    h = fnv1a64_byte(h, lb);
                }
                continue;
            }
            let c = input[i..].chars().next().expect("char boundary");
            i += c.len_utf8();
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    self.end_token(s, h);
                }
                continue;
            }
            if start.is_none() {
                start = Some(self.text.len());
                h = FNV_OFFSET;
            }
            for lc in c.to_lowercase() {
                let from = self.text.len();
                self.text.push(lc);
                for &lb in &self.text.as_bytes()[from..] {
                    h = fnv1a64_byte(h, lb);
                }
            }
        }
        if let Some(s) = start {
            self.end_token(s, h);
        }
    }

    #[inline]
    fn end_token(&mut self, start: usize, h: u64) {
        self.spans.push((start as u32, self.text.len() as u32));
        self.hashes.push(mix64(h));
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        let (s, e) = self.spans[i];
        &self.text[s as usize..e as usize]
    }

    /// Whether tokens `start..start+len` spell `joined` (tokens separated by one space).
    fn spells(&self, start: usize, len: usize, joined: &str) -> bool {
        let mut parts = joined.split(' ');
        (start..start + len).all(|i| parts.next() == Some(self.token(i))) && parts.next().is_none()
    }
}

fn combine(h: u64, t: u64) -> u64 {
    h.wrapping_mul(BASE).wrapping_add(t)
}

fn sequence_hash(tokens: &[u64]) -> u64 {
    tokens.iter().fold(0, |h, &t| combine(h, t))
}

struct BitFilter {
    bits: Vec<u64>,
}

impl BitFilter {
    fn new() -> Self {
        Self { bits: vec![0; 1 << (FILTER_BITS - 6)] }
    }

    #[inline]
    fn slot(h: u64) -> usize {
        (mix64(h) >> (64 - FILTER_BITS)) as usize
    }

    fn insert(&mut self, h: u64) {
        let s = Self::slot(h);
        self.bits[s >> 6] |= 1 << (s & 63);
    }

    #[inline]
    fn may_contain(&self, h: u64) -> bool {
        let s = Self::slot(h);
        self.bits[s >> 6] & (1 << (s & 63)) != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContaminationMatch {
    /// The matched n-gram or short entry, normalized and space-joined.
    pub matched: String,
    pub benchmark: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    PairText,
    SourcePage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub question: String,
    pub answer: String,
    pub benchmark: String,
}

/// Immutable after construction; share it read-only across workers.
pub struct BenchmarkIndex {
    n: usize,
    grams: FxHashMap<u64, Vec<u32>>,
    gram_text: Vec<Box<str>>,
    gram_source: Vec<u16>,
    short: FxHashMap<(u64, u8), Vec<u32>>,
    short_text: Vec<Box<str>>,
    short_source: Vec<u16>,
    short_lengths: u64,
    gram_filter: BitFilter,
    first_filter: BitFilter,
    benchmarks: Vec<String>,
    /// Entries per benchmark.
    pub source_counts: BTreeMap<String, u64>,
    /// n-grams inserted, counting repeats.
    pub gram_occurrences: u64,
    /// Entries skipped for missing or non-string fields.
    pub skipped_entries: u64,
}

impl BenchmarkIndex {
    pub fn new(n: usize) -> Result<Self> {
        if !(2..=64).contains(&n) {
            return Err(Error::Config(format!("n-gram order {n} must be in 2..=64")));
        }
        Ok(Self {
            n,
            grams: FxHashMap::default(),
            gram_text: Vec::new(),
            gram_source: Vec::new(),
            short: FxHashMap::default(),
            short_text: Vec::new(),
            short_source: Vec::new(),
            short_lengths: 0,
            gram_filter: BitFilter::new(),
            first_filter: BitFilter::new(),
            benchmarks: Vec::new(),
            source_counts: BTreeMap::new(),
            gram_occurrences: 0,
            skipped_entries: 0,
        })
    }

    pub fn from_entries<'a>(entries: impl IntoIterator<Item = &'a BenchmarkEntry>, n: usize) -> Result<Self> {
        let mut index = Self::new(n)?;
        let mut tokens = Tokens::default();
        for e in entries {
            index.add_entry(e, &mut tokens);
        }
        Ok(index)
    }

    /// Reads JSONL files with `question`, `answer` and optional `benchmark`
    /// (defaulting to the file stem). Directories contribute their `*.jsonl` files.
    pub fn build(paths: &[PathBuf], n: usize) -> Result<Self> {
        let mut index = Self::new(n)?;
        let mut tokens = Tokens::default();
        for file in benchmark_files(paths)? {
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("benchmark").to_owned();
            let text = std::fs::read_to_string(&file).at(&file)?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let Ok(v) = serde_json::from_str::<serde_json::Value>(line) else {
                    index.skipped_entries += 1;
                    continue;
                };
                let field = |k: &str| v.get(k).and_then(|x| x.as_str()).map(str::to_owned);
                match (field("question"), field("answer")) {
                    (Some(question), Some(answer)) => {
                        let benchmark = field("benchmark").unwrap_or_else(|| stem.clone());
                        index.add_entry(&BenchmarkEntry { question, answer, benchmark }, &mut tokens);
                    }
                    _ => index.skipped_entries += 1,
                }
            }
        }
        Ok(index)
    }

    fn source_id(&mut self, name: &str) -> u16 {
        if let Some(i) = self.benchmarks.iter().position(|b| b == name) {
            return i as u16;
        }
        self.benchmarks.push(name.to_owned());
        (self.benchmarks.len() - 1) as u16
    }

    pub fn add_entry(&mut self, entry: &BenchmarkEntry, tokens: &mut Tokens) {
        let src = self.source_id(&entry.benchmark);
        *self.source_counts.entry(entry.benchmark.clone()).or_default() += 1;
        for field in [&entry.question, &entry.answer] {
            tokens.fill(field);
            let len = tokens.len();
            if len == 0 {
                continue;
            }
            if len < self.n {
                let h = sequence_hash(&tokens.hashes);
                let joined = join(tokens, 0, len);
                let ids = self.short.entry((h, len as u8)).or_default();
                if ids.iter().any(|&i| *self.short_text[i as usize] == *joined) {
                    continue;
                }
                ids.push(self.short_text.len() as u32);
                self.short_text.push(joined.into());
                self.short_source.push(src);
                self.short_lengths |= 1 << len;
                self.first_filter.insert(tokens.hashes[0]);
                continue;
            }
            for start in 0..=len - self.n {
                self.gram_occurrences += 1;
                let h = sequence_hash(&tokens.hashes[start..start + self.n]);
                let joined = join(tokens, start, self.n);
                let ids = self.grams.entry(h).or_default();
                if ids.iter().any(|&i| *self.gram_text[i as usize] == *joined) {
                    continue;
                }
                ids.push(self.gram_text.len() as u32);
                self.gram_text.push(joined.into());
                self.gram_source.push(src);
                self.gram_filter.insert(h);
            }
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn distinct_grams(&self) -> usize {
        self.gram_text.len()
    }

    pub fn short_entries(&self) -> usize {
        self.short_text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gram_text.is_empty() && self.short_text.is_empty()
    }

    pub fn grams(&self) -> impl Iterator<Item = &str> {
        self.gram_text.iter().map(|g| &**g)
    }

    pub fn is_contaminated(&self, text: &str) -> Option<ContaminationMatch> {
        let mut tokens = Tokens::default();
        self.check(text, &mut tokens)
    }

    /// Like [`Self::is_contaminated`] with caller-owned buffers.
    pub fn check(&self, text: &str, tokens: &mut Tokens) -> Option<ContaminationMatch> {
        if self.is_empty() {
            return None;
        }
        tokens.fill(text);
        let len = tokens.len();
        let hashes = &tokens.hashes;
        if !self.gram_text.is_empty() && len >= self.n {
            let top = (0..self.n - 1).fold(1u64, |p, _| p.wrapping_mul(BASE));
            let mut h = sequence_hash(&hashes[..self.n]);
            for start in 0..=len - self.n {
                if start > 0 {
                    h = combine(h.wrapping_sub(hashes[start - 1].wrapping_mul(top)), hashes[start + self.n - 1]);
                }
                if self.gram_filter.may_contain(h) {
                    if let Some(ids) = self.grams.get(&h) {
                        for &id in ids {
                            if tokens.spells(start, self.n, &self.gram_text[id as usize]) {
                                return Some(self.hit(&self.gram_text[id as usize], self.gram_source[id as usize]));
                            }
                        }
                    }
                }
            }
        }
        if self.short_lengths != 0 {
            let max_len = 63 - self.short_lengths.leading_zeros() as usize;
            for start in 0..len {
                if !self.first_filter.may_contain(hashes[start]) {
                    continue;
                }
                let mut h = 0u64;
                for l in 1..=max_len.min(len - start) {
                    h = combine(h, hashes[start + l - 1]);
                    if self.short_lengths & (1 << l) == 0 {
                        continue;
                    }
                    if let Some(ids) = self.short.get(&(h, l as u8)) {
                        for &id in ids {
                            if tokens.spells(start, l, &self.short_text[id as usize]) {
                                return Some(self.hit(&self.short_text[id as usize], self.short_source[id as usize]));
                            }
                        }
                    }
                }
            }
        }
        None
    }

    fn hit(&self, matched: &str, src: u16) -> ContaminationMatch {
        ContaminationMatch { matched: matched.to_owned(), benchmark: self.benchmarks[src as usize].clone() }
    }
}

fn join(tokens: &Tokens, start: usize, len: usize) -> String {
    let mut s = String::new();
    for i in start..start + len {
        if i > start {
            s.push(' ');
        }
        s.push_str(tokens.token(i));
    }
    s
}

pub fn benchmark_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .at(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(Error::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "benchmark path not found"),
            });
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMatch {
    pub candidate_id: String,
    pub matched: String,
    pub benchmark: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub checked: u64,
    pub dropped: u64,
    /// Pairs checked on their own text because the source page was missing.
    pub page_fallbacks: u64,
    pub bytes_checked: u64,
    pub matches: Vec<PairMatch>,
    pub matches_truncated: bool,
}

impl ContaminationReport {
    fn record(&mut self, id: &str, m: ContaminationMatch) {
        self.dropped += 1;
        if self.matches.len() < MATCH_LOG_CAP {
            self.matches.push(PairMatch { candidate_id: id.to_owned(), matched: m.matched, benchmark: m.benchmark });
        } else {
            self.matches_truncated = true;
        }
    }
}

/// Drops contaminated pairs. Under [`Scope::SourcePage`] the verdict is per
/// page, looked up by doc id through `page`; pairs whose page is unknown are
/// checked on their own text.
pub fn filter_contaminated<'p>(
    index: &BenchmarkIndex,
    pairs: Vec<RefinedQA>,
    scope: Scope,
    page: impl Fn(&str) -> Option<Cow<'p, str>>,
) -> (Vec<RefinedQA>, ContaminationReport) {
    let mut report = ContaminationReport::default();
    let mut tokens = Tokens::default();
    let mut page_verdicts: FxHashMap<String, Option<ContaminationMatch>> = FxHashMap::default();
    let mut kept = Vec::with_capacity(pairs.len());
    for pair in pairs {
        report.checked += 1;
        let page_text = match scope {
            Scope::SourcePage => page(&pair.doc_id),
            Scope::PairText => None,
        };
        let verdict = match page_text {
            Some(text) => match page_verdicts.get(&pair.doc_id) {
                Some(v) => v.clone(),
                None => {
                    report.bytes_checked += text.len() as u64;
                    let v = index.check(&text, &mut tokens);
                    page_verdicts.insert(pair.doc_id.clone(), v.clone());
                    v
                }
            },
            None => {
                if scope == Scope::SourcePage {
                    report.page_fallbacks += 1;
                }
                report.bytes_checked += (pair.question.len() + pair.answer.len()) as u64;
                index.check(&pair.question, &mut tokens).or_else(|| index.check(&pair.answer, &mut tokens))
            }
        };
        match verdict {
            Some(m) => report.record(&pair.candidate_id, m),
            None => kept.push(pair),
        }
    }
    (kept, report)
}

pub fn dedup_key(question: &str, answer: &str) -> String {
    let key = format!("{}§{}", normalize(question).join(" "), normalize(answer).join(" "));
    sha256_hex(key.as_bytes())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub unique: u64,
    pub duplicates: u64,
}

/// Exact dedup on normalized question and answer; the first pair in
/// (candidate id, refiner) order wins.
pub fn dedup(mut pairs: Vec<RefinedQA>) -> (Vec<RefinedQA>, DedupReport) {
    pairs.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id).then_with(|| a.refiner.cmp(&b.refiner)));
    let mut seen = FxHashSet::default();
    let before = pairs.len();
    pairs.retain(|p| seen.insert(dedup_key(&p.question, &p.answer)));
    let report = DedupReport { unique: pairs.len() as u64, duplicates: (before - pairs.len()) as u64 };
    (pairs, report)
}

//! Supervised linear text classifier over averaged word and hashed word
//! n-gram embeddings (the fastText recipe), trained with plain softmax SGD.
//!
//! Input rows are laid out as `[vocabulary words | n-gram buckets]`. A
//! document's hidden vector is the mean of its feature rows, and the label
//! distribution is `softmax(output · hidden)`.

mod io;
mod score;
mod train;

use std::sync::OnceLock;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{fnv1a64, fnv1a64_byte, fnv1a64_extend, FastMod};

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use score::{score_corpus, score_documents, RecallReport, ScoreOptions};
pub use train::{train, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub max_ngram: usize,
    pub min_count: usize,
    pub buckets: usize,
    pub labels: Vec<String>,
    pub seed: u64,
    /// 1 trains deterministically; more workers share weights without locks.
    pub workers: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            epochs: 3,
            lr: 0.1,
            max_ngram: 3,
            min_count: 3,
            buckets: 2_000_000,
            labels: vec!["negative".into(), "positive".into()],
            seed: 0,
            workers: 1,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("classifier.{m}")));
        if self.dim == 0 {
            return fail("dim: must be >= 1");
        }
        if self.epochs == 0 {
            return fail("epochs: must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr: must be > 0");
        }
        if !(1..=5).contains(&self.max_ngram) {
            return fail("max_ngram: must be in 1..=5");
        }
        if self.min_count == 0 {
            return fail("min_count: must be >= 1");
        }
        if self.buckets == 0 {
            return fail("buckets: must be >= 1");
        }
        if self.buckets > u32::MAX as usize / 2 {
            return fail("buckets: too large for 32-bit row ids");
        }
        if self.labels.len() < 2 {
            return fail("labels: need at least two labels");
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return fail(&format!("labels: duplicate label {l:?}"));
            }
        }
        if self.workers == 0 {
            return fail("workers: must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Words kept for their own embedding row, in row order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: FxHashMap<String, u32>,
}

impl Vocab {
    /// Keeps words seen at least `min_count` times, most frequent first
    /// (ties by byte order).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: FxHashMap<String, u64> = FxHashMap::default();
        let mut buf = String::new();
        for text in texts {
            for tok in text.split_whitespace() {
                buf.clear();
                lowercase_into(tok, &mut buf);
                match counts.get_mut(buf.as_str()) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(buf.clone(), 1);
                    }
                }
            }
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count as u64)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_entries(kept)
    }

    pub fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let mut index = FxHashMap::default();
        let mut words = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (i, (w, c)) in entries.into_iter().enumerate() {
            index.insert(w.clone(), i as u32);
            words.push(w);
            counts.push(c);
        }
        Self {
            words,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Row ids of a document: vocabulary words first, then hashed n-grams.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureVector {
    pub ids: Vec<u32>,
}

/// Reusable buffers for featurization.
#[derive(Debug, Default)]
pub struct Scratch {
    buf: String,
    spans: Vec<(u32, u32)>,
    pub(crate) ids: Vec<u32>,
}

pub(crate) fn lowercase_into(tok: &str, out: &mut String) {
    if tok.is_ascii() {
        out.extend(tok.bytes().map(|b| b.to_ascii_lowercase() as char));
    } else {
        for c in tok.chars() {
            out.extend(c.to_lowercase());
        }
    }
}

pub fn featurize(vocab: &Vocab, config: &ClassifierConfig, text: &str) -> FeatureVector {
    let mut scratch = Scratch::default();
    featurize_into(vocab, config.max_ngram, config.buckets, text, &mut scratch);
    FeatureVector {
        ids: std::mem::take(&mut scratch.ids),
    }
}

/// Fills `scratch.ids`. An n-gram's bucket is FNV-1a-64 of its tokens joined
/// by single spaces, modulo `buckets`; it hashes the lowercased tokens
/// whether or not they are in the vocabulary.
pub(crate) fn featurize_into(
    vocab: &Vocab,
    max_ngram: usize,
    buckets: usize,
    text: &str,
    scratch: &mut Scratch,
) {
    let Scratch { buf, spans, ids } = scratch;
    ids.clear();
    for_each_feature(vocab, max_ngram, buckets, text, buf, spans, |id| ids.push(id));
}

/// Calls `f` with every row id of `text`, in [`FeatureVector`] order.
#[inline]
fn for_each_feature(
    vocab: &Vocab,
    max_ngram: usize,
    buckets: usize,
    text: &str,
    buf: &mut String,
    spans: &mut Vec<(u32, u32)>,
    mut f: impl FnMut(u32),
) {
    buf.clear();
    spans.clear();
    tokenize_lower(text, buf, spans);
    for &(s, e) in spans.iter() {
        if let Some(id) = vocab.get(&buf[s as usize..e as usize]) {
            f(id);
        }
    }
    if max_ngram < 2 {
        return;
    }
    let bytes = buf.as_bytes();
    let word = |i: usize| {
        let (s, e) = spans[i];
        &bytes[s as usize..e as usize]
    };
    let base = vocab.len() as u64;
    let modulus = FastMod::new(buckets as u64);
    for i in 0..spans.len() {
        let mut h = fnv1a64(word(i));
        for j in i + 1..spans.len().min(i + max_ngram) {
            h = fnv1a64_extend(fnv1a64_byte(h, b' '), word(j));
            f((base + modulus.rem(h)) as u32);
        }
    }
}

/// Same tokens as `split_whitespace` followed by [`lowercase_into`] on each;
/// `spans` index into `buf`.
fn tokenize_lower(text: &str, buf: &mut String, spans: &mut Vec<(u32, u32)>) {
    if text.is_ascii() {
        // lowercase everything at once; separators stay in `buf` between spans
        buf.push_str(text);
        buf.make_ascii_lowercase();
        let bytes = buf.as_bytes();
        let mut start = None;
        for (i, &b) in bytes.iter().enumerate() {
            let space = ASCII_SPACE[b as usize];
            match (space, start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    spans.push((s as u32, i as u32));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push((s as u32, bytes.len() as u32));
        }
        return;
    }
    let bytes = text.as_bytes();
    let mut open: Option<usize> = None;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b < 0x80 {
            if matches!(b, b' ' | b'\t' | b'\n' | 0x0b | 0x0c | b'\r') {
                if let Some(s) = open.take() {
                    spans.push((s as u32, buf.len() as u32));
                }
                i += 1;
                continue;
            }
            let run = i;
            while i < bytes.len() && bytes[i] < 0x80 && !matches!(bytes[i], b' ' | b'\t' | b'\n' | 0x0b | 0x0c | b'\r') {
                i += 1;
            }
            open.get_or_insert(buf.len());
            let at = buf.len();
            buf.push_str(&text[run..i]);
            buf[at..].make_ascii_lowercase();
        } else {
            let c = text[i..].chars().next().expect("char boundary");
            i += c.len_utf8();
            if c.is_whitespace() {
                if let Some(s) = open.take() {
                    spans.push((s as u32, buf.len() as u32));
                }
            } else {
                open.get_or_insert(buf.len());
                buf.extend(c.to_lowercase());
            }
        }
    }
    if let Some(s) = open {
        spans.push((s as u32, buf.len() as u32));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probability: f64,
}

/// A trained model. Immutable once built and safe to share across threads.
#[derive(Debug)]
pub struct TextClassifier {
    config: ClassifierConfig,
    vocab: Vocab,
    /// (vocab + buckets) x dim, row-major.
    input: Vec<f32>,
    /// labels x dim, row-major.
    output: Vec<f32>,
    /// Per-row label logits, `input · outputᵀ`, in fixed point so that a
    /// document's sum does not depend on token order; built on first use.
    projected: OnceLock<Vec<i64>>,
}

impl Clone for TextClassifier {
    fn clone(&self) -> Self {
        Self::from_parts(
            self.config.clone(),
            self.vocab.clone(),
            self.input.clone(),
            self.output.clone(),
        )
        .expect("clone of a valid model")
    }
}

impl TextClassifier {
    pub fn from_parts(
        config: ClassifierConfig,
        vocab: Vocab,
        input: Vec<f32>,
        output: Vec<f32>,
    ) -> Result<Self> {
        config.validate()?;
        let rows = vocab.len() + config.buckets;
        if input.len() != rows * config.dim {
            return Err(Error::ModelFormat(format!(
                "input matrix has {} values, expected {rows} x {}",
                input.len(),
                config.dim
            )));
        }
        if output.len() != config.labels.len() * config.dim {
            return Err(Error::ModelFormat(format!(
                "output matrix has {} values, expected {} x {}",
                output.len(),
                config.labels.len(),
                config.dim
            )));
        }
        Ok(Self {
            config,
            vocab,
            input,
            output,
            projected: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn input_weights(&self) -> &[f32] {
        &self.input
    }

    pub fn output_weights(&self) -> &[f32] {
        &self.output
    }

    pub fn labels(&self) -> &[String] {
        &self.config.labels
    }

    pub fn rows(&self) -> usize {
        self.vocab.len() + self.config.buckets
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.config.labels.iter().position(|l| l == name)
    }

    /// The recall target: the label named "positive", else the last label.
    pub fn positive_label(&self) -> usize {
        self.label_index("positive")
            .unwrap_or(self.config.labels.len() - 1)
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        featurize(&self.vocab, &self.config, text)
    }

    pub fn scale_output(&mut self, factor: f32) {
        for w in &mut self.output {
            *w *= factor;
        }
        self.projected = OnceLock::new();
    }

    fn projected(&self) -> &[i64] {
        self.projected.get_or_init(|| {
            let dim = self.config.dim;
            let labels = self.config.labels.len();
            let mut table = vec![0i64; self.rows() * labels];
            for (row, out) in self.input.chunks_exact(dim).zip(table.chunks_exact_mut(labels)) {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = to_fixed(dot(row, &self.output[k * dim..(k + 1) * dim]));
                }
            }
            table
        })
    }

    /// Label distribution for `text`.
    pub fn probabilities(&self, text: &str) -> Vec<f64> {
        let mut scratch = Scratch::default();
        self.probabilities_with(text, &mut scratch)
    }

    pub fn probabilities_with(&self, text: &str, scratch: &mut Scratch) -> Vec<f64> {
        let mut logits = vec![0f64; self.config.labels.len()];
        self.logits_into(text, scratch, &mut logits);
        softmax_in_place(&mut logits);
        logits
    }

    /// Mean per-row logits of `text`. Each table row is prefetched as its
    /// feature is hashed and summed in a second pass, by which time most
    /// rows are in cache.
    pub(crate) fn logits_into(&self, text: &str, scratch: &mut Scratch, logits: &mut [f64]) {
        let table = self.projected();
        let labels = logits.len();
        let Scratch { buf, spans, ids } = scratch;
        ids.clear();
        let c = &self.config;
        for_each_feature(&self.vocab, c.max_ngram, c.buckets, text, buf, spans, |id| {
            prefetch(&table[id as usize * labels]);
            ids.push(id);
        });
        logits.iter_mut().for_each(|l| *l = 0.0);
        if ids.is_empty() {
            return;
        }
        let inv = 1.0 / (FIXED_ONE * ids.len() as f64);
        if labels == 2 {
            let (mut a0, mut a1) = (0i128, 0i128);
            for &id in ids.iter() {
                let at = id as usize * 2;
                a0 += table[at] as i128;
                a1 += table[at + 1] as i128;
            }
            logits[0] = a0 as f64 * inv;
            logits[1] = a1 as f64 * inv;
            return;
        }
        let mut acc = vec![0i128; labels];
        for &id in ids.iter() {
            let row = &table[id as usize * labels..(id as usize + 1) * labels];
            for (a, &r) in acc.iter_mut().zip(row) {
                *a += r as i128;
            }
        }
        for (l, a) in logits.iter_mut().zip(acc) {
            *l = a as f64 * inv;
        }
    }

    /// Argmax label and its probability; ties go to the lowest label index.
    pub fn predict(&self, text: &str) -> Prediction {
        argmax(&self.probabilities(text))
    }

    /// Reference path: averages the embedding rows, then applies the output
    /// layer. Agrees with [`Self::probabilities`] up to float rounding.
    pub fn probabilities_dense(&self, text: &str) -> Vec<f64> {
        let ids = self.featurize(text).ids;
        let labels = self.config.labels.len();
        let mut logits = vec![0f64; labels];
        if !ids.is_empty() {
            let dim = self.config.dim;
            let mut hidden = vec![0f32; dim];
            for &id in &ids {
                let row = &self.input[id as usize * dim..(id as usize + 1) * dim];
                hidden.iter_mut().zip(row).for_each(|(h, r)| *h += r);
            }
            let inv = 1.0 / ids.len() as f32;
            hidden.iter_mut().for_each(|h| *h *= inv);
            for (k, l) in logits.iter_mut().enumerate() {
                *l = dot(&hidden, &self.output[k * dim..(k + 1) * dim]) as f64;
            }
        }
        softmax_in_place(&mut logits);
        logits
    }
}

#[inline(always)]
fn prefetch<T>(p: &T) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: a prefetch is only a cache hint; it never faults or writes.
    unsafe {
        std::arch::x86_64::_mm_prefetch::<{ std::arch::x86_64::_MM_HINT_T0 }>(p as *const T as *const i8);
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = p;
}

// ASCII bytes that `char::is_whitespace` accepts
const ASCII_SPACE: [bool; 128] = {
    let mut t = [false; 128];
    t[b' ' as usize] = true;
    let mut b = 0x09;
    while b <= 0x0d {
        t[b] = true;
        b += 1;
    }
    t
};

const FIXED_ONE: f64 = (1u64 << 32) as f64;

fn to_fixed(x: f32) -> i64 {
    (x as f64 * FIXED_ONE).round() as i64
}

pub(crate) fn argmax(probs: &[f64]) -> Prediction {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Prediction {
        label: best,
        probability: probs[best],
    }
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    dot, featurize_into, softmax_in_place, ClassifierConfig, LabeledExample, Scratch,
    TextClassifier, Vocab,
};
use crate::error::{Error, Result};

// Weight matrices are viewed as `[AtomicU32]` while training so that the
// multi-worker mode can update shared rows without locks and without a data
// race; a single worker takes the same path and is fully deterministic.
const _: () = assert!(std::mem::align_of::<AtomicU32>() == std::mem::align_of::<f32>());
const _: () = assert!(std::mem::size_of::<AtomicU32>() == std::mem::size_of::<f32>());

const INIT_CHUNK_ROWS: usize = 1 << 14;
// init chunks use streams 0.., the example order uses this one
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over the training set after each epoch.
    pub epoch_losses: Vec<f64>,
    pub examples: usize,
    pub vocab_size: usize,
    /// Examples with no features; they are never used for an update.
    pub empty_examples: usize,
}

pub fn train(
    examples: &[LabeledExample],
    config: &ClassifierConfig,
) -> Result<(TextClassifier, TrainReport)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut targets = Vec::with_capacity(examples.len());
    let mut per_label = vec![0usize; config.labels.len()];
    for ex in examples {
        let Some(t) = config.labels.iter().position(|l| *l == ex.label) else {
            return Err(Error::Config(format!(
                "example label {:?} is not one of {:?}",
                ex.label, config.labels
            )));
        };
        per_label[t] += 1;
        targets.push(t);
    }
    if let Some(missing) = per_label.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!(
            "no training examples for label {:?}",
            config.labels[missing]
        )));
    }

    let vocab = Vocab::build(examples.iter().map(|e| e.text.as_str()), config.min_count);
    let dim = config.dim;
    let rows = vocab.len() + config.buckets;
    let labels = config.labels.len();

    let mut input = vec![0f32; rows * dim];
    init_uniform(&mut input, dim, config.seed);
    let mut output = vec![0f32; labels * dim];

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let total_steps = (config.epochs * examples.len()) as u64;
    let step = AtomicU64::new(0);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    let mut empty_examples = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        {
            let ctx = Sgd {
                input: as_atomic(&mut input),
                output: as_atomic(&mut output),
                vocab: &vocab,
                config,
                examples,
                targets: &targets,
                step: &step,
                total_steps,
            };
            if config.workers == 1 {
                empty_examples = ctx.run(&order);
            } else {
                let chunk = order.len().div_ceil(config.workers);
                let ctx = &ctx;
                empty_examples = std::thread::scope(|s| {
                    let handles: Vec<_> = order
                        .chunks(chunk)
                        .map(|part| s.spawn(move || ctx.run(part)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("training worker panicked"))
                        .sum()
                });
            }
        }
        epoch_losses.push(mean_loss(&input, &output, &vocab, config, examples, &targets));
    }

    if input.iter().chain(&output).any(|w| !w.is_finite()) {
        return Err(Error::stage("train", "weights diverged to non-finite values"));
    }
    let report = TrainReport {
        epoch_losses,
        examples: examples.len(),
        vocab_size: vocab.len(),
        empty_examples,
    };
    let model = TextClassifier::from_parts(config.clone(), vocab, input, output)?;
    Ok((model, report))
}

/// Uniform in [-1/dim, 1/dim]; rows are filled in fixed-size chunks, each
/// from its own seeded stream, so the result does not depend on threading.
fn init_uniform(input: &mut [f32], dim: usize, seed: u64) {
    let bound = 1.0 / dim as f32;
    input
        .par_chunks_mut(INIT_CHUNK_ROWS * dim)
        .enumerate()
        .for_each(|(chunk, values)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            for v in values {
                *v = (rng.random::<f32>() * 2.0 - 1.0) * bound;
            }
        });
}

fn as_atomic(weights: &mut [f32]) -> &[AtomicU32] {
    // SAFETY: AtomicU32 has the size and alignment of f32 (asserted above),
    // the exclusive borrow guarantees no non-atomic access for the lifetime
    // of the view, and every access through the view is atomic.
    unsafe { std::slice::from_raw_parts(weights.as_mut_ptr() as *const AtomicU32, weights.len()) }
}

#[inline]
fn load(w: &AtomicU32) -> f32 {
    f32::from_bits(w.load(Ordering::Relaxed))
}

#[inline]
fn add(w: &AtomicU32, v: f32) {
    w.store((load(w) + v).to_bits(), Ordering::Relaxed);
}

struct Sgd<'a> {
    input: &'a [AtomicU32],
    output: &'a [AtomicU32],
    vocab: &'a Vocab,
    config: &'a ClassifierConfig,
    examples: &'a [LabeledExample],
    targets: &'a [usize],
    step: &'a AtomicU64,
    total_steps: u64,
}

impl Sgd<'_> {
    /// Returns the number of examples skipped for having no features.
    fn run(&self, order: &[usize]) -> usize {
        let dim = self.config.dim;
        let labels = self.config.labels.len();
        let mut scratch = Scratch::default();
        let mut hidden = vec![0f32; dim];
        let mut grad = vec![0f32; dim];
        let mut probs = vec![0f64; labels];
        let mut empty = 0;
        for &idx in order {
            let t = self.step.fetch_add(1, Ordering::Relaxed);
            let lr = (self.config.lr * (1.0 - t as f64 / self.total_steps as f64)) as f32;
            featurize_into(
                self.vocab,
                self.config.max_ngram,
                self.config.buckets,
                &self.examples[idx].text,
                &mut scratch,
            );
            let ids = &scratch.ids;
            if ids.is_empty() {
                empty += 1;
                continue;
            }
            hidden.iter_mut().for_each(|h| *h = 0.0);
            for &id in ids {
                let row = &self.input[id as usize * dim..(id as usize + 1) * dim];
                hidden.iter_mut().zip(row).for_each(|(h, w)| *h += load(w));
            }
            let inv = 1.0 / ids.len() as f32;
            hidden.iter_mut().for_each(|h| *h *= inv);

            for (k, p) in probs.iter_mut().enumerate() {
                let row = &self.output[k * dim..(k + 1) * dim];
                *p = row.iter().zip(&hidden).map(|(w, h)| load(w) * h).sum::<f32>() as f64;
            }
            softmax_in_place(&mut probs);

            grad.iter_mut().for_each(|g| *g = 0.0);
            let target = self.targets[idx];
            for (k, &p) in probs.iter().enumerate() {
                let y = if k == target { 1.0 } else { 0.0 };
                let alpha = lr * (y - p) as f32;
                let row = &self.output[k * dim..(k + 1) * dim];
                for ((g, w), h) in grad.iter_mut().zip(row).zip(&hidden) {
                    *g += alpha * load(w);
                    add(w, alpha * h);
                }
            }
            grad.iter_mut().for_each(|g| *g *= inv);
            for &id in ids {
                let row = &self.input[id as usize * dim..(id as usize + 1) * dim];
                row.iter().zip(&grad).for_each(|(w, g)| add(w, *g));
            }
        }
        empty
    }
}

fn mean_loss(
    input: &[f32],
    output: &[f32],
    vocab: &Vocab,
    config: &ClassifierConfig,
    examples: &[LabeledExample],
    targets: &[usize],
) -> f64 {
    let dim = config.dim;
    let mut scratch = Scratch::default();
    let mut hidden = vec![0f32; dim];
    let mut probs = vec![0f64; config.labels.len()];
    let mut total = 0.0;
    for (ex, &target) in examples.iter().zip(targets) {
        featurize_into(vocab, config.max_ngram, config.buckets, &ex.text, &mut scratch);
        hidden.iter_mut().for_each(|h| *h = 0.0);
        for &id in &scratch.ids {
            let row = &input[id as usize * dim..(id as usize + 1) * dim];
            hidden.iter_mut().zip(row).for_each(|(h, w)| *h += w);
        }
        if !scratch.ids.is_empty() {
            let inv = 1.0 / scratch.ids.len() as f32;
            hidden.iter_mut().for_each(|h| *h *= inv);
        }
        for (k, p) in probs.iter_mut().enumerate() {
            *p = dot(&hidden, &output[k * dim..(k + 1) * dim]) as f64;
        }
        softmax_in_place(&mut probs);
        total -= probs[target].max(1e-300).ln();
    }
    total / examples.len() as f64
}

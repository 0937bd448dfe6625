use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::classifier::LabeledExample;
use crate::corpus::{DomainKey, RawDocument};
use crate::error::{Error, Result};

/// Uniform fixed-size sample of a stream (Algorithm R).
pub struct Reservoir<T> {
    cap: usize,
    seen: u64,
    items: Vec<T>,
    rng: ChaCha8Rng,
}

impl<T> Reservoir<T> {
    pub fn new(cap: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { cap, seen: 0, items: Vec::with_capacity(cap.min(1 << 16)), rng }
    }

    pub fn offer(&mut self, item: T) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(item);
        } else if self.cap > 0 {
            let j = self.rng.random_range(0..self.seen);
            if (j as usize) < self.cap {
                self.items[j as usize] = item;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The sample in random order, so any prefix is itself uniform.
    pub fn into_shuffled(mut self) -> Vec<T> {
        self.items.shuffle(&mut self.rng);
        self.items
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainsetReport {
    pub positive_pool: u64,
    pub rejected_pool: u64,
    pub general_pool: u64,
    pub positives: u64,
    pub negatives_rejected: u64,
    pub negatives_general: u64,
}

const POSITIVE_STREAM: u64 = 1;
const REJECTED_STREAM: u64 = 2;
const GENERAL_STREAM: u64 = 3;
const ORDER_STREAM: u64 = 4;

/// Positives from recalled documents of kept domains; negatives split evenly
/// between rejected-domain documents and general documents, with either side
/// topping up the other when short. Each class holds at most `per_class_cap`.
#[allow(clippy::too_many_arguments)]
pub fn build_round2_trainset(
    kept: &FxHashSet<DomainKey>,
    rejected: &FxHashSet<DomainKey>,
    recalled: impl IntoIterator<Item = RawDocument>,
    general: impl IntoIterator<Item = RawDocument>,
    per_class_cap: usize,
    seed: u64,
    labels: (&str, &str),
) -> Result<(Vec<LabeledExample>, TrainsetReport)> {
    if let Some(d) = kept.intersection(rejected).next() {
        return Err(Error::Integrity(format!("domain {d} is both kept and rejected")));
    }
    let (positive, negative) = labels;
    let mut pos = Reservoir::new(per_class_cap, seed, POSITIVE_STREAM);
    let mut rej = Reservoir::new(per_class_cap, seed, REJECTED_STREAM);
    let mut gen = Reservoir::new(per_class_cap, seed, GENERAL_STREAM);
    for doc in recalled {
        let Ok(domain) = doc.domain() else { continue };
        if kept.contains(&domain) {
            pos.offer(doc.content().into_owned());
        } else if rejected.contains(&domain) {
            rej.offer(doc.content().into_owned());
        }
    }
    for doc in general {
        gen.offer(doc.content().into_owned());
    }
    if pos.is_empty() {
        return Err(Error::stage("train2", "no recalled documents from kept domains"));
    }

    let half_rej = per_class_cap / 2;
    let half_gen = per_class_cap - half_rej;
    let mut take_rej = rej.len().min(half_rej);
    let take_gen = gen.len().min(per_class_cap - take_rej);
    if take_gen < half_gen {
        take_rej = rej.len().min(per_class_cap - take_gen);
    }

    let mut report = TrainsetReport {
        positive_pool: pos.seen(),
        rejected_pool: rej.seen(),
        general_pool: gen.seen(),
        positives: pos.len() as u64,
        negatives_rejected: take_rej as u64,
        negatives_general: take_gen as u64,
    };
    let mut out: Vec<LabeledExample> = Vec::with_capacity(pos.len() + take_rej + take_gen);
    out.extend(pos.into_shuffled().into_iter().map(|t| LabeledExample::new(t, positive)));
    out.extend(rej.into_shuffled().into_iter().take(take_rej).map(|t| LabeledExample::new(t, negative)));
    out.extend(gen.into_shuffled().into_iter().take(take_gen).map(|t| LabeledExample::new(t, negative)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ORDER_STREAM);
    out.shuffle(&mut rng);
    report.positives = out.iter().filter(|e| e.label == positive).count() as u64;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;

    fn docs(host: &str, n: usize) -> Vec<RawDocument> {
        (0..n)
            .map(|i| {
                RawDocument::new(
                    &format!("https://{host}/{i}"),
                    DateTime::from_timestamp(i as i64, 0).unwrap(),
                    format!("<p>{host} {i}</p>"),
                )
                .unwrap()
            })
            .collect()
    }

    fn set(names: &[&str]) -> FxHashSet<DomainKey> {
        names.iter().map(|n| crate::corpus::root_domain(&format!("https://{n}/")).unwrap()).collect()
    }

    const LABELS: (&str, &str) = ("positive", "negative");

    #[test]
    fn caps_and_even_split() {
        let mut recalled = docs("good.com", 500);
        recalled.extend(docs("bad.com", 500));
        let (out, report) = build_round2_trainset(
            &set(&["good.com"]),
            &set(&["bad.com"]),
            recalled,
            docs("general.net", 500),
            200,
            3,
            LABELS,
        )
        .unwrap();
        assert_eq!(out.iter().filter(|e| e.label == "positive").count(), 200);
        assert_eq!(out.iter().filter(|e| e.label == "negative").count(), 200);
        assert_eq!(out.iter().filter(|e| e.text.trim_start().starts_with("bad.com")).count(), 100);
        assert_eq!(out.iter().filter(|e| e.text.trim_start().starts_with("general.net")).count(), 100);
        assert_eq!((report.negatives_rejected, report.negatives_general), (100, 100));
        assert!(out.iter().filter(|e| e.label == "positive").all(|e| e.text.trim_start().starts_with("good.com")));
    }

    #[test]
    fn short_side_is_topped_up() {
        let mut recalled = docs("good.com", 50);
        recalled.extend(docs("bad.com", 10));
        let (out, r) = build_round2_trainset(
            &set(&["good.com"]), &set(&["bad.com"]), recalled, docs("g.net", 100), 40, 1, LABELS,
        )
        .unwrap();
        assert_eq!((r.negatives_rejected, r.negatives_general), (10, 30));
        assert_eq!(out.len(), 80);
    }

    #[test]
    fn empty_kept_is_an_error() {
        let r = build_round2_trainset(
            &set(&[]), &set(&["bad.com"]), docs("bad.com", 5), docs("g.net", 5), 10, 0, LABELS,
        );
        assert!(r.is_err());
        let overlap = build_round2_trainset(
            &set(&["a.com"]), &set(&["a.com"]), docs("a.com", 5), vec![], 10, 0, LABELS,
        );
        assert!(matches!(overlap, Err(Error::Integrity(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let run = |seed| {
            let mut recalled = docs("good.com", 300);
            recalled.extend(docs("bad.com", 300));
            build_round2_trainset(&set(&["good.com"]), &set(&["bad.com"]), recalled, docs("g.net", 300), 50, seed, LABELS)
                .unwrap()
                .0
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn reservoir_is_uniform_enough() {
        let mut hits = [0u32; 20];
        for seed in 0..4000 {
            let mut r = Reservoir::new(5, seed, 0);
            (0..20).for_each(|i| r.offer(i));
            for &i in r.into_shuffled().iter().take(2) {
                hits[i] += 1;
            }
        }
        // each item expected 4000 * 2 / 20 = 400 times
        assert!(hits.iter().all(|&h| (300..500).contains(&h)), "{hits:?}");
    }
}

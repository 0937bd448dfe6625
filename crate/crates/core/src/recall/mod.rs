//! Domain-level recall: grouping recalled documents by site, LLM triage of
//! the sites, and the round-2 training set.

mod trainset;
mod triage;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainKey, RawDocument};

pub use trainset::{build_round2_trainset, Reservoir, TrainsetReport};
pub use triage::{
    parse_verdicts, render_domains, triage_batch, triage_domains, DomainVerdict, TriageFailure,
    PARSE_FAILURE,
};

pub const MAX_SAMPLE_URLS: usize = 5;
pub const MAX_SAMPLE_SNIPPETS: usize = 3;
pub const SNIPPET_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: DomainKey,
    pub doc_count: u64,
    pub token_count: u64,
    pub sample_urls: Vec<String>,
    pub sample_snippets: Vec<String>,
}

impl DomainStats {
    fn new(domain: DomainKey) -> Self {
        Self {
            domain,
            doc_count: 0,
            token_count: 0,
            sample_urls: Vec::new(),
            sample_snippets: Vec::new(),
        }
    }

    fn absorb(&mut self, later: DomainStats) {
        self.doc_count += later.doc_count;
        self.token_count += later.token_count;
        let room = MAX_SAMPLE_URLS - self.sample_urls.len();
        self.sample_urls.extend(later.sample_urls.into_iter().take(room));
        let room = MAX_SAMPLE_SNIPPETS - self.sample_snippets.len();
        self.sample_snippets.extend(later.sample_snippets.into_iter().take(room));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallRoundReport {
    pub round: u8,
    pub docs_recalled: u64,
    pub tokens_recalled: u64,
    pub domains_total: u64,
    pub domains_kept: u64,
}

/// Whitespace-collapsed prefix of at most [`SNIPPET_CHARS`] characters.
pub fn snippet(text: &str) -> String {
    let mut out = String::new();
    let mut chars = 0;
    for word in text.split_whitespace() {
        let extra = word.chars().count() + usize::from(!out.is_empty());
        if chars + extra > SNIPPET_CHARS {
            if out.is_empty() {
                out.extend(word.chars().take(SNIPPET_CHARS));
            }
            break;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
        chars += extra;
    }
    out
}

/// Accumulates per-domain counts; partial groupers for consecutive stream
/// segments merge in order, keeping first-seen samples.
#[derive(Debug, Default, Clone)]
pub struct DomainGrouper {
    stats: FxHashMap<DomainKey, DomainStats>,
    docs: u64,
    /// Documents whose URL has no usable host.
    pub unparseable: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    pub retained: Vec<DomainStats>,
    pub dropped_domains: u64,
    pub dropped_docs: u64,
    pub unparseable: u64,
}

impl DomainGrouper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, doc: &RawDocument) {
        let Ok(domain) = doc.domain() else {
            self.unparseable += 1;
            return;
        };
        self.docs += 1;
        let entry = self
            .stats
            .entry(domain)
            .or_insert_with_key(|k| DomainStats::new(k.clone()));
        entry.doc_count += 1;
        entry.token_count += doc.token_count as u64;
        if entry.sample_urls.len() < MAX_SAMPLE_URLS {
            entry.sample_urls.push(doc.url.clone());
        }
        if entry.sample_snippets.len() < MAX_SAMPLE_SNIPPETS {
            entry.sample_snippets.push(snippet(&doc.content()));
        }
    }

    /// `later` covers documents after everything seen by `self`.
    pub fn merge(&mut self, later: DomainGrouper) {
        self.docs += later.docs;
        self.unparseable += later.unparseable;
        for (k, v) in later.stats {
            match self.stats.get_mut(&k) {
                Some(s) => s.absorb(v),
                None => {
                    self.stats.insert(k, v);
                }
            }
        }
    }

    pub fn docs(&self) -> u64 {
        self.docs
    }

    /// Retains domains with strictly more than `min_docs` documents, largest
    /// first, ties by name.
    pub fn finish(self, min_docs: u64) -> Grouping {
        let mut g = Grouping { unparseable: self.unparseable, ..Default::default() };
        for s in self.stats.into_values() {
            if s.doc_count > min_docs {
                g.retained.push(s);
            } else {
                g.dropped_domains += 1;
                g.dropped_docs += s.doc_count;
            }
        }
        g.retained
            .sort_unstable_by(|a, b| b.doc_count.cmp(&a.doc_count).then_with(|| a.domain.cmp(&b.domain)));
        g
    }
}

pub fn group_by_domain<'a>(docs: impl IntoIterator<Item = &'a RawDocument>, min_docs: u64) -> Grouping {
    let mut g = DomainGrouper::new();
    docs.into_iter().for_each(|d| g.add(d));
    g.finish(min_docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;

    fn doc(url: &str, i: usize) -> RawDocument {
        RawDocument::new(url, DateTime::from_timestamp(i as i64, 0).unwrap(), format!("<p>doc {i} text</p>")).unwrap()
    }

    #[test]
    fn strict_threshold() {
        let mut docs = Vec::new();
        for (host, n) in [("a.com", 999), ("b.com", 1000), ("c.com", 1001)] {
            docs.extend((0..n).map(|i| doc(&format!("https://{host}/{i}"), i)));
        }
        let g = group_by_domain(&docs, 1000);
        assert_eq!(g.retained.len(), 1);
        assert_eq!(g.retained[0].domain.as_str(), "c.com");
        assert_eq!(g.retained[0].doc_count, 1001);
        assert_eq!(g.dropped_domains, 2);
        assert_eq!(g.dropped_docs, 1999);
    }

    #[test]
    fn empty_stream() {
        let g = group_by_domain(std::iter::empty(), 1000);
        assert!(g.retained.is_empty());
        assert_eq!(g.dropped_domains, 0);
    }

    #[test]
    fn samples_are_first_seen_across_merges() {
        let docs: Vec<_> = (0..10).map(|i| doc(&format!("https://www.x.org/{i}"), i)).collect();
        let whole = group_by_domain(&docs, 0);
        let mut a = DomainGrouper::new();
        let mut b = DomainGrouper::new();
        docs[..2].iter().for_each(|d| a.add(d));
        docs[2..].iter().for_each(|d| b.add(d));
        a.merge(b);
        let merged = a.finish(0);
        assert_eq!(whole, merged);
        let s = &merged.retained[0];
        assert_eq!(s.sample_urls.len(), MAX_SAMPLE_URLS);
        assert_eq!(s.sample_urls[0], "https://www.x.org/0");
        assert_eq!(s.sample_snippets.len(), MAX_SAMPLE_SNIPPETS);
    }

    #[test]
    fn snippet_limits() {
        let long = "word ".repeat(400);
        let s = snippet(&long);
        assert!(s.chars().count() <= SNIPPET_CHARS);
        assert!(s.starts_with("word word"));
        assert_eq!(snippet(&"x".repeat(900)).chars().count(), SNIPPET_CHARS);
        assert_eq!(snippet("  a\n\nb  "), "a b");
    }

    proptest::proptest! {
        #[test]
        fn counts_are_conserved(hosts in proptest::collection::vec(0u8..12, 0..300), min in 0u64..40) {
            let docs: Vec<_> = hosts.iter().enumerate()
                .map(|(i, h)| doc(&format!("https://h{h}.net/p{i}"), i)).collect();
            let g = group_by_domain(&docs, min);
            let kept: u64 = g.retained.iter().map(|s| s.doc_count).sum();
            proptest::prop_assert_eq!(kept + g.dropped_docs, docs.len() as u64);
            for s in &g.retained {
                proptest::prop_assert!(s.doc_count > min);
                proptest::prop_assert!(s.doc_count >= s.sample_urls.len() as u64);
            }
        }
    }
}

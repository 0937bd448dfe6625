//! Second-pass LLM refinement split across two endpoints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{root_domain, DomainKey};
use crate::error::{Error, Result};
use crate::extract::{parse_block, QACandidate};
use crate::hash::{fnv1a64_extend, mix64, FNV_OFFSET};
use crate::llm::{LlmClient, LlmError};
use crate::prompt::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedQA {
    pub candidate_id: String,
    pub doc_id: String,
    pub question: String,
    pub answer: String,
    pub refiner: String,
    pub extractor: String,
    pub url: String,
    pub domain: DomainKey,
    /// False when the refiner reply did not parse and the extracted pair was kept.
    pub refined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerAssignment {
    pub endpoint_index: usize,
}

/// Uniform value in [0, 1) derived from (seed, id).
pub fn assignment_draw(candidate_id: &str, seed: u64) -> f64 {
    let h = fnv1a64_extend(fnv1a64_extend(FNV_OFFSET, &seed.to_le_bytes()), candidate_id.as_bytes());
    (mix64(h) >> 11) as f64 / (1u64 << 53) as f64
}

/// Endpoint 0 when the seeded draw falls below `split`, else endpoint 1.
pub fn assign_refiner(candidate_id: &str, seed: u64, split: f64) -> usize {
    debug_assert!((0.0..=1.0).contains(&split));
    usize::from(assignment_draw(candidate_id, seed) >= split)
}

/// One refinement call. A reply that is not a single well-formed block
/// keeps the extracted pair with `refined = false`.
pub fn refine_qa(
    llm: &LlmClient,
    candidate: &QACandidate,
    prompt: &PromptTemplate,
) -> Result<RefinedQA, LlmError> {
    let messages = prompt.render(&[
        ("question", candidate.question.as_str()),
        ("answer", candidate.answer.as_str()),
    ]);
    let exchange = llm.complete(&messages)?;
    let (question, answer, refined) = match parse_block(&exchange.response_text) {
        Some((q, a)) => (q, a, true),
        None => (candidate.question.clone(), candidate.answer.clone(), false),
    };
    let domain = root_domain(&candidate.url)
        .map_err(|e| LlmError::InvalidRequest(format!("candidate {}: {e}", candidate.candidate_id)))?;
    Ok(RefinedQA {
        candidate_id: candidate.candidate_id.clone(),
        doc_id: candidate.doc_id.clone(),
        question,
        answer,
        refiner: llm.model().to_owned(),
        extractor: candidate.extractor.clone(),
        url: candidate.url.clone(),
        domain,
        refined,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub total: u64,
    pub per_refiner: BTreeMap<String, u64>,
    pub fallbacks: u64,
}

/// Concatenates and sorts by candidate id. With `allow_shared_ids` a
/// candidate may appear once per refiner (both endpoints ran over the full
/// set); otherwise any repeated id is an integrity error.
pub fn merge_refined(
    a: Vec<RefinedQA>,
    b: Vec<RefinedQA>,
    allow_shared_ids: bool,
) -> Result<(Vec<RefinedQA>, MergeReport)> {
    let mut all = a;
    all.extend(b);
    all.sort_by(|x, y| x.candidate_id.cmp(&y.candidate_id).then_with(|| x.refiner.cmp(&y.refiner)));
    for w in all.windows(2) {
        if w[0].candidate_id == w[1].candidate_id && (!allow_shared_ids || w[0].refiner == w[1].refiner) {
            return Err(Error::Integrity(format!(
                "candidate {} refined more than once",
                w[0].candidate_id
            )));
        }
    }
    let mut report = MergeReport { total: all.len() as u64, ..Default::default() };
    for r in &all {
        *report.per_refiner.entry(r.refiner.clone()).or_default() += 1;
        report.fallbacks += u64::from(!r.refined);
    }
    Ok((all, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmEndpoint, MockMatch, MockRule, ScriptedMock};
    use crate::prompt::BuiltinPrompt;
    use std::sync::Arc;

    fn cand(id: &str, q: &str, a: &str) -> QACandidate {
        QACandidate {
            candidate_id: id.into(),
            doc_id: "doc".into(),
            url: "https://www.mathsite.org/p/1".into(),
            question: q.into(),
            answer: a.into(),
            extractor: "ex".into(),
        }
    }

    fn refined(id: &str, refiner: &str) -> RefinedQA {
        RefinedQA {
            candidate_id: id.into(),
            doc_id: "d".into(),
            question: "q".into(),
            answer: "a".into(),
            refiner: refiner.into(),
            extractor: "e".into(),
            url: "https://a.com/".into(),
            domain: root_domain("https://a.com/").unwrap(),
            refined: true,
        }
    }

    fn client(response: &str) -> LlmClient {
        LlmClient::new(
            LlmEndpoint::mock("refiner-a"),
            Arc::new(ScriptedMock::new(vec![MockRule::new(MockMatch::Any, response)])),
        )
        .unwrap()
    }

    #[test]
    fn split_extremes_and_balance() {
        assert!((0..500).all(|i| assign_refiner(&format!("c{i}"), 9, 0.0) == 1));
        assert!((0..500).all(|i| assign_refiner(&format!("c{i}"), 9, 1.0) == 0));
        let zeros = (0..10_000).filter(|i| assign_refiner(&format!("id-{i}"), 42, 0.5) == 0).count();
        assert!((4800..=5200).contains(&zeros), "{zeros}");
        assert_eq!(assign_refiner("abc", 1, 0.5), assign_refiner("abc", 1, 0.5));
    }

    #[test]
    fn identity_refinement() {
        let prompt = PromptTemplate::builtin(BuiltinPrompt::Refine);
        let c = cand("c1", "What is 2+2?", "4");
        let r = refine_qa(&client("{{input}}"), &c, &prompt).unwrap();
        assert_eq!((r.question.as_str(), r.answer.as_str()), ("What is 2+2?", "4"));
        assert!(r.refined);
        assert_eq!(r.domain.as_str(), "mathsite.org");
        assert_eq!(r.refiner, "refiner-a");
    }

    #[test]
    fn worked_answer_and_fallback() {
        let prompt = PromptTemplate::builtin(BuiltinPrompt::Refine);
        let c = cand("c1", "What is 2+2?", "4");
        let worked = client("QUESTION:\nWhat is 2+2?\nANSWER:\nStart with 2.\nAdd 2 more to get 2 + 2 = 4.\n---\nSo the answer is 4.");
        let r = refine_qa(&worked, &c, &prompt).unwrap();
        assert!(r.answer.contains('4') && r.answer.contains("Add 2 more"));
        assert!(r.answer.ends_with("So the answer is 4."), "delimiter lines stay inside the answer");

        let junk = refine_qa(&client("no idea"), &c, &prompt).unwrap();
        assert!(!junk.refined);
        assert_eq!((junk.question.as_str(), junk.answer.as_str()), ("What is 2+2?", "4"));
    }

    #[test]
    fn merge_rules() {
        let x = vec![refined("b", "r1"), refined("a", "r1")];
        let (m, rep) = merge_refined(x.clone(), vec![], false).unwrap();
        assert_eq!(m.iter().map(|r| r.candidate_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(rep.per_refiner["r1"], 2);
        assert!(merge_refined(x.clone(), vec![refined("a", "r2")], false).is_err());
        let (both, _) = merge_refined(x.clone(), vec![refined("a", "r2")], true).unwrap();
        assert_eq!(both.len(), 3);
        assert!(merge_refined(x.clone(), vec![refined("a", "r1")], true).is_err());
    }

    proptest::proptest! {
        #[test]
        fn merge_is_a_disjoint_union(ids in proptest::collection::btree_set("[a-f0-9]{6}", 0..60), seed: u64) {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for id in &ids {
                if assign_refiner(id, seed, 0.5) == 0 { a.push(refined(id, "r0")) } else { b.push(refined(id, "r1")) }
            }
            let (na, nb) = (a.len(), b.len());
            let (m, rep) = merge_refined(a, b, false).unwrap();
            proptest::prop_assert_eq!(m.len(), na + nb);
            let got: Vec<&String> = m.iter().map(|r| &r.candidate_id).collect();
            proptest::prop_assert_eq!(got, ids.iter().collect::<Vec<_>>());
            proptest::prop_assert_eq!(rep.total as usize, ids.len());
        }
    }
}

//! Second-stage reranking and reciprocal rank fusion.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::preproc::{self, Term};
use crate::query::ResolvedQuery;
use crate::run::RankedList;

pub const DEFAULT_RRF_K: f64 = 60.0;

/// Scores a passage for a query; higher is better. Implementations must be
/// deterministic and safe to share across threads.
pub trait Scorer: Send + Sync {
    fn score(&self, query: &ResolvedQuery, passage_text: &str) -> f64;
}

impl<F> Scorer for F
where
    F: Fn(&ResolvedQuery, &str) -> f64 + Send + Sync,
{
    fn score(&self, query: &ResolvedQuery, passage_text: &str) -> f64 {
        self(query, passage_text)
    }
}

/// `Σ_t min(w_q(t), tf(t, p)) / |p|` over normalized passage terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl Scorer for OverlapScorer {
    fn score(&self, query: &ResolvedQuery, passage_text: &str) -> f64 {
        let terms = preproc::text_term_list(passage_text);
        if terms.is_empty() {
            return 0.0;
        }
        let mut tf: BTreeMap<&Term, u32> = BTreeMap::new();
        for t in &terms {
            *tf.entry(t).or_insert(0) += 1;
        }
        let overlap: f64 = query
            .iter()
            .map(|(t, w)| w.min(f64::from(tf.get(t).copied().unwrap_or(0))))
            .sum();
        overlap / terms.len() as f64
    }
}

/// Rescores every passage of `initial` with `scorer`.
pub fn rerank(
    scorer: &dyn Scorer,
    initial: &RankedList,
    query: &ResolvedQuery,
    store: &dyn PassageStore,
) -> Result<RankedList> {
    let scores = initial
        .entries
        .iter()
        .map(|e| {
            let text = store.text(&e.passage_id).ok_or_else(|| {
                Error::invalid(format!(
                    "{}: no text for passage {:?}",
                    initial.query_id, e.passage_id
                ))
            })?;
            Ok((e.passage_id.clone(), scorer.score(query, text)))
        })
        .collect::<Result<Vec<_>>>()?;
    RankedList::from_scores(initial.query_id.clone(), scores)
}

/// Reciprocal rank fusion over the passages of the first list:
/// `score(p) = Σ_L 1 / (k + rank(p, L))` with 1-based ranks, summed over the
/// lists that contain `p`.
pub fn rrf_fuse(lists: &[&RankedList], k: f64) -> Result<RankedList> {
    let Some(first) = lists.first() else {
        return Err(Error::invalid("rrf_fuse needs at least one list"));
    };
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Config(format!("RRF k must be positive, got {k}")));
    }
    let ranks: Vec<HashMap<&str, usize>> = lists
        .iter()
        .map(|l| l.ids().enumerate().map(|(i, id)| (id, i + 1)).collect())
        .collect();
    let scores = first
        .ids()
        .map(|id| {
            // sum in a fixed (ascending-rank) order so the result does not
            // depend on the order the lists were supplied in
            let mut contributions: Vec<usize> = ranks.iter().filter_map(|r| r.get(id).copied()).collect();
            contributions.sort_unstable();
            let score = contributions.iter().map(|&r| 1.0 / (k + r as f64)).sum();
            (id.to_owned(), score)
        })
        .collect();
    RankedList::from_scores(first.query_id.clone(), scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(pairs: &[(&str, f64)]) -> RankedList {
        RankedList::from_scores("q", pairs.iter().map(|(i, s)| (i.to_string(), *s)).collect()).unwrap()
    }

    #[test]
    fn rrf_both_rank_one() {
        let a = list(&[("x", 3.0), ("y", 1.0)]);
        let b = list(&[("x", 0.9), ("y", 0.1)]);
        let fused = rrf_fuse(&[&a, &b], 60.0).unwrap();
        assert_eq!(fused.entries[0].passage_id, "x");
        assert!((fused.entries[0].score - 2.0 / 61.0).abs() < 1e-12);
    }

    #[test]
    fn rrf_two_lists_pinned() {
        // L1 = a, b, c ; Ln = c, a, b
        let l1 = list(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        let ln = list(&[("c", 9.0), ("a", 8.0), ("b", 7.0)]);
        let fused = rrf_fuse(&[&l1, &ln], 60.0).unwrap();
        let a = 1.0 / 61.0 + 1.0 / 62.0;
        let b = 1.0 / 62.0 + 1.0 / 63.0;
        let c = 1.0 / 63.0 + 1.0 / 61.0;
        let got: Vec<_> = fused.entries.iter().map(|e| (e.passage_id.as_str(), e.score)).collect();
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), ["a", "c", "b"]);
        for ((_, g), w) in got.iter().zip([a, c, b]) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rrf_universe_is_first_list() {
        let l1 = list(&[("a", 2.0), ("b", 1.0)]);
        let ln = list(&[("z", 5.0), ("b", 4.0)]);
        let fused = rrf_fuse(&[&l1, &ln], 60.0).unwrap();
        assert_eq!(fused.ids().collect::<Vec<_>>(), ["b", "a"]);
        assert!((fused.entries[0].score - (1.0 / 62.0 + 1.0 / 62.0)).abs() < 1e-12);
        assert!((fused.entries[1].score - 1.0 / 61.0).abs() < 1e-12);
    }

    #[test]
    fn rrf_single_list_and_errors() {
        let l = list(&[("a", 5.0), ("b", 4.0), ("c", 4.0), ("d", -1.0)]);
        let fused = rrf_fuse(&[&l], 60.0).unwrap();
        assert_eq!(fused.ids().collect::<Vec<_>>(), l.ids().collect::<Vec<_>>());
        assert!(rrf_fuse(&[], 60.0).is_err());
        assert!(rrf_fuse(&[&l], 0.0).is_err());
    }

    fn store() -> BTreeMap<String, String> {
        [
            ("p1", "saosin band album album"),
            ("p2", "saosin formed band in 2003 with four members"),
            ("p3", "album released"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
    }

    #[test]
    fn rerank_examples() {
        let initial = list(&[("p1", -1.0), ("p2", -2.0), ("p3", -3.0)]);
        let q = ResolvedQuery::from_text("saosin album album");

        let constant = |_: &ResolvedQuery, _: &str| 1.0;
        let r = rerank(&constant, &initial, &q, &store()).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["p1", "p2", "p3"]);

        let scores: HashMap<String, f64> = initial.entries.iter().map(|e| (e.passage_id.clone(), e.score)).collect();
        let texts = store();
        let same = |_: &ResolvedQuery, text: &str| {
            let id = texts.iter().find(|(_, t)| t.as_str() == text).unwrap().0;
            scores[id]
        };
        assert_eq!(rerank(&same, &initial, &q, &store()).unwrap(), initial);

        // p1: min(1,1)+min(2,2) over 4 terms = 0.75
        // p2: saosin only; 6 terms (in, with are stopwords) -> 1/6
        // p3: album once over 2 terms -> 0.5
        let r = rerank(&OverlapScorer, &initial, &q, &store()).unwrap();
        let got: Vec<_> = r.entries.iter().map(|e| (e.passage_id.as_str(), e.score)).collect();
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), ["p1", "p3", "p2"]);
        for ((_, g), w) in got.iter().zip([0.75, 0.5, 1.0 / 6.0]) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }

        let missing = list(&[("p9", 1.0)]);
        let err = rerank(&OverlapScorer, &missing, &q, &store()).unwrap_err();
        assert!(err.to_string().contains("p9"));
    }

    fn arb_lists() -> impl Strategy<Value = Vec<RankedList>> {
        let one = prop::collection::vec((0u8..30, -100.0f64..100.0), 1..15).prop_map(|v| {
            let mut seen = std::collections::BTreeSet::new();
            let pairs = v
                .into_iter()
                .filter(|(id, _)| seen.insert(*id))
                .map(|(id, s)| (format!("p{id}"), s))
                .collect();
            RankedList::from_scores("q", pairs).unwrap()
        });
        prop::collection::vec(one, 1..5)
    }

    proptest! {
        #[test]
        fn rrf_rank_only(lists in arb_lists(), a in 0.1f64..5.0, b in -50.0f64..50.0) {
            let fused = rrf_fuse(&lists.iter().collect::<Vec<_>>(), 60.0).unwrap();
            // strictly increasing transform preserves every input order
            let transformed: Vec<RankedList> = lists
                .iter()
                .map(|l| RankedList {
                    query_id: l.query_id.clone(),
                    entries: l
                        .entries
                        .iter()
                        .map(|e| crate::run::RankedEntry {
                            passage_id: e.passage_id.clone(),
                            score: (a * e.score + b).exp(),
                        })
                        .collect(),
                })
                .collect();
            let fused_t = rrf_fuse(&transformed.iter().collect::<Vec<_>>(), 60.0).unwrap();
            prop_assert_eq!(fused.ids().collect::<Vec<_>>(), fused_t.ids().collect::<Vec<_>>());
            let n = lists.len() as f64;
            for e in &fused.entries {
                prop_assert!(e.score > 0.0 && e.score <= n / 60.0);
            }
        }

        #[test]
        fn rrf_permutation_invariant(
            scores in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 10), 1..5),
            rot in 0usize..5,
        ) {
            // same passage universe in every list, so any list may come first
            let lists: Vec<RankedList> = scores
                .iter()
                .map(|s| {
                    RankedList::from_scores(
                        "q",
                        s.iter().enumerate().map(|(i, v)| (format!("p{i}"), *v)).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let mut permuted: Vec<&RankedList> = lists.iter().collect();
            permuted.rotate_left(rot % lists.len());
            permuted.reverse();
            let a = rrf_fuse(&lists.iter().collect::<Vec<_>>(), 60.0).unwrap();
            let b = rrf_fuse(&permuted, 60.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{search, InvertedIndex, DEFAULT_MU};
use crate::error::{Error, Result};
use crate::preproc::Term;
use crate::query::ResolvedQuery;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rm3Params {
    /// Feedback depth.
    pub fb_docs: usize,
    /// Expansion terms kept.
    pub fb_terms: usize,
    /// Weight of the original query in the interpolation.
    pub original_weight: f64,
    pub mu: f64,
}

impl Default for Rm3Params {
    fn default() -> Self {
        Rm3Params {
            fb_docs: 10,
            fb_terms: 10,
            original_weight: 0.8,
            mu: DEFAULT_MU,
        }
    }
}

impl Rm3Params {
    fn validate(&self) -> Result<()> {
        if self.fb_docs == 0 || self.fb_terms == 0 {
            return Err(Error::Config("RM3 needs fb_docs >= 1 and fb_terms >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.original_weight) {
            return Err(Error::Config(format!(
                "RM3 original weight {} outside [0,1]",
                self.original_weight
            )));
        }
        Ok(())
    }
}

/// The `fb_terms` most probable terms of the relevance model estimated from
/// the top `fb_docs` passages, renormalized to sum to one. Ties are broken
/// by ascending term. Empty if nothing is retrieved.
pub fn rm3_relevance_model(
    index: &InvertedIndex,
    query: &ResolvedQuery,
    params: &Rm3Params,
) -> Result<Vec<(Term, f64)>> {
    params.validate()?;
    let top = search(index, "rm3", query, params.fb_docs, params.mu)?;
    let Some(best) = top.entries.first().map(|e| e.score) else {
        return Ok(Vec::new());
    };
    // P(t|R) ∝ Σ_p P(t|p) · P(q|p); P(q|p) = exp(log QL), shifted by the
    // best score for range, which cancels in the normalization.
    let mut model: BTreeMap<&Term, f64> = BTreeMap::new();
    for e in &top.entries {
        let doc = index.doc_number(&e.passage_id).expect("retrieved from this index");
        let len = f64::from(index.doc_len(doc));
        let doc_weight = (e.score - best).exp();
        for (t, tf) in index.doc_terms(doc) {
            *model.entry(t).or_insert(0.0) += f64::from(*tf) / len * doc_weight;
        }
    }
    let z: f64 = model.values().sum();
    let mut ranked: Vec<(Term, f64)> = model.into_iter().map(|(t, p)| (t.clone(), p / z)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(params.fb_terms);
    let zk: f64 = ranked.iter().map(|(_, p)| p).sum();
    for (_, p) in &mut ranked {
        *p /= zk;
    }
    Ok(ranked)
}

/// Interpolates the normalized original query with the relevance model:
/// `λ · q/|q| + (1 − λ) · P(t|R)`. Zero-weight terms are dropped. Returns the
/// query unchanged when feedback retrieves nothing.
pub fn rm3_expand(index: &InvertedIndex, query: &ResolvedQuery, params: &Rm3Params) -> Result<ResolvedQuery> {
    let model = rm3_relevance_model(index, query, params)?;
    if model.is_empty() {
        return Ok(query.clone());
    }
    let lambda = params.original_weight;
    let total = query.total_weight();
    let mut out = ResolvedQuery::default();
    for (t, w) in query.iter() {
        out.add(t.clone(), lambda * w / total);
    }
    for (t, p) in model {
        out.add(t, (1.0 - lambda) * p);
    }
    out.weights.retain(|_, w| *w != 0.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::preproc;

    fn fixture() -> InvertedIndex {
        InvertedIndex::build([
            Passage::new("d1", "kiwi mango kiwi lemon"),
            Passage::new("d2", "mango melon"),
            Passage::new("d3", "lemon plum fig kiwi melon"),
        ])
        .unwrap()
    }

    fn weights(q: &ResolvedQuery) -> Vec<(&str, f64)> {
        q.iter().map(|(t, w)| (t.as_str(), w)).collect()
    }

    fn assert_weights(got: &ResolvedQuery, want: &[(&str, f64)]) {
        let got = weights(got);
        assert_eq!(got.len(), want.len(), "{got:?}");
        for ((gt, gw), (wt, ww)) in got.iter().zip(want) {
            assert_eq!(gt, wt);
            assert!((gw - ww).abs() < 1e-12, "{gt}: {gw} vs {ww}");
        }
    }

    // Expected weights computed by an independent script implementing the
    // same estimator directly over whitespace tokens.
    #[test]
    fn toy_collection_pinned() {
        let index = fixture();
        for w in ["kiwi", "mango", "lemon", "melon", "plum", "fig"] {
            assert_eq!(preproc::normalize(w).unwrap().as_str(), w);
        }
        let params = Rm3Params {
            fb_docs: 2,
            fb_terms: 2,
            original_weight: 0.8,
            mu: 10.0,
        };
        let q = ResolvedQuery::from_text("kiwi");
        let out = rm3_expand(&index, &q, &params).unwrap();
        assert_weights(&out, &[("kiwi", 0.9239381291431378), ("lemon", 0.07606187085686224)]);

        let params = Rm3Params {
            fb_docs: 3,
            fb_terms: 3,
            original_weight: 0.5,
            mu: 10.0,
        };
        let q = ResolvedQuery::from_text("kiwi melon");
        let out = rm3_expand(&index, &q, &params).unwrap();
        assert_weights(
            &out,
            &[
                ("kiwi", 0.3989602183303096),
                ("mango", 0.1793937465767577),
                ("melon", 0.42164603509293275),
            ],
        );
        assert!((out.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundaries() {
        let index = fixture();
        let q = ResolvedQuery::from_text("kiwi kiwi melon");
        let keep_original = Rm3Params {
            original_weight: 1.0,
            mu: 10.0,
            ..Default::default()
        };
        let out = rm3_expand(&index, &q, &keep_original).unwrap();
        assert_weights(&out, &[("kiwi", 2.0 / 3.0), ("melon", 1.0 / 3.0)]);

        // one feedback passage: its top terms by tf / len
        let single = Rm3Params {
            fb_docs: 1,
            fb_terms: 2,
            original_weight: 0.0,
            mu: 10.0,
        };
        let q = ResolvedQuery::from_text("plum");
        let model = rm3_relevance_model(&index, &q, &single).unwrap();
        let names: Vec<_> = model.iter().map(|(t, _)| t.as_str()).collect();
        // d3 has five distinct terms with tf 1; ties go to ascending term
        assert_eq!(names, ["fig", "kiwi"]);

        let nothing = ResolvedQuery::from_text("zebra");
        assert_eq!(rm3_expand(&index, &nothing, &single).unwrap(), nothing);

        let bad = Rm3Params {
            original_weight: 1.5,
            ..Default::default()
        };
        assert!(rm3_expand(&index, &q, &bad).is_err());
    }

    #[test]
    fn weights_non_negative_and_normalized() {
        let index = fixture();
        for text in ["kiwi", "mango lemon", "fig fig melon", "plum kiwi mango"] {
            for n in 1..4 {
                for k in 1..6 {
                    let p = Rm3Params {
                        fb_docs: n,
                        fb_terms: k,
                        original_weight: 0.3,
                        mu: 25.0,
                    };
                    let out = rm3_expand(&index, &ResolvedQuery::from_text(text), &p).unwrap();
                    assert!(out.iter().all(|(_, w)| w >= 0.0));
                    assert!((out.total_weight() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

//! Inverted-index passage retrieval scored by Dirichlet-smoothed query
//! likelihood, plus RM3 pseudo-relevance feedback.

mod rm3;
mod store;

use std::collections::{BTreeMap, HashMap};

use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::preproc::{self, Term};
use crate::query::ResolvedQuery;
use crate::run::RankedList;

pub use rm3::{rm3_expand, rm3_relevance_model, Rm3Params};
pub use store::INDEX_FORMAT_VERSION;

pub const DEFAULT_MU: f64 = 2500.0;
pub const DEFAULT_DEPTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Index into the id-sorted passage table.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TermStats {
    pub collection_freq: u64,
    /// Sorted by `doc`, hence by passage id.
    pub postings: Vec<Posting>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    /// Per-passage term vector, sorted by term.
    doc_terms: Vec<Vec<(Term, u32)>>,
    terms: BTreeMap<Term, TermStats>,
    total_tokens: u64,
    preprocessing: String,
}

impl InvertedIndex {
    /// Indexes `collection`; ids must be unique.
    pub fn build(collection: impl IntoIterator<Item = Passage>) -> Result<Self> {
        let mut passages: Vec<Passage> = collection.into_iter().collect();
        passages.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = passages.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid(format!("duplicate passage id {:?}", w[0].id)));
        }
        let mut doc_ids = Vec::with_capacity(passages.len());
        let mut doc_len = Vec::with_capacity(passages.len());
        let mut doc_terms = Vec::with_capacity(passages.len());
        for p in passages {
            let mut counts: BTreeMap<Term, u32> = BTreeMap::new();
            let mut len = 0u32;
            for t in preproc::text_term_list(&p.text) {
                *counts.entry(t).or_insert(0) += 1;
                len += 1;
            }
            doc_ids.push(p.id);
            doc_len.push(len);
            doc_terms.push(counts.into_iter().collect());
        }
        Ok(Self::from_doc_terms(doc_ids, doc_terms, preproc::fingerprint()))
    }

    fn from_doc_terms(
        doc_ids: Vec<String>,
        doc_terms: Vec<Vec<(Term, u32)>>,
        preprocessing: String,
    ) -> Self {
        let mut terms: BTreeMap<Term, TermStats> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(doc_terms.len());
        for (doc, vector) in doc_terms.iter().enumerate() {
            let mut len = 0u32;
            for (t, tf) in vector {
                let entry = terms.entry(t.clone()).or_default();
                entry.collection_freq += u64::from(*tf);
                entry.postings.push(Posting {
                    doc: doc as u32,
                    tf: *tf,
                });
                len += tf;
            }
            doc_len.push(len);
        }
        let total_tokens = doc_len.iter().map(|&l| u64::from(l)).sum();
        InvertedIndex {
            doc_ids,
            doc_len,
            doc_terms,
            terms,
            total_tokens,
            preprocessing,
        }
    }

    pub fn num_passages(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn preprocessing(&self) -> &str {
        &self.preprocessing
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_number(&self, passage_id: &str) -> Option<usize> {
        self.doc_ids
            .binary_search_by(|id| id.as_str().cmp(passage_id))
            .ok()
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_len[doc]
    }

    pub fn doc_terms(&self, doc: usize) -> &[(Term, u32)] {
        &self.doc_terms[doc]
    }

    pub fn term_stats(&self, term: &Term) -> Option<&TermStats> {
        self.terms.get(term)
    }

    pub fn collection_freq(&self, term: &Term) -> u64 {
        self.terms.get(term).map_or(0, |s| s.collection_freq)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Term, &TermStats)> {
        self.terms.iter()
    }

    pub fn tf(&self, term: &Term, doc: usize) -> u32 {
        self.doc_terms[doc]
            .binary_search_by(|(t, _)| t.cmp(term))
            .map_or(0, |i| self.doc_terms[doc][i].1)
    }

    /// Rejects queries normalized by a different preprocessing pipeline.
    pub fn check_preprocessing(&self, fingerprint: &str) -> Result<()> {
        if self.preprocessing != fingerprint {
            return Err(Error::Incompatible {
                path: Default::default(),
                message: format!(
                    "index built with preprocessing {:?}, query pipeline uses {fingerprint:?}",
                    self.preprocessing
                ),
            });
        }
        Ok(())
    }

    /// Checks the collection-statistics invariants.
    pub fn check(&self) -> Result<()> {
        let mut total = 0u64;
        for (term, stats) in &self.terms {
            let sum: u64 = stats.postings.iter().map(|p| u64::from(p.tf)).sum();
            if sum != stats.collection_freq {
                return Err(Error::invalid(format!("cf mismatch for {term}")));
            }
            if !stats.postings.windows(2).all(|w| w[0].doc < w[1].doc) {
                return Err(Error::invalid(format!("postings of {term} not sorted")));
            }
        }
        for &l in &self.doc_len {
            total += u64::from(l);
        }
        if total != self.total_tokens {
            return Err(Error::invalid("doc lengths do not sum to total_tokens"));
        }
        Ok(())
    }

    fn term_score(&self, weight: f64, tf: u32, cf: u64, doc: usize, mu: f64) -> f64 {
        let background = mu * cf as f64 / self.total_tokens as f64;
        weight * ((f64::from(tf) + background) / (f64::from(self.doc_len[doc]) + mu)).ln()
    }

    fn score_doc(&self, query: &ResolvedQuery, doc: usize, mu: f64) -> f64 {
        query
            .iter()
            .filter_map(|(t, w)| {
                let cf = self.collection_freq(t);
                (cf > 0).then(|| self.term_score(w, self.tf(t, doc), cf, doc, mu))
            })
            .sum()
    }
}

/// Dirichlet-smoothed log query likelihood of `passage_id` for `query`.
/// Query terms absent from the collection contribute nothing.
pub fn ql_score(index: &InvertedIndex, query: &ResolvedQuery, passage_id: &str, mu: f64) -> Result<f64> {
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    let doc = index
        .doc_number(passage_id)
        .ok_or_else(|| Error::invalid(format!("unknown passage id {passage_id:?}")))?;
    Ok(index.score_doc(query, doc, mu))
}

/// Top-`k` passages sharing at least one term with `query`, by QL score.
pub fn search(
    index: &InvertedIndex,
    query_id: &str,
    query: &ResolvedQuery,
    k: usize,
    mu: f64,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Config("search depth must be at least 1".into()));
    }
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    // candidate -> tf of each query term, in query-term order
    let qterms: Vec<(&Term, f64, u64)> = query
        .iter()
        .map(|(t, w)| (t, w, index.collection_freq(t)))
        .filter(|&(_, _, cf)| cf > 0)
        .collect();
    let mut tfs: HashMap<u32, Vec<u32>> = HashMap::new();
    for (qi, (term, _, _)) in qterms.iter().enumerate() {
        let stats = index.term_stats(term).expect("cf > 0 implies postings");
        for p in &stats.postings {
            tfs.entry(p.doc).or_insert_with(|| vec![0; qterms.len()])[qi] = p.tf;
        }
    }
    let scores = tfs
        .into_iter()
        .map(|(doc, tf)| {
            let doc = doc as usize;
            let score = qterms
                .iter()
                .zip(tf)
                .map(|(&(_, w, cf), tf)| index.term_score(w, tf, cf, doc, mu))
                .sum();
            (index.doc_ids[doc].clone(), score)
        })
        .collect();
    let mut list = RankedList::from_scores(query_id, scores)?;
    list.truncate(k);
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervision::fixtures::terms;
    use proptest::prelude::*;

    fn term(w: &str) -> Term {
        preproc::normalize(w).unwrap()
    }

    fn idx(docs: &[(&str, &str)]) -> InvertedIndex {
        InvertedIndex::build(docs.iter().map(|(i, t)| Passage::new(*i, *t))).unwrap()
    }

    #[test]
    fn build_examples() {
        let empty = InvertedIndex::build(Vec::new()).unwrap();
        assert_eq!(empty.total_tokens(), 0);
        assert_eq!(empty.num_terms(), 0);

        let one = idx(&[("p", "saosin saosin band")]);
        assert_eq!(one.tf(&term("saosin"), 0), 2);
        assert_eq!(one.tf(&term("band"), 0), 1);
        assert_eq!(one.doc_len(0), 3);
        one.check().unwrap();

        let two = idx(&[("b", "kiwi mango"), ("a", "kiwi")]);
        assert_eq!(two.passage_ids(), ["a", "b"]);
        let post = &two.term_stats(&term("kiwi")).unwrap().postings;
        assert_eq!(post.iter().map(|p| p.doc).collect::<Vec<_>>(), [0, 1]);
        two.check().unwrap();

        assert!(InvertedIndex::build(vec![Passage::new("a", "x"), Passage::new("a", "y")]).is_err());
    }

    #[test]
    fn ql_examples() {
        let index = idx(&[("p", "kiwi mango")]);
        let q = ResolvedQuery::from_text("kiwi");
        let s = ql_score(&index, &q, "p", 1.0).unwrap();
        // log[(1 + 1 * 1/2) / (2 + 1)]
        assert!((s - 0.5f64.ln()).abs() < 1e-12);

        let unseen = ResolvedQuery::from_text("zebra");
        assert_eq!(ql_score(&index, &unseen, "p", 1.0).unwrap(), 0.0);

        let doubled = q.scaled(2.0);
        assert!((ql_score(&index, &doubled, "p", 1.0).unwrap() - 2.0 * s).abs() < 1e-12);

        assert!(ql_score(&index, &q, "nope", 1.0).is_err());
        assert!(ql_score(&index, &q, "p", 0.0).is_err());
    }

    #[test]
    fn search_examples() {
        let index = idx(&[("c", "kiwi"), ("a", "kiwi"), ("b", "mango"), ("d", "kiwi kiwi mango")]);
        let q = ResolvedQuery::from_text("kiwi");
        let list = search(&index, "q", &q, 1000, 10.0).unwrap();
        assert_eq!(list.len(), 3);
        assert!(list.is_canonical());
        // a and c have identical statistics
        let ids: Vec<_> = list.ids().collect();
        let pos_a = ids.iter().position(|&i| i == "a").unwrap();
        assert_eq!(ids[pos_a + 1], "c");

        let top1 = search(&index, "q", &q, 1, 10.0).unwrap();
        assert_eq!(top1.len(), 1);
        assert!(search(&index, "q", &ResolvedQuery::default(), 10, 10.0).unwrap().is_empty());
        assert!(search(&index, "q", &q, 0, 10.0).is_err());
        assert_eq!(terms(&["kiwi"]), q.terms());
    }

    fn full_scan(docs: &[(String, String)], query: &ResolvedQuery, k: usize, mu: f64) -> Vec<(String, f64)> {
        let doc_terms: Vec<Vec<Term>> = docs.iter().map(|(_, t)| preproc::text_term_list(t)).collect();
        let total: usize = doc_terms.iter().map(Vec::len).sum();
        let mut out = Vec::new();
        for ((id, _), dt) in docs.iter().zip(&doc_terms) {
            let mut matched = false;
            let mut score = 0.0;
            for (t, w) in query.iter() {
                let cf = doc_terms.iter().flatten().filter(|x| *x == t).count();
                if cf == 0 {
                    continue;
                }
                let tf = dt.iter().filter(|x| *x == t).count();
                matched |= tf > 0;
                score += w * ((tf as f64 + mu * cf as f64 / total as f64) / (dt.len() as f64 + mu)).ln();
            }
            if matched {
                out.push((id.clone(), score));
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }

    fn arb_collection() -> impl Strategy<Value = (Vec<(String, String)>, ResolvedQuery)> {
        let words = prop::sample::select(vec![
            "kiwi", "mango", "lemon", "melon", "plum", "fig", "saosin", "band", "album", "the",
        ]);
        let doc = prop::collection::vec(words.clone(), 0..12).prop_map(|w| w.join(" "));
        (
            prop::collection::vec(doc, 0..20),
            prop::collection::vec(words, 0..8),
        )
            .prop_map(|(docs, q)| {
                let docs = docs
                    .into_iter()
                    .enumerate()
                    .map(|(i, d)| (format!("p{i:02}"), d))
                    .collect();
                (docs, ResolvedQuery::from_text(&q.join(" ")))
            })
    }

    proptest! {
        #[test]
        fn search_matches_full_scan((docs, q) in arb_collection(), k in 1usize..25, mu in 0.5f64..3000.0) {
            let index = InvertedIndex::build(docs.iter().map(|(i, t)| Passage::new(i.clone(), t.clone()))).unwrap();
            index.check().unwrap();
            let got = search(&index, "q", &q, k, mu).unwrap();
            let want = full_scan(&docs, &q, k, mu);
            prop_assert_eq!(got.len(), want.len());
            for (e, (id, s)) in got.entries.iter().zip(&want) {
                prop_assert_eq!(&e.passage_id, id);
                prop_assert!((e.score - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }

        #[test]
        fn search_invariant_to_insertion_order((docs, q) in arb_collection()) {
            let fwd = InvertedIndex::build(docs.iter().map(|(i, t)| Passage::new(i.clone(), t.clone()))).unwrap();
            let rev = InvertedIndex::build(docs.iter().rev().map(|(i, t)| Passage::new(i.clone(), t.clone()))).unwrap();
            prop_assert_eq!(search(&fwd, "q", &q, 1000, 100.0).unwrap(), search(&rev, "q", &q, 1000, 100.0).unwrap());
        }
    }
}

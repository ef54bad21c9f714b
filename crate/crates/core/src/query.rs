use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::preproc::{self, Term};

/// A bag-of-terms query. Plain resolutions carry integer counts; RM3
/// expansions carry real interpolation weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResolvedQuery {
    pub weights: BTreeMap<Term, f64>,
}

impl ResolvedQuery {
    /// Term multiset of `text`.
    pub fn from_text(text: &str) -> Self {
        let mut q = ResolvedQuery::default();
        for t in preproc::text_term_list(text) {
            q.add(t, 1.0);
        }
        q
    }

    pub fn add(&mut self, term: Term, weight: f64) {
        *self.weights.entry(term).or_insert(0.0) += weight;
    }

    pub fn weight(&self, term: &Term) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> BTreeSet<Term> {
        self.weights.keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Term, f64)> {
        self.weights.iter().map(|(t, w)| (t, *w))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ResolvedQuery {
            weights: self.weights.iter().map(|(t, w)| (t.clone(), w * factor)).collect(),
        }
    }
}

/// Current-turn terms plus each expansion term once.
pub fn resolve(current: &str, expansion: &BTreeSet<Term>) -> ResolvedQuery {
    let mut q = ResolvedQuery::from_text(current);
    for t in expansion {
        q.add(t.clone(), 1.0);
    }
    q
}

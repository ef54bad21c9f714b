use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::preproc::{Origin, Token};
use crate::supervision::{LabeledExample, CLS, SEP};

pub const UNK: &str = "[UNK]";

/// Whole-word vocabulary. Tokens carrying a term are keyed by the term;
/// others by their lowercased surface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

fn key(token: &Token) -> String {
    match (&token.term, &token.origin) {
        (Some(t), _) => t.as_str().to_owned(),
        (None, Origin::Special) => token.surface.clone(),
        (None, _) => token.surface.to_lowercase(),
    }
}

impl Vocab {
    /// Special tokens first, then keys by descending frequency (ties by
    /// key), up to `cap` entries in total.
    pub fn build<'a>(examples: impl IntoIterator<Item = &'a LabeledExample>, cap: usize) -> Result<Self> {
        if cap < 3 {
            return Err(Error::Config(format!("vocabulary cap {cap} below the 3 special tokens")));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for ex in examples {
            for tok in ex.sequence.iter() {
                if tok.origin != Origin::Special {
                    *counts.entry(key(tok)).or_insert(0) += 1;
                }
            }
        }
        let mut by_freq: Vec<(String, u64)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [CLS, SEP, UNK]
            .into_iter()
            .map(str::to_owned)
            .chain(by_freq.into_iter().map(|(k, _)| k))
            .take(cap)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.get(..3) != Some(&[CLS.to_owned(), SEP.to_owned(), UNK.to_owned()][..]) {
            return Err(Error::invalid("vocabulary must start with [CLS] [SEP] [UNK]"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &Token) -> usize {
        self.ids.get(&key(token)).copied().unwrap_or(2)
    }

    pub fn encode(&self, example: &LabeledExample) -> Vec<usize> {
        example.sequence.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervision::{build_example, fixtures::saosin_topic};

    #[test]
    fn build_and_encode() {
        let topic = saosin_topic();
        let ex = build_example(&topic, 2, &Default::default(), 64).unwrap().unwrap();
        let v = Vocab::build([&ex], 100).unwrap();
        assert_eq!(&v.tokens()[..3], [CLS, SEP, UNK]);
        let ids = v.encode(&ex);
        assert_eq!(ids[0], 0);
        assert!(ids.iter().all(|&i| i != 2));

        let small = Vocab::build([&ex], 4).unwrap();
        assert_eq!(small.len(), 4);
        assert!(small.encode(&ex).contains(&2));
        assert!(Vocab::build([&ex], 2).is_err());
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
    }
}

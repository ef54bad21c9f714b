//! Text normalization shared by labeling, modeling and retrieval.
//!
//! Every component that compares terms goes through [`normalize`], so a term
//! extracted from a rewrite, a history turn or a passage has one identity.

mod porter;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use porter::stem;

/// Bundled stopword list, one lowercase token per line.
pub const STOPWORDS_TXT: &str = include_str!("../../data/stopwords.txt");

/// Identifies the normalization pipeline. Persisted artifacts record it so
/// that data normalized differently is rejected instead of silently mixed.
pub const PREPROC_VERSION: &str = "ws-edgepunct-porter1980-fixpoint-v1";

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(lowercased: &str) -> bool {
    stopwords().contains(lowercased)
}

/// Hex SHA-256 of the bundled stopword list.
pub fn stopwords_sha256() -> String {
    hex::encode(Sha256::digest(STOPWORDS_TXT.as_bytes()))
}

/// Fingerprint of the complete preprocessing configuration.
pub fn fingerprint() -> String {
    format!("{PREPROC_VERSION}+stopwords:{}", &stopwords_sha256()[..16])
}

/// A normalized term: lowercased, stemmed, not a stopword.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term(String);

impl Term {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Accepts `s` only if it is already in normal form.
    pub fn parse(s: &str) -> Option<Term> {
        match normalize(s) {
            Some(t) if t.0 == s => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Term {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Term::parse(&s).ok_or_else(|| format!("{s:?} is not a normalized term"))
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.0
    }
}

impl AsRef<str> for Term {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Where a token came from inside a model input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// A turn of the conversation history, by 1-based turn index.
    History(u32),
    Current,
    Special,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub term: Option<Term>,
    pub origin: Origin,
}

impl Token {
    pub fn special(surface: &str) -> Token {
        Token {
            surface: surface.to_owned(),
            term: None,
            origin: Origin::Special,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.tokens.iter().filter_map(|t| t.term.as_ref())
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        for t in &mut self.tokens {
            t.origin = origin;
        }
        self
    }

    pub fn extend(&mut self, other: TokenSequence) {
        self.tokens.extend(other.tokens);
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits raw words into surface tokens.
///
/// Edge punctuation is stripped; hyphens and apostrophes inside a word are
/// kept, except that a possessive `'s` becomes its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let core = chunk.trim_matches(|c: char| !c.is_alphanumeric() && !is_apostrophe(c));
        let core = core.trim_end_matches(is_apostrophe);
        let lower_core: String = core.to_lowercase();
        if lower_core == "'s" || lower_core == "\u{2019}s" {
            out.push("'s".to_owned());
            continue;
        }
        let core = core.trim_start_matches(is_apostrophe);
        let core = core.trim_matches(|c: char| !c.is_alphanumeric());
        if core.is_empty() {
            continue;
        }
        let chars: Vec<char> = core.chars().collect();
        let n = chars.len();
        if n > 2 && is_apostrophe(chars[n - 2]) && (chars[n - 1] == 's' || chars[n - 1] == 'S') {
            let base: String = chars[..n - 2].iter().collect();
            let base = base.trim_end_matches(|c: char| !c.is_alphanumeric());
            if !base.is_empty() {
                out.push(base.to_owned());
            }
            out.push("'s".to_owned());
        } else {
            out.push(core.to_owned());
        }
    }
    out
}

/// Tokenizes `text` into a sequence tagged [`Origin::Current`]; use
/// [`TokenSequence::with_origin`] to retag.
pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence {
        tokens: split_words(text)
            .into_iter()
            .map(|surface| {
                let term = normalize(&surface);
                Token {
                    surface,
                    term,
                    origin: Origin::Current,
                }
            })
            .collect(),
    }
}

/// Lowercases, drops stopwords and stems to a fixed point.
///
/// Stemming is iterated until it stops changing the word and the result is
/// checked against the stopword list again, which makes `normalize`
/// idempotent even though a single Porter pass is not.
pub fn normalize(token: &str) -> Option<Term> {
    let lower: String = token
        .chars()
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .flat_map(char::to_lowercase)
        .collect();
    if lower.is_empty() || lower.chars().any(char::is_whitespace) {
        return None;
    }
    if !lower.chars().any(char::is_alphanumeric) || is_stopword(&lower) {
        return None;
    }
    let mut cur = lower;
    loop {
        let next = stem(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    if cur.is_empty() || is_stopword(&cur) {
        return None;
    }
    Some(Term(cur))
}

pub fn term_set(x: &TokenSequence) -> BTreeSet<Term> {
    x.terms().cloned().collect()
}

/// Term set of raw text.
pub fn text_terms(text: &str) -> BTreeSet<Term> {
    term_set(&tokenize(text))
}

/// All terms of `text` in order, with repetitions.
pub fn text_term_list(text: &str) -> Vec<Term> {
    split_words(text)
        .iter()
        .filter_map(|w| normalize(w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Term {
        Term::parse(s).unwrap_or_else(|| panic!("{s} not normal"))
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Who formed Saosin?").surfaces(), ["Who", "formed", "Saosin"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("real-time  database").surfaces(),
            ["real-time", "database"]
        );
    }

    #[test]
    fn possessive_split() {
        assert_eq!(split_words("Saosin's first"), ["Saosin", "'s", "first"]);
        assert_eq!(split_words("saosin 's first"), ["saosin", "'s", "first"]);
        assert_eq!(split_words("Firebase\u{2019}s product"), ["Firebase", "'s", "product"]);
        assert_eq!(split_words("don't \"quoted\" ..."), ["don't", "quoted"]);
        assert_eq!(normalize("'s"), None);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Saosin"), Some(t("saosin")));
        assert_eq!(normalize("the"), None);
        // one Porter pass gives "releas", whose own stem is "relea"
        assert_eq!(stem("released"), "releas");
        assert_eq!(stem("releas"), "relea");
        assert_eq!(normalize("released").unwrap().as_str(), "relea");
        assert_eq!(normalize("2003").unwrap().as_str(), "2003");
        assert_eq!(normalize("--"), None);
    }

    #[test]
    fn stem_landing_on_stopword_is_dropped() {
        // "having" stems to "have", which is itself a stopword
        assert_eq!(stem("having"), "have");
        assert_eq!(normalize("having"), None);
    }

    #[test]
    fn term_set_examples() {
        let set = term_set(&tokenize("who formed saosin"));
        assert_eq!(set, [t("form"), t("saosin")].into_iter().collect());
        assert!(term_set(&tokenize("")).is_empty());
        assert_eq!(term_set(&tokenize("saosin saosin")), [t("saosin")].into_iter().collect());
    }

    #[test]
    fn stopword_file_pinned() {
        assert!(STOPWORDS_TXT.ends_with('\n'));
        assert!(!STOPWORDS_TXT.contains('\r'));
        let lines: Vec<&str> = STOPWORDS_TXT.lines().collect();
        assert!(lines.len() >= 300, "{}", lines.len());
        assert!(lines.iter().all(|l| *l == l.to_lowercase() && !l.is_empty()));
        assert!(!is_stopword("first"));
        assert_eq!(stopwords_sha256(), PINNED_STOPWORDS_SHA256);
    }

    const PINNED_STOPWORDS_SHA256: &str = "8c2fdc6528e42ba4fd43135c9c3197703b278a3df17b8908b23878b4fe833aff";

    fn word() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z]{1,12}",
            "[A-Za-z]{1,10}('s)?",
            "[a-z0-9\\-']{1,8}",
            "\\PC{1,6}",
        ]
    }

    proptest! {
        #[test]
        fn normalize_idempotent(w in word()) {
            if let Some(term) = normalize(&w) {
                prop_assert_eq!(normalize(term.as_str()), Some(term.clone()));
                prop_assert!(!term.as_str().chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn term_set_distributes_over_concat(a in "[A-Za-z ,.?']{0,40}", b in "[A-Za-z ,.?']{0,40}") {
            let joined = format!("{a} {b}");
            let mut union = text_terms(&a);
            union.extend(text_terms(&b));
            prop_assert_eq!(text_terms(&joined), union);
        }

        #[test]
        fn tokenize_deterministic(s in "\\PC{0,60}") {
            prop_assert_eq!(tokenize(&s), tokenize(&s));
        }
    }
}

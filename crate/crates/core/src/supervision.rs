//! Per-term training labels for query resolution.
//!
//! A history term is a positive resolution term for turn `i` when it occurs
//! in the reference text for that turn, occurs somewhere in turns `1..i`,
//! and is absent from turn `i` itself. The reference text is either a human
//! rewrite (gold labels) or a passage known to be relevant to the turn
//! (distant labels).

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::preproc::{self, Origin, Term, Token, TokenSequence};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const DEFAULT_MAX_LEN: usize = 256;
pub const DEFAULT_ANSWER_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    /// Document containing the answer.
    pub text: String,
    /// Char offsets of the answer inside `text`.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "turn")]
    pub turn_index: u32,
    pub query: String,
    #[serde(rename = "rewrite", default, skip_serializing_if = "Option::is_none")]
    pub gold_rewrite: Option<String>,
    #[serde(
        rename = "relevant_passages",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub relevant_passage_ids: Option<Vec<String>>,
    #[serde(rename = "answer", default, skip_serializing_if = "Option::is_none")]
    pub answer_span: Option<AnswerSpan>,
}

impl Turn {
    pub fn new(turn_index: u32, query: impl Into<String>) -> Self {
        Turn {
            turn_index,
            query: query.into(),
            gold_rewrite: None,
            relevant_passage_ids: None,
            answer_span: None,
        }
    }

    pub fn with_rewrite(mut self, rewrite: impl Into<String>) -> Self {
        self.gold_rewrite = Some(rewrite.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub turns: Vec<Turn>,
}

impl Topic {
    /// Checks the structural invariants: at least one turn, and turn indices
    /// exactly `1..=n` in order.
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid(format!("topic {} has no turns", self.topic_id)));
        }
        for (pos, turn) in self.turns.iter().enumerate() {
            if turn.turn_index as usize != pos + 1 {
                return Err(Error::invalid(format!(
                    "topic {}: turn indices must be 1..={} in order, found {} at position {}",
                    self.topic_id,
                    self.turns.len(),
                    turn.turn_index,
                    pos + 1
                )));
            }
        }
        Ok(())
    }

    pub fn turn(&self, turn_index: u32) -> Option<&Turn> {
        let pos = (turn_index as usize).checked_sub(1)?;
        self.turns.get(pos)
    }

    fn expect_turn(&self, turn_index: u32) -> Result<&Turn> {
        self.turn(turn_index).ok_or_else(|| {
            Error::invalid(format!("topic {} has no turn {turn_index}", self.topic_id))
        })
    }

    /// Raw queries of turns `1..turn_index`.
    pub fn history(&self, turn_index: u32) -> Vec<&str> {
        self.turns
            .iter()
            .take((turn_index as usize).saturating_sub(1))
            .map(|t| t.query.as_str())
            .collect()
    }

    /// Query id in the `<topic>_<turn>` convention used by run and qrels
    /// files.
    pub fn query_id(&self, turn_index: u32) -> String {
        query_id(&self.topic_id, turn_index)
    }
}

pub fn query_id(topic_id: &str, turn_index: u32) -> String {
    format!("{topic_id}_{turn_index}")
}

/// Splits a `<topic>_<turn>` query id. Returns `None` when the suffix is not
/// a turn number.
pub fn split_query_id(qid: &str) -> Option<(&str, u32)> {
    let (topic, turn) = qid.rsplit_once('_')?;
    Some((topic, turn.parse().ok()?))
}

pub fn read_topics(path: &Path) -> Result<Vec<Topic>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_topics(std::io::BufReader::new(file), &path.display().to_string())
}

/// Parses JSON-lines topics, one per line, validating each.
pub fn parse_topics(reader: impl BufRead, name: &str) -> Result<Vec<Topic>> {
    let mut topics: Vec<Topic> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: name.to_owned(),
            line: i + 1,
            message,
        };
        let topic: Topic = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        topic.validate().map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(topic.topic_id.clone()) {
            return Err(parse_err(format!("duplicate topic id {}", topic.topic_id)));
        }
        topics.push(topic);
    }
    Ok(topics)
}

fn union_terms<'a>(texts: impl IntoIterator<Item = &'a str>) -> BTreeSet<Term> {
    texts.into_iter().flat_map(preproc::text_terms).collect()
}

/// `terms(reference) ∩ terms(history) \ terms(current)`.
pub fn resolution_terms(reference: &str, history: &[&str], current: &str) -> BTreeSet<Term> {
    let reference = preproc::text_terms(reference);
    let history = union_terms(history.iter().copied());
    let current = preproc::text_terms(current);
    reference
        .intersection(&history)
        .filter(|t| !current.contains(*t))
        .cloned()
        .collect()
}

/// Positive terms derived from a human rewrite of the current turn.
pub fn gold_resolution_terms(gold_rewrite: &str, history: &[&str], current: &str) -> BTreeSet<Term> {
    resolution_terms(gold_rewrite, history, current)
}

/// Positive terms derived from a relevant passage in place of a rewrite.
pub fn distant_resolution_terms(
    relevant_passage: &str,
    history: &[&str],
    current: &str,
) -> BTreeSet<Term> {
    resolution_terms(relevant_passage, history, current)
}

/// Union of [`distant_resolution_terms`] over several relevant passages.
pub fn distant_resolution_terms_multi(
    relevant_passages: &[&str],
    history: &[&str],
    current: &str,
) -> BTreeSet<Term> {
    relevant_passages
        .iter()
        .flat_map(|p| distant_resolution_terms(p, history, current))
        .collect()
}

/// Text within `window` chars either side of the char span `[start, end)`.
pub fn extract_answer_window(document: &str, start: usize, end: usize, window: usize) -> Result<String> {
    let len = document.chars().count();
    if start > end || end > len {
        return Err(Error::invalid(format!(
            "answer span ({start},{end}) invalid for document of {len} chars"
        )));
    }
    let lo = start.saturating_sub(window);
    let hi = (end + window).min(len);
    Ok(document.chars().skip(lo).take(hi - lo).collect())
}

/// One term-classification instance.
///
/// Layout: `[CLS] history... [SEP] current...`. `mask[i] == 1` exactly at
/// history positions that carry a term; `labels[i]` may be 1 only there.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub topic_id: String,
    pub turn: u32,
    pub sequence: TokenSequence,
    pub labels: Vec<u8>,
    pub mask: Vec<u8>,
}

impl LabeledExample {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn query_id(&self) -> String {
        query_id(&self.topic_id, self.turn)
    }

    /// Terms labeled relevant at any position.
    pub fn positives(&self) -> BTreeSet<Term> {
        self.sequence
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == 1)
            .filter_map(|(t, _)| t.term.clone())
            .collect()
    }

    /// Terms at masked-in positions, i.e. the candidate expansion terms.
    pub fn candidates(&self) -> BTreeSet<Term> {
        self.sequence
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m == 1)
            .filter_map(|(t, _)| t.term.clone())
            .collect()
    }

    pub fn current_terms(&self) -> BTreeSet<Term> {
        self.sequence
            .iter()
            .filter(|t| t.origin == Origin::Current)
            .filter_map(|t| t.term.clone())
            .collect()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Checks the label/mask invariants against the sequence.
    pub fn check(&self) -> Result<()> {
        let n = self.sequence.len();
        if self.labels.len() != n || self.mask.len() != n {
            return Err(Error::invalid(format!(
                "{}: sequence/labels/mask lengths differ",
                self.query_id()
            )));
        }
        for (i, tok) in self.sequence.iter().enumerate() {
            let expect_mask = matches!(tok.origin, Origin::History(_)) && tok.term.is_some();
            if (self.mask[i] == 1) != expect_mask || self.mask[i] > 1 {
                return Err(Error::invalid(format!("{}: bad mask at {i}", self.query_id())));
            }
            if self.labels[i] > self.mask[i] {
                return Err(Error::invalid(format!(
                    "{}: label outside mask at {i}",
                    self.query_id()
                )));
            }
        }
        Ok(())
    }
}

/// Builds the model input for `turn_index` of `topic`, labeling every
/// history occurrence of a term in `positives`.
///
/// Returns `Ok(None)` for the first turn, which has no history. History
/// tokens are dropped oldest-first to fit `max_len`.
pub fn build_example(
    topic: &Topic,
    turn_index: u32,
    positives: &BTreeSet<Term>,
    max_len: usize,
) -> Result<Option<LabeledExample>> {
    let current_turn = topic.expect_turn(turn_index)?;
    if turn_index == 1 {
        return Ok(None);
    }
    let current = preproc::tokenize(&current_turn.query).with_origin(Origin::Current);
    if current.len() + 2 > max_len {
        return Err(Error::invalid(format!(
            "{}: current turn has {} tokens, exceeds max_len {max_len}",
            topic.query_id(turn_index),
            current.len()
        )));
    }
    let mut history: Vec<Token> = topic.turns[..turn_index as usize - 1]
        .iter()
        .flat_map(|t| preproc::tokenize(&t.query).with_origin(Origin::History(t.turn_index)).tokens)
        .collect();
    let budget = max_len - current.len() - 2;
    if history.len() > budget {
        history.drain(..history.len() - budget);
    }

    let mut tokens = Vec::with_capacity(history.len() + current.len() + 2);
    tokens.push(Token::special(CLS));
    tokens.extend(history);
    tokens.push(Token::special(SEP));
    tokens.extend(current.tokens);

    let (labels, mask) = tokens
        .iter()
        .map(|tok| match (&tok.origin, &tok.term) {
            (Origin::History(_), Some(term)) => (u8::from(positives.contains(term)), 1),
            _ => (0, 0),
        })
        .unzip();
    Ok(Some(LabeledExample {
        topic_id: topic.topic_id.clone(),
        turn: turn_index,
        sequence: TokenSequence { tokens },
        labels,
        mask,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Gold,
    Distant,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(LabelMode::Gold),
            "distant" => Ok(LabelMode::Distant),
            other => Err(Error::Config(format!("unknown label mode {other:?}"))),
        }
    }
}

/// Summary statistics of a generated label set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub queries: usize,
    pub first_turns_skipped: usize,
    pub missing_supervision_skipped: usize,
    pub unknown_passages: usize,
    pub mean_total_terms: f64,
    pub std_total_terms: f64,
    pub mean_positive_terms: f64,
    pub std_positive_terms: f64,
    /// Fraction of reference terms found in the history, averaged over
    /// queries with a non-empty reference.
    pub mean_history_coverage: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reference texts for one turn under `mode`, or `None` if the turn lacks
/// the required supervision.
fn reference_texts<'a>(
    turn: &'a Turn,
    mode: LabelMode,
    store: Option<&'a dyn PassageStore>,
    window: usize,
    unknown: &mut usize,
) -> Result<Option<Vec<String>>> {
    match mode {
        LabelMode::Gold => Ok(turn.gold_rewrite.clone().map(|r| vec![r])),
        LabelMode::Distant => {
            let mut texts = Vec::new();
            if let (Some(ids), Some(store)) = (&turn.relevant_passage_ids, store) {
                for id in ids {
                    match store.text(id) {
                        Some(text) => texts.push(text.to_owned()),
                        None => *unknown += 1,
                    }
                }
            }
            if let Some(ans) = &turn.answer_span {
                texts.push(extract_answer_window(&ans.text, ans.start, ans.end, window)?);
            }
            Ok((!texts.is_empty()).then_some(texts))
        }
    }
}

/// Generates labeled examples for every non-first turn of `topics`, in
/// `(topic, turn)` input order. Turns lacking the supervision `mode` needs
/// are skipped and counted.
pub fn label_topics(
    topics: &[Topic],
    mode: LabelMode,
    store: Option<&dyn PassageStore>,
    max_len: usize,
) -> Result<(Vec<LabeledExample>, LabelStats)> {
    let mut stats = LabelStats::default();
    let mut examples = Vec::new();
    let mut totals = Vec::new();
    let mut positives_n = Vec::new();
    let mut coverage = Vec::new();
    for topic in topics {
        topic.validate()?;
        for turn in &topic.turns {
            if turn.turn_index == 1 {
                stats.first_turns_skipped += 1;
                continue;
            }
            let Some(refs) = reference_texts(
                turn,
                mode,
                store,
                DEFAULT_ANSWER_WINDOW,
                &mut stats.unknown_passages,
            )?
            else {
                stats.missing_supervision_skipped += 1;
                continue;
            };
            let history = topic.history(turn.turn_index);
            let ref_strs: Vec<&str> = refs.iter().map(String::as_str).collect();
            let positives = distant_resolution_terms_multi(&ref_strs, &history, &turn.query);

            let ref_terms = union_terms(ref_strs.iter().copied());
            if !ref_terms.is_empty() {
                let hist = union_terms(history.iter().copied());
                let found = ref_terms.iter().filter(|t| hist.contains(*t)).count();
                coverage.push(found as f64 / ref_terms.len() as f64);
            }

            if let Some(ex) = build_example(topic, turn.turn_index, &positives, max_len)? {
                totals.push(ex.masked_count() as f64);
                positives_n.push(ex.positives().len() as f64);
                examples.push(ex);
            }
        }
    }
    stats.queries = examples.len();
    (stats.mean_total_terms, stats.std_total_terms) = mean_std(&totals);
    (stats.mean_positive_terms, stats.std_positive_terms) = mean_std(&positives_n);
    stats.mean_history_coverage = mean_std(&coverage).0;
    Ok((examples, stats))
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    topic_id: String,
    turn: u32,
    tokens: Vec<String>,
    /// 0 for special tokens, otherwise the turn the token came from.
    turns: Vec<u32>,
    labels: Vec<u8>,
    mask: Vec<u8>,
}

impl From<&LabeledExample> for ExampleRecord {
    fn from(ex: &LabeledExample) -> Self {
        ExampleRecord {
            topic_id: ex.topic_id.clone(),
            turn: ex.turn,
            tokens: ex.sequence.iter().map(|t| t.surface.clone()).collect(),
            turns: ex
                .sequence
                .iter()
                .map(|t| match t.origin {
                    Origin::Special => 0,
                    Origin::History(i) => i,
                    Origin::Current => ex.turn,
                })
                .collect(),
            labels: ex.labels.clone(),
            mask: ex.mask.clone(),
        }
    }
}

impl TryFrom<ExampleRecord> for LabeledExample {
    type Error = Error;

    fn try_from(r: ExampleRecord) -> Result<Self> {
        if r.tokens.len() != r.turns.len() {
            return Err(Error::invalid("tokens/turns length mismatch"));
        }
        let tokens = r
            .tokens
            .into_iter()
            .zip(&r.turns)
            .map(|(surface, &turn)| {
                let origin = match turn {
                    0 => Origin::Special,
                    t if t == r.turn => Origin::Current,
                    t if t < r.turn => Origin::History(t),
                    t => return Err(Error::invalid(format!("token from future turn {t}"))),
                };
                let term = match origin {
                    Origin::Special => None,
                    _ => preproc::normalize(&surface),
                };
                Ok(Token {
                    surface,
                    term,
                    origin,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ex = LabeledExample {
            topic_id: r.topic_id,
            turn: r.turn,
            sequence: TokenSequence { tokens },
            labels: r.labels,
            mask: r.mask,
        };
        ex.check()?;
        Ok(ex)
    }
}

pub fn example_to_json(ex: &LabeledExample) -> String {
    serde_json::to_string(&ExampleRecord::from(ex)).expect("plain data serializes")
}

pub fn example_from_json(line: &str) -> Result<LabeledExample> {
    let rec: ExampleRecord = serde_json::from_str(line)?;
    rec.try_into()
}

pub fn write_examples(mut w: impl Write, examples: &[LabeledExample]) -> std::io::Result<()> {
    for ex in examples {
        writeln!(w, "{}", example_to_json(ex))?;
    }
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(example_from_json(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const SAOSIN_PASSAGE: &str = "The original lineup for Saosin, consisting of Burchell, \
        Shekoski, Kennedy and Green, was formed in the summer of 2003. On June 17, the band \
        released their first commercial production, the EP Translating the Name.";

    pub fn saosin_topic() -> Topic {
        Topic {
            topic_id: "saosin".into(),
            turns: vec![
                Turn::new(1, "who formed saosin?"),
                Turn::new(2, "when was the band founded?"),
                Turn::new(3, "what was their first album?"),
                Turn::new(4, "when was the album released?")
                    .with_rewrite("when was saosin 's first album released?"),
            ],
        }
    }

    pub fn terms(words: &[&str]) -> BTreeSet<Term> {
        words
            .iter()
            .map(|w| preproc::normalize(w).unwrap_or_else(|| panic!("{w} normalizes to nothing")))
            .collect()
    }
}

//! Term classification over the conversation history, plus the rewrite
//! baselines it is compared with.

mod checkpoint;
mod model;
mod train;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preproc::{self, Term};
use crate::query::ResolvedQuery;
use crate::supervision::{build_example, LabeledExample, Topic};

pub use crate::query::resolve;
pub use checkpoint::CHECKPOINT_FORMAT_VERSION;
pub use model::{bce_loss, EncoderConfig, Params, Tensor};
pub use train::{dev_f1, train, EpochLog, TrainConfig, TrainReport};
pub use vocab::{Vocab, UNK};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A trained (or freshly initialized) classifier. Immutable once built, so
/// it can be shared across threads for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolverModel {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub params: Params,
}

impl ResolverModel {
    /// Random initialization; `config.vocab_size` is replaced by the
    /// vocabulary's size.
    pub fn init(config: &EncoderConfig, vocab: Vocab, rng: &mut impl RngCore) -> Result<Self> {
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            ..config.clone()
        };
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(ResolverModel { config, vocab, params })
    }

    fn checked_ids(&self, example: &LabeledExample) -> Result<Vec<usize>> {
        if example.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "{}: {} tokens exceed max_len {}",
                example.query_id(),
                example.len(),
                self.config.max_len
            )));
        }
        Ok(self.vocab.encode(example))
    }

    /// One `embed_dim` vector per position.
    pub fn encode(&self, example: &LabeledExample) -> Result<Vec<Vec<f64>>> {
        let fw = model::forward(&self.params, &self.config, &self.checked_ids(example)?, None)?;
        Ok(fw.hidden.chunks(self.config.embed_dim).map(<[f64]>::to_vec).collect())
    }

    /// Relevance probability at each masked-in position, `None` elsewhere.
    pub fn score_terms(&self, example: &LabeledExample) -> Result<Vec<Option<f64>>> {
        let fw = model::forward(&self.params, &self.config, &self.checked_ids(example)?, None)?;
        Ok(fw
            .logits
            .iter()
            .zip(&example.mask)
            .map(|(&z, &m)| (m == 1).then(|| model::sigmoid(z)))
            .collect())
    }

    /// Predicted expansion terms and the per-term maximum score.
    pub fn predict_example(
        &self,
        example: &LabeledExample,
        threshold: f64,
    ) -> Result<(BTreeSet<Term>, BTreeMap<Term, f64>)> {
        let scores = self.score_terms(example)?;
        Ok(predict_from_scores(example, &scores, threshold))
    }

    /// Mean BCE of the current parameters on one example (eval mode).
    pub fn loss(&self, example: &LabeledExample, pos_weight: f64) -> Result<Option<f64>> {
        let probs: Vec<f64> = self
            .score_terms(example)?
            .into_iter()
            .map(|p| p.unwrap_or(0.5))
            .collect();
        Ok(bce_loss(&probs, &example.labels, &example.mask, pos_weight))
    }

    /// Loss and analytic parameter gradient on one example, or `None` when
    /// the example has no masked-in position.
    pub fn loss_and_gradient(&self, example: &LabeledExample, pos_weight: f64) -> Result<Option<(f64, Params)>> {
        let fw = model::forward(&self.params, &self.config, &self.checked_ids(example)?, None)?;
        let Some((loss, dlogits)) = model::bce_with_logits(&fw.logits, &example.labels, &example.mask, pos_weight)
        else {
            return Ok(None);
        };
        let mut grads = self.params.zeros_like();
        model::backward(&self.params, &self.config, &fw, &dlogits, &mut grads);
        Ok(Some((loss, grads)))
    }
}

/// A term is predicted when any of its positions scores at least
/// `threshold`; current-turn terms are never predicted.
pub fn predict_from_scores(
    example: &LabeledExample,
    scores: &[Option<f64>],
    threshold: f64,
) -> (BTreeSet<Term>, BTreeMap<Term, f64>) {
    let mut best: BTreeMap<Term, f64> = BTreeMap::new();
    for ((tok, score), &m) in example.sequence.iter().zip(scores).zip(&example.mask) {
        if let (1, Some(term), Some(s)) = (m, &tok.term, score) {
            let e = best.entry(term.clone()).or_insert(*s);
            *e = e.max(*s);
        }
    }
    let current = example.current_terms();
    let predicted = best
        .iter()
        .filter(|(t, &s)| s >= threshold && !current.contains(*t))
        .map(|(t, _)| t.clone())
        .collect();
    (predicted, best)
}

/// Expansion terms for `turn_index`; empty on the first turn.
pub fn predict_terms(model: &ResolverModel, topic: &Topic, turn_index: u32, threshold: f64) -> Result<BTreeSet<Term>> {
    Ok(predict_scored(model, topic, turn_index, threshold)?.terms)
}

fn predict_scored(model: &ResolverModel, topic: &Topic, turn_index: u32, threshold: f64) -> Result<Prediction> {
    let mut out = Prediction {
        topic_id: topic.topic_id.clone(),
        turn: turn_index,
        terms: BTreeSet::new(),
        scores: BTreeMap::new(),
    };
    if let Some(ex) = build_example(topic, turn_index, &BTreeSet::new(), model.config.max_len)? {
        let (terms, scores) = model.predict_example(&ex, threshold)?;
        out.terms = terms;
        out.scores = scores;
    }
    Ok(out)
}

/// Exported per-turn prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub topic_id: String,
    pub turn: u32,
    pub terms: BTreeSet<Term>,
    pub scores: BTreeMap<Term, f64>,
}

/// Predictions for every turn of every topic, in input order.
pub fn predict_topics(model: &ResolverModel, topics: &[Topic], threshold: f64) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for topic in topics {
        for turn in &topic.turns {
            out.push(predict_scored(model, topic, turn.turn_index, threshold)?);
        }
    }
    Ok(out)
}

pub fn write_predictions(mut w: impl Write, predictions: &[Prediction]) -> Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

pub fn read_predictions(reader: impl BufRead, name: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: name.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_predictions_path(path: &Path) -> Result<Vec<Prediction>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(std::io::BufReader::new(file), &path.display().to_string())
}

/// Which earlier turns the Original baselines append.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OriginalVariant {
    Cur,
    CurPrev,
    CurFirst,
    All,
}

impl OriginalVariant {
    pub const ALL: [OriginalVariant; 4] = [Self::Cur, Self::CurPrev, Self::CurFirst, Self::All];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cur => "cur",
            Self::CurPrev => "cur+prev",
            Self::CurFirst => "cur+first",
            Self::All => "all",
        }
    }
}

impl fmt::Display for OriginalVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OriginalVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown Original variant {s:?}")))
    }
}

/// History terms the variant appends, minus current-turn terms.
pub fn original_expansion(variant: OriginalVariant, topic: &Topic, turn_index: u32) -> Result<BTreeSet<Term>> {
    let current = topic
        .turn(turn_index)
        .ok_or_else(|| Error::invalid(format!("{}: no such turn", topic.query_id(turn_index))))?;
    let earlier = &topic.turns[..turn_index as usize - 1];
    let selected: Vec<&str> = match variant {
        OriginalVariant::Cur => Vec::new(),
        OriginalVariant::CurPrev => earlier.last().map(|t| t.query.as_str()).into_iter().collect(),
        OriginalVariant::CurFirst => earlier.first().map(|t| t.query.as_str()).into_iter().collect(),
        OriginalVariant::All => earlier.iter().map(|t| t.query.as_str()).collect(),
    };
    let current_terms = preproc::text_terms(&current.query);
    Ok(selected
        .into_iter()
        .flat_map(preproc::text_terms)
        .filter(|t| !current_terms.contains(t))
        .collect())
}

pub fn baseline_original(variant: OriginalVariant, topic: &Topic, turn_index: u32) -> Result<ResolvedQuery> {
    let expansion = original_expansion(variant, topic, turn_index)?;
    let current = topic.turn(turn_index).expect("checked by original_expansion");
    Ok(resolve(&current.query, &expansion))
}

/// The gold rewrite as a query; the raw turn when no rewrite exists.
pub fn oracle_query(topic: &Topic, turn_index: u32) -> Result<ResolvedQuery> {
    let turn = topic
        .turn(turn_index)
        .ok_or_else(|| Error::invalid(format!("{}: no such turn", topic.query_id(turn_index))))?;
    Ok(ResolvedQuery::from_text(turn.gold_rewrite.as_deref().unwrap_or(&turn.query)))
}

/// Query-resolution strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolverVariant {
    QuReTeC,
    Original(OriginalVariant),
    /// RM3 feedback on top of an Original variant.
    Rm3(OriginalVariant),
    Oracle,
}

impl fmt::Display for ResolverVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::QuReTeC => f.write_str("quretec"),
            Self::Original(v) => write!(f, "original:{v}"),
            Self::Rm3(v) => write!(f, "rm3:{v}"),
            Self::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for ResolverVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quretec" => Ok(Self::QuReTeC),
            "oracle" => Ok(Self::Oracle),
            _ => match s.split_once(':') {
                Some(("original", v)) => Ok(Self::Original(v.parse()?)),
                Some(("rm3", v)) => Ok(Self::Rm3(v.parse()?)),
                _ => Err(Error::Config(format!("unknown resolver variant {s:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervision::fixtures::{saosin_topic, terms};
    use crate::supervision::{LabelMode, Turn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 1000,
            embed_dim: 16,
            layers: 1,
            heads: 2,
            max_len: 64,
            dropout_rate: 0.1,
            seed: 5,
        }
    }

    fn saosin_example() -> LabeledExample {
        let topic = saosin_topic();
        build_example(&topic, 4, &terms(&["saosin", "first"]), 64).unwrap().unwrap()
    }

    fn untrained(example: &LabeledExample) -> ResolverModel {
        let vocab = Vocab::build([example], 100).unwrap();
        ResolverModel::init(&small_encoder(), vocab, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn scores_only_at_masked_positions() {
        let ex = saosin_example();
        let model = untrained(&ex);
        let scores = model.score_terms(&ex).unwrap();
        for (s, &m) in scores.iter().zip(&ex.mask) {
            assert_eq!(s.is_some(), m == 1);
            if let Some(p) = s {
                assert!(*p > 0.0 && *p < 1.0);
            }
        }
        let mut none = ex.clone();
        none.mask.fill(0);
        none.labels.fill(0);
        assert!(model.score_terms(&none).unwrap().iter().all(Option::is_none));

        let mut zero = model.clone();
        zero.params.head_w.data.fill(0.0);
        zero.params.head_b.data.fill(0.0);
        assert!(zero.score_terms(&ex).unwrap().iter().flatten().all(|&p| p == 0.5));
        assert_eq!(model.encode(&ex).unwrap().len(), ex.len());
    }

    #[test]
    fn threshold_boundaries() {
        let topic = saosin_topic();
        let ex = build_example(&topic, 4, &BTreeSet::new(), 64).unwrap().unwrap();
        let model = untrained(&ex);
        assert!(predict_terms(&model, &topic, 4, 1.0).unwrap().is_empty());
        let all = predict_terms(&model, &topic, 4, 0.0).unwrap();
        assert_eq!(all, original_expansion(OriginalVariant::All, &topic, 4).unwrap());
        assert!(predict_terms(&model, &topic, 1, 0.0).unwrap().is_empty());
    }

    #[test]
    fn mask_soundness() {
        let ex = saosin_example();
        let scores: Vec<Option<f64>> = ex.mask.iter().map(|&m| (m == 1).then_some(0.7)).collect();
        let (pred, _) = predict_from_scores(&ex, &scores, 0.5);
        // a value at a masked-out position is ignored
        let mut perturbed = scores.clone();
        let out = ex.mask.iter().position(|&m| m == 0).unwrap();
        perturbed[out] = Some(0.99);
        assert_eq!(predict_from_scores(&ex, &perturbed, 0.5).0, pred);
        let probs: Vec<f64> = scores.iter().map(|s| s.unwrap_or(0.1)).collect();
        let mut probs2 = probs.clone();
        probs2[out] = 0.9;
        assert_eq!(
            bce_loss(&probs, &ex.labels, &ex.mask, 1.0),
            bce_loss(&probs2, &ex.labels, &ex.mask, 1.0)
        );
    }

    #[test]
    fn one_epoch_on_one_example_lowers_its_loss() {
        let ex = saosin_example();
        let enc = EncoderConfig {
            dropout_rate: 0.0,
            ..small_encoder()
        };
        let vocab = Vocab::build([&ex], enc.vocab_size).unwrap();
        let init = ResolverModel::init(&enc, vocab, &mut ChaCha8Rng::seed_from_u64(enc.seed)).unwrap();
        let tc = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        let (trained, report) = train(std::slice::from_ref(&ex), std::slice::from_ref(&ex), &enc, &tc).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert!(trained.loss(&ex, 1.0).unwrap().unwrap() < init.loss(&ex, 1.0).unwrap().unwrap());
    }

    #[test]
    fn training_is_deterministic_and_patience_bounds_epochs() {
        let topic = saosin_topic();
        let (examples, _) = crate::supervision::label_topics(&[topic], LabelMode::Gold, None, 64).unwrap();
        let tc = TrainConfig {
            patience: 2,
            max_epochs: 6,
            ..Default::default()
        };
        let (m1, r1) = train(&examples, &examples, &small_encoder(), &tc).unwrap();
        let (m2, r2) = train(&examples, &examples, &small_encoder(), &tc).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(m1.to_json().unwrap(), m2.to_json().unwrap());
        let bad = TrainConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(train(&examples, &examples, &small_encoder(), &bad).is_err());
        assert!(matches!(train(&examples, &[], &small_encoder(), &tc), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ex = saosin_example();
        let model = untrained(&ex);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = ResolverModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.score_terms(&ex).unwrap(), model.score_terms(&ex).unwrap());

        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"data\":[", "\"data\":[1.5,", 1);
        assert!(ResolverModel::from_json(&tampered).is_err());
        let other_hash = text.replace("\"sha256\":\"", "\"sha256\":\"0");
        assert!(matches!(ResolverModel::from_json(&other_hash), Err(Error::Incompatible { .. })));
    }

    #[test]
    fn original_baselines() {
        let topic = saosin_topic();
        for v in OriginalVariant::ALL {
            assert_eq!(baseline_original(v, &topic, 1).unwrap(), ResolvedQuery::from_text("who formed saosin?"));
        }
        let q = baseline_original(OriginalVariant::CurFirst, &topic, 4).unwrap();
        assert_eq!(q.terms(), terms(&["album", "released", "formed", "saosin"]));
        let q = baseline_original(OriginalVariant::CurPrev, &topic, 4).unwrap();
        assert_eq!(q.terms(), terms(&["album", "released", "first"]));
        let all = baseline_original(OriginalVariant::All, &topic, 4).unwrap().terms();
        for v in OriginalVariant::ALL {
            assert!(baseline_original(v, &topic, 4).unwrap().terms().is_subset(&all));
        }
        assert_eq!(
            oracle_query(&topic, 4).unwrap().terms(),
            terms(&["saosin", "first", "album", "released"])
        );
        assert_eq!(oracle_query(&topic, 2).unwrap(), ResolvedQuery::from_text("when was the band founded?"));
    }

    #[test]
    fn variant_names_round_trip() {
        for s in ["quretec", "oracle", "original:cur", "original:cur+prev", "original:cur+first", "original:all", "rm3:cur+first"] {
            assert_eq!(s.parse::<ResolverVariant>().unwrap().to_string(), s);
        }
        assert!("rm3:bogus".parse::<ResolverVariant>().is_err());
        assert!("bert".parse::<ResolverVariant>().is_err());
    }

    fn database_topic() -> Topic {
        let qs = [
            "What is a real-time database?",
            "How does it differ from traditional ones?",
            "What are the advantages of real-time processing?",
            "What are examples of important ones?",
            "What are important applications?",
            "What are important cloud options?",
            "Tell me about the Firebase DB?",
            "How is it used in mobile apps?",
        ];
        Topic {
            topic_id: "db".into(),
            turns: qs.iter().enumerate().map(|(i, q)| Turn::new(i as u32 + 1, *q)).collect(),
        }
    }

    #[test]
    fn database_dialogue_plumbing() {
        // scores placed where the classifier of the published example fires
        let topic = database_topic();
        let ex = build_example(&topic, 8, &BTreeSet::new(), 256).unwrap().unwrap();
        let hot = terms(&["database", "firebase", "db"]);
        let scores: Vec<Option<f64>> = ex
            .sequence
            .iter()
            .zip(&ex.mask)
            .map(|(tok, &m)| (m == 1).then(|| if hot.contains(tok.term.as_ref().unwrap()) { 0.9 } else { 0.1 }))
            .collect();
        let (pred, _) = predict_from_scores(&ex, &scores, DEFAULT_THRESHOLD);
        assert_eq!(pred, hot);
        let q = resolve(&topic.turns[7].query, &pred);
        assert_eq!(q.terms(), terms(&["mobile", "apps", "database", "firebase", "db"]));
    }

    #[test]
    fn prediction_export_round_trip() {
        let topic = saosin_topic();
        let ex = build_example(&topic, 4, &BTreeSet::new(), 64).unwrap().unwrap();
        let model = untrained(&ex);
        let preds = predict_topics(&model, &[topic], 0.5).unwrap();
        assert_eq!(preds.len(), 4);
        assert!(preds[0].scores.is_empty());
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.starts_with("{\"topic_id\":\"saosin\",\"turn\":1,\"terms\":[],\"scores\":{}}"));
        assert_eq!(read_predictions(&buf[..], "t").unwrap(), preds);
    }
}

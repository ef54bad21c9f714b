//! Pipeline commands. Each reads its inputs fully and validates them before
//! writing anything, and every write is atomic.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_run, intrinsic_eval, intrinsic_table, paired_metric, paired_ttest, ranking_table, IntrinsicEntry,
    IntrinsicReport, Qrels, RankingReport, TTest,
};
use crate::fusion::{rerank, rrf_fuse, OverlapScorer};
use crate::io_util::{sha256_path, write_atomic};
use crate::preproc::Term;
use crate::query::ResolvedQuery;
use crate::resolver::{
    baseline_original, oracle_query, original_expansion, predict_topics, train, write_predictions, OriginalVariant,
    Prediction, ResolverModel, ResolverVariant, TrainReport,
};
use crate::retrieval::{rm3_expand, search, InvertedIndex};
use crate::run::{read_run, run_to_string, RankedList, Run};
use crate::supervision::{
    gold_resolution_terms, label_topics, read_topics, write_examples, LabelMode, LabelStats, Topic,
};

/// One resolved query as exchanged between commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub topic_id: String,
    pub turn: u32,
    /// Terms added to the current turn.
    pub expansion: BTreeSet<Term>,
    pub query: ResolvedQuery,
}

/// Report header: the resolved configuration and content hashes of inputs.
pub fn report_header(config: &PipelineConfig, inputs: &[(&str, &Path)]) -> Result<serde_json::Value> {
    let mut hashes = BTreeMap::new();
    for (name, path) in inputs {
        hashes.insert(
            name.to_string(),
            json!({"path": path.display().to_string(), "sha256": sha256_path(path)?}),
        );
    }
    Ok(json!({"config": config.entries(), "inputs": hashes}))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn load_topics(config: &PipelineConfig, value: &Option<PathBuf>, key: &str) -> Result<Vec<Topic>> {
    read_topics(config.require_existing(value, key)?)
}

fn load_corpus(config: &PipelineConfig) -> Result<Corpus> {
    Corpus::read_tsv(config.require_existing(&config.corpus, "corpus")?)
}

/// Writes labeled examples for `topics` to `out` and returns their summary.
pub fn cmd_label(config: &PipelineConfig, out: &Path) -> Result<LabelStats> {
    let topics = load_topics(config, &config.topics, "topics")?;
    let corpus = match config.label_mode {
        LabelMode::Distant => Some(load_corpus(config)?),
        LabelMode::Gold => None,
    };
    let (examples, stats) = label_topics(
        &topics,
        config.label_mode,
        corpus.as_ref().map(|c| c as &dyn crate::corpus::PassageStore),
        config.encoder.max_len,
    )?;
    if stats.missing_supervision_skipped > 0 {
        log::warn!("{} turns lacked supervision and were skipped", stats.missing_supervision_skipped);
    }
    let mut buf = Vec::new();
    write_examples(&mut buf, &examples).map_err(|e| Error::io(out, e))?;
    write_atomic(out, &buf)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub passages: usize,
    pub terms: usize,
    pub tokens: u64,
}

pub fn cmd_index(config: &PipelineConfig) -> Result<IndexSummary> {
    let corpus = load_corpus(config)?;
    let dir = config.require(&config.index, "index")?;
    let index = InvertedIndex::build(corpus.passages())?;
    index.save(dir)?;
    Ok(IndexSummary {
        passages: index.num_passages(),
        terms: index.num_terms(),
        tokens: index.total_tokens(),
    })
}

fn load_index(config: &PipelineConfig) -> Result<InvertedIndex> {
    InvertedIndex::load(config.require_existing(&config.index, "index")?)
}

/// Trains on `train_topics` (labels per `label_mode`) with early stopping on
/// gold labels of `dev_topics`. Writes the model and `<model>.report.json`.
pub fn cmd_train(config: &PipelineConfig) -> Result<TrainReport> {
    config.validate()?;
    let train_topics = load_topics(config, &config.train_topics, "train_topics")?;
    let dev_topics = load_topics(config, &config.dev_topics, "dev_topics")?;
    let model_path = config.require(&config.model, "model")?;
    let corpus = match config.label_mode {
        LabelMode::Distant => Some(load_corpus(config)?),
        LabelMode::Gold => None,
    };
    let max_len = config.encoder.max_len;
    let (train_set, stats) = label_topics(
        &train_topics,
        config.label_mode,
        corpus.as_ref().map(|c| c as &dyn crate::corpus::PassageStore),
        max_len,
    )?;
    let (dev_set, _) = label_topics(&dev_topics, LabelMode::Gold, None, max_len)?;
    log::info!("training on {} examples, {} dev", train_set.len(), dev_set.len());
    let (model, report) = train(&train_set, &dev_set, &config.encoder, &config.train)?;
    model.save(model_path)?;
    let header = report_header(config, &[("train_topics", train_topics_path(config)?), ("dev_topics", dev_path(config)?)])?;
    write_json(
        &model_path.with_extension("report.json"),
        &json!({"header": header, "label_stats": stats, "training": report}),
    )?;
    Ok(report)
}

fn train_topics_path(config: &PipelineConfig) -> Result<&Path> {
    config.require(&config.train_topics, "train_topics")
}

fn dev_path(config: &PipelineConfig) -> Result<&Path> {
    config.require(&config.dev_topics, "dev_topics")
}

/// Resolved queries for every turn of `topics` under `variant`, plus the
/// per-term scores when the classifier is used.
pub fn resolve_topics(
    variant: ResolverVariant,
    topics: &[Topic],
    model: Option<&ResolverModel>,
    index: Option<&InvertedIndex>,
    config: &PipelineConfig,
) -> Result<(Vec<QueryRecord>, Option<Vec<Prediction>>)> {
    let mut records = Vec::new();
    let mut predictions = None;
    let record = |topic: &Topic, turn: u32, expansion: BTreeSet<Term>, query: ResolvedQuery| QueryRecord {
        query_id: topic.query_id(turn),
        topic_id: topic.topic_id.clone(),
        turn,
        expansion,
        query,
    };
    match variant {
        ResolverVariant::QuReTeC => {
            let model = model.ok_or_else(|| Error::Config("variant quretec needs a model".into()))?;
            let preds = predict_topics(model, topics, config.train.threshold)?;
            let mut it = preds.iter();
            for topic in topics {
                for turn in &topic.turns {
                    let p = it.next().expect("one prediction per turn");
                    let q = crate::query::resolve(&turn.query, &p.terms);
                    records.push(record(topic, turn.turn_index, p.terms.clone(), q));
                }
            }
            predictions = Some(preds);
        }
        ResolverVariant::Original(v) => {
            for topic in topics {
                for turn in &topic.turns {
                    let t = turn.turn_index;
                    records.push(record(topic, t, original_expansion(v, topic, t)?, baseline_original(v, topic, t)?));
                }
            }
        }
        ResolverVariant::Rm3(v) => {
            let index = index.ok_or_else(|| Error::Config("RM3 variants need an index".into()))?;
            for topic in topics {
                for turn in &topic.turns {
                    let t = turn.turn_index;
                    let q = rm3_expand(index, &baseline_original(v, topic, t)?, &config.rm3)?;
                    let current = crate::preproc::text_terms(&turn.query);
                    let expansion = q.terms().into_iter().filter(|x| !current.contains(x)).collect();
                    records.push(record(topic, t, expansion, q));
                }
            }
        }
        ResolverVariant::Oracle => {
            for topic in topics {
                for turn in &topic.turns {
                    let t = turn.turn_index;
                    let q = oracle_query(topic, t)?;
                    let current = crate::preproc::text_terms(&turn.query);
                    let expansion = q.terms().into_iter().filter(|x| !current.contains(x)).collect();
                    records.push(record(topic, t, expansion, q));
                }
            }
        }
    }
    Ok((records, predictions))
}

fn records_to_jsonl(records: &[QueryRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: m,
        };
        let r: QueryRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !seen.insert(r.query_id.clone()) {
            return Err(err(format!("duplicate query {}", r.query_id)));
        }
        out.push(r);
    }
    Ok(out)
}

fn load_model_if_needed(config: &PipelineConfig) -> Result<Option<ResolverModel>> {
    match config.variant {
        ResolverVariant::QuReTeC => Ok(Some(ResolverModel::load(config.require_existing(&config.model, "model")?)?)),
        _ => Ok(None),
    }
}

/// Resolves the configured topics; writes the query file and, for the
/// classifier, the prediction export.
pub fn cmd_resolve(config: &PipelineConfig, out: &Path, predictions_out: Option<&Path>) -> Result<Vec<QueryRecord>> {
    config.validate()?;
    let topics = load_topics(config, &config.topics, "topics")?;
    let model = load_model_if_needed(config)?;
    let index = match config.variant {
        ResolverVariant::Rm3(_) => Some(load_index(config)?),
        _ => None,
    };
    let (records, preds) = resolve_topics(config.variant, &topics, model.as_ref(), index.as_ref(), config)?;
    let queries = records_to_jsonl(&records)?;
    let pred_bytes = match (&preds, predictions_out) {
        (Some(p), Some(_)) => {
            let mut buf = Vec::new();
            write_predictions(&mut buf, p)?;
            Some(buf)
        }
        _ => None,
    };
    write_atomic(out, &queries)?;
    if let (Some(bytes), Some(path)) = (pred_bytes, predictions_out) {
        write_atomic(path, &bytes)?;
    }
    Ok(records)
}

fn queries_or_resolve(config: &PipelineConfig, queries: Option<&Path>, index: &InvertedIndex) -> Result<Vec<QueryRecord>> {
    match queries {
        Some(p) => read_queries(p),
        None => {
            let topics = load_topics(config, &config.topics, "topics")?;
            let model = load_model_if_needed(config)?;
            Ok(resolve_topics(config.variant, &topics, model.as_ref(), Some(index), config)?.0)
        }
    }
}

pub fn search_all(index: &InvertedIndex, queries: &[QueryRecord], depth: usize, mu: f64) -> Result<Run> {
    queries
        .iter()
        .map(|q| Ok((q.query_id.clone(), search(index, &q.query_id, &q.query, depth, mu)?)))
        .collect()
}

fn run_tag(config: &PipelineConfig, stage: &str) -> String {
    format!("{}-{stage}", config.variant).replace([' ', ':', '+'], "_")
}

/// Initial retrieval with the given (or freshly resolved) queries.
pub fn cmd_search(config: &PipelineConfig, queries: Option<&Path>, out: &Path) -> Result<Run> {
    config.validate()?;
    let index = load_index(config)?;
    let records = queries_or_resolve(config, queries, &index)?;
    let run = search_all(&index, &records, config.depth, config.mu)?;
    write_atomic(out, run_to_string(&run, &run_tag(config, "ql")).as_bytes())?;
    Ok(run)
}

pub fn rerank_all(run: &Run, queries: &[QueryRecord], corpus: &Corpus) -> Result<Run> {
    let by_id: BTreeMap<&str, &QueryRecord> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    run.iter()
        .map(|(qid, list)| {
            let q = by_id
                .get(qid.as_str())
                .ok_or_else(|| Error::invalid(format!("run query {qid} has no resolved query")))?;
            Ok((qid.clone(), rerank(&OverlapScorer, list, &q.query, corpus)?))
        })
        .collect()
}

pub fn cmd_rerank(config: &PipelineConfig, run_in: &Path, queries: Option<&Path>, out: &Path) -> Result<Run> {
    config.validate()?;
    let run = read_run(run_in)?;
    let corpus = load_corpus(config)?;
    let records = match queries {
        Some(p) => read_queries(p)?,
        None => {
            let topics = load_topics(config, &config.topics, "topics")?;
            let model = load_model_if_needed(config)?;
            let index = match config.variant {
                ResolverVariant::Rm3(_) => Some(load_index(config)?),
                _ => None,
            };
            resolve_topics(config.variant, &topics, model.as_ref(), index.as_ref(), config)?.0
        }
    };
    let reranked = rerank_all(&run, &records, &corpus)?;
    write_atomic(out, run_to_string(&reranked, &run_tag(config, "rerank")).as_bytes())?;
    Ok(reranked)
}

/// RRF over runs; the first run fixes the query set and passage universe.
pub fn fuse_runs(runs: &[Run], k: f64) -> Result<Run> {
    let first = runs.first().ok_or_else(|| Error::invalid("fusion needs at least one run"))?;
    first
        .keys()
        .map(|qid| {
            let lists: Vec<&RankedList> = runs.iter().filter_map(|r| r.get(qid)).collect();
            Ok((qid.clone(), rrf_fuse(&lists, k)?))
        })
        .collect()
}

pub fn cmd_fuse(config: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<Run> {
    config.validate()?;
    let runs = inputs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
    let fused = fuse_runs(&runs, config.rrf_k)?;
    write_atomic(out, run_to_string(&fused, &run_tag(config, "rrf")).as_bytes())?;
    Ok(fused)
}

/// Intrinsic entries comparing query expansions with gold resolution terms
/// for turns that have a rewrite.
pub fn intrinsic_entries(topics: &[Topic], records: &[QueryRecord]) -> Vec<IntrinsicEntry> {
    let by_id: BTreeMap<&str, &QueryRecord> = records.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let mut out = Vec::new();
    for topic in topics {
        for turn in &topic.turns {
            let (Some(rewrite), Some(rec)) = (&turn.gold_rewrite, by_id.get(topic.query_id(turn.turn_index).as_str()))
            else {
                continue;
            };
            let history = topic.history(turn.turn_index);
            out.push(IntrinsicEntry {
                topic_id: topic.topic_id.clone(),
                turn: turn.turn_index,
                predicted: rec.expansion.clone(),
                gold: gold_resolution_terms(rewrite, &history, &turn.query),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub header: serde_json::Value,
    pub runs: BTreeMap<String, RankingReport>,
    pub intrinsic: Option<IntrinsicReport>,
    /// Paired t-tests on NDCG against the first run.
    pub significance: BTreeMap<String, TTest>,
}

/// Writes `<prefix>.json` and `<prefix>.txt`.
fn write_eval(prefix: &Path, eval: &EvalOutput) -> Result<()> {
    write_json(&prefix.with_extension("json"), eval)?;
    let mut text = String::new();
    for (name, rep) in &eval.runs {
        text.push_str(&format!("== {name}\n"));
        text.push_str(&ranking_table(rep));
        text.push('\n');
    }
    for (name, t) in &eval.significance {
        let line = match t {
            TTest::Defined { t, df, p } => format!("{name}: t = {t:.4}, df = {df}, p = {p:.4}\n"),
            TTest::UndefinedVariance { df, mean_difference } => {
                format!("{name}: undefined (constant differences {mean_difference:.4}), df = {df}\n")
            }
        };
        text.push_str(&line);
    }
    if let Some(intr) = &eval.intrinsic {
        text.push_str("== intrinsic\n");
        text.push_str(&intrinsic_table(intr));
    }
    write_atomic(&prefix.with_extension("txt"), text.as_bytes())
}

pub fn evaluate(
    config: &PipelineConfig,
    header: serde_json::Value,
    runs: &[(String, &Run)],
    qrels: &Qrels,
    intrinsic: Option<&[IntrinsicEntry]>,
) -> Result<EvalOutput> {
    let reports: Vec<(String, RankingReport)> = runs
        .iter()
        .map(|(name, run)| (name.clone(), evaluate_run(run, qrels, &config.ranking)))
        .collect();
    let mut significance = BTreeMap::new();
    if let Some((base_name, base)) = reports.first() {
        for (name, rep) in reports.iter().skip(1) {
            let (a, b) = paired_metric(rep, base, |m| m.ndcg);
            if a.len() >= 2 {
                significance.insert(format!("{name} vs {base_name} (NDCG@{})", config.ranking.ndcg_cut), paired_ttest(&a, &b)?);
            }
        }
    }
    Ok(EvalOutput {
        header,
        runs: reports.into_iter().collect(),
        intrinsic: intrinsic.map(intrinsic_eval),
        significance,
    })
}

/// Scores run files against the qrels; with a query file, also scores the
/// expansions against gold resolution terms.
pub fn cmd_eval(config: &PipelineConfig, run_paths: &[PathBuf], queries: Option<&Path>, out_prefix: &Path) -> Result<EvalOutput> {
    config.validate()?;
    let qrels_path = config.require_existing(&config.qrels, "qrels")?;
    let qrels = Qrels::read(qrels_path)?;
    let runs = run_paths.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
    let mut inputs: Vec<(String, &Path)> = vec![("qrels".into(), qrels_path)];
    for (i, p) in run_paths.iter().enumerate() {
        inputs.push((format!("run{}", i + 1), p));
    }
    let intrinsic = match queries {
        Some(q) => {
            let topics_path = config.require_existing(&config.topics, "topics")?;
            inputs.push(("queries".into(), q));
            inputs.push(("topics".into(), topics_path));
            Some(intrinsic_entries(&read_topics(topics_path)?, &read_queries(q)?))
        }
        None => None,
    };
    let named: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (n.as_str(), *p)).collect();
    let header = report_header(config, &named)?;
    let labeled: Vec<(String, &Run)> = run_paths
        .iter()
        .zip(&runs)
        .map(|(p, r)| (p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()), r))
        .collect();
    let eval = evaluate(config, header, &labeled, &qrels, intrinsic.as_deref())?;
    write_eval(out_prefix, &eval)?;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub output: PathBuf,
    pub queries: usize,
    pub trained: Option<TrainReport>,
    pub ndcg: BTreeMap<String, f64>,
    pub recall: BTreeMap<String, f64>,
    pub intrinsic_f1: Option<f64>,
}

/// Index, (train,) resolve, retrieve, rerank, fuse and evaluate into the
/// output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary> {
    config.validate()?;
    let out = config.require(&config.output, "output")?.to_owned();
    // fail on missing inputs before producing anything
    let corpus_path = config.require_existing(&config.corpus, "corpus")?;
    let topics_path = config.require_existing(&config.topics, "topics")?;
    let qrels_path = config.require_existing(&config.qrels, "qrels")?;
    let topics = read_topics(topics_path)?;
    let qrels = Qrels::read(qrels_path)?;
    let corpus = Corpus::read_tsv(corpus_path)?;

    let mut cfg = config.clone();
    if cfg.index.is_none() {
        cfg.index = Some(out.join("index"));
    }
    let index = InvertedIndex::build(corpus.passages())?;
    index.save(cfg.require(&cfg.index, "index")?)?;

    let mut trained = None;
    let model = if cfg.variant == ResolverVariant::QuReTeC {
        let existing = cfg.model.as_ref().filter(|p| p.exists());
        if existing.is_none() {
            if cfg.model.is_none() {
                cfg.model = Some(out.join("model.json"));
            }
            trained = Some(cmd_train(&cfg)?);
        }
        Some(ResolverModel::load(cfg.require(&cfg.model, "model")?)?)
    } else {
        None
    };

    let (records, preds) = resolve_topics(cfg.variant, &topics, model.as_ref(), Some(&index), &cfg)?;
    write_atomic(&out.join("queries.jsonl"), &records_to_jsonl(&records)?)?;
    if let Some(p) = &preds {
        let mut buf = Vec::new();
        write_predictions(&mut buf, p)?;
        write_atomic(&out.join("predictions.jsonl"), &buf)?;
    }

    let initial = search_all(&index, &records, cfg.depth, cfg.mu)?;
    let reranked = rerank_all(&initial, &records, &corpus)?;
    let fused = fuse_runs(&[initial.clone(), reranked.clone()], cfg.rrf_k)?;
    let runs = [("initial", &initial), ("rerank", &reranked), ("fused", &fused)];
    for (stage, run) in runs {
        let tag = run_tag(&cfg, stage);
        write_atomic(&out.join(format!("run.{stage}.txt")), run_to_string(run, &tag).as_bytes())?;
    }

    let header = report_header(
        &cfg,
        &[("corpus", corpus_path), ("topics", topics_path), ("qrels", qrels_path)],
    )?;
    let intrinsic = intrinsic_entries(&topics, &records);
    let named: Vec<(String, &Run)> = runs.iter().map(|(n, r)| (n.to_string(), *r)).collect();
    let eval = evaluate(&cfg, header, &named, &qrels, Some(&intrinsic))?;
    write_eval(&out.join("eval"), &eval)?;

    Ok(PipelineSummary {
        output: out,
        queries: records.len(),
        trained,
        ndcg: eval.runs.iter().map(|(k, r)| (k.clone(), r.mean.ndcg)).collect(),
        recall: eval.runs.iter().map(|(k, r)| (k.clone(), r.mean.recall)).collect(),
        intrinsic_f1: eval.intrinsic.as_ref().map(|i| i.mean.f1),
    })
}

/// Bundled toy collection: 50 passages, 5 evaluation topics, qrels and
/// training/dev dialogues.
pub mod toy {
    pub const PASSAGES: &str = include_str!("../data/toy/passages.tsv");
    pub const TOPICS: &str = include_str!("../data/toy/topics.jsonl");
    pub const QRELS: &str = include_str!("../data/toy/qrels.txt");
    pub const TRAIN_TOPICS: &str = include_str!("../data/toy/train_topics.jsonl");
    pub const DEV_TOPICS: &str = include_str!("../data/toy/dev_topics.jsonl");
    pub const CONFIG: &str = "corpus = passages.tsv\n\
        topics = topics.jsonl\n\
        qrels = qrels.txt\n\
        train_topics = train_topics.jsonl\n\
        dev_topics = dev_topics.jsonl\n\
        output = out\n\
        variant = quretec\n\
        seed = 13\n\
        embed_dim = 64\n\
        heads = 4\n\
        layers = 2\n\
        max_len = 128\n\
        max_epochs = 30\n\
        patience = 3\n";
}

/// Writes the toy collection and a matching `toy.conf` into `dir`.
pub fn export_toy(dir: &Path) -> Result<PathBuf> {
    for (name, body) in [
        ("passages.tsv", toy::PASSAGES),
        ("topics.jsonl", toy::TOPICS),
        ("qrels.txt", toy::QRELS),
        ("train_topics.jsonl", toy::TRAIN_TOPICS),
        ("dev_topics.jsonl", toy::DEV_TOPICS),
        ("toy.conf", toy::CONFIG),
    ] {
        write_atomic(&dir.join(name), body.as_bytes())?;
    }
    Ok(dir.join("toy.conf"))
}

/// Convenience for [`OriginalVariant`] sweeps in reports and tests.
pub fn original_variants() -> [ResolverVariant; 4] {
    OriginalVariant::ALL.map(ResolverVariant::Original)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(dir: &Path) -> PipelineConfig {
        let conf = export_toy(dir).unwrap();
        let mut c = PipelineConfig::default();
        c.apply_file(&conf).unwrap();
        c
    }

    #[test]
    fn toy_data_is_consistent() {
        let tmp = tempfile::tempdir().unwrap();
        let c = toy_config(tmp.path());
        let corpus = Corpus::read_tsv(c.corpus.as_deref().unwrap()).unwrap();
        assert_eq!(corpus.len(), 50);
        let topics = read_topics(c.topics.as_deref().unwrap()).unwrap();
        assert_eq!(topics.len(), 5);
        let qrels = Qrels::read(c.qrels.as_deref().unwrap()).unwrap();
        for (qid, docs) in &qrels.judgments {
            assert!(crate::supervision::split_query_id(qid).is_some());
            for pid in docs.keys() {
                assert!(crate::corpus::PassageStore::text(&corpus, pid).is_some(), "{pid}");
            }
        }
        let (ex, stats) = label_topics(&topics, LabelMode::Gold, None, 128).unwrap();
        assert_eq!(ex.len(), 15);
        assert_eq!(stats.missing_supervision_skipped, 0);
    }

    #[test]
    fn baselines_on_toy_data() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = toy_config(tmp.path());
        c.output = Some(tmp.path().join("out"));
        for variant in original_variants().into_iter().chain([ResolverVariant::Oracle, "rm3:cur".parse().unwrap()]) {
            c.variant = variant;
            let s = run_pipeline(&c).unwrap();
            assert_eq!(s.queries, 20);
            assert!(s.trained.is_none());
        }
    }

    #[test]
    fn missing_inputs_write_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = toy_config(tmp.path());
        c.variant = ResolverVariant::Oracle;
        c.output = Some(tmp.path().join("never"));
        c.qrels = Some(tmp.path().join("absent.txt"));
        assert!(run_pipeline(&c).is_err());
        assert!(!tmp.path().join("never").exists());
    }
}

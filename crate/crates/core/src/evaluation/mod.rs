//! Intrinsic (term classification) and extrinsic (ranking) evaluation.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preproc::Term;
use crate::run::{RankedList, Run};
use crate::supervision::split_query_id;

pub use stats::{ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_two_tailed, TTest};

/// Precision, recall and F1 of one predicted term set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set precision/recall/F1. An empty prediction has precision 1, an empty
/// gold set has recall 1, and F1 is 0 whenever either component is 0.
pub fn prf(predicted: &BTreeSet<Term>, gold: &BTreeSet<Term>) -> Prf {
    let hits = predicted.intersection(gold).count() as f64;
    let precision = if predicted.is_empty() {
        1.0
    } else {
        hits / predicted.len() as f64
    };
    let recall = if gold.is_empty() {
        1.0
    } else {
        hits / gold.len() as f64
    };
    let f1 = if precision == 0.0 || recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicEntry {
    pub topic_id: String,
    pub turn: u32,
    pub predicted: BTreeSet<Term>,
    pub gold: BTreeSet<Term>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicQuery {
    pub query_id: String,
    pub turn: u32,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub per_query: Vec<IntrinsicQuery>,
    /// Number of non-first-turn queries averaged.
    pub count: usize,
    /// Set when nothing could be averaged; the means are then zero.
    pub empty: bool,
    pub first_turns_excluded: usize,
    pub mean: Prf,
    pub per_turn: BTreeMap<u32, Prf>,
}

/// Per-query P/R/F1 averaged over queries with turn ≥ 2.
pub fn intrinsic_eval(entries: &[IntrinsicEntry]) -> IntrinsicReport {
    let mut per_query = Vec::new();
    let mut first = 0;
    for e in entries {
        if e.turn <= 1 {
            first += 1;
            continue;
        }
        per_query.push(IntrinsicQuery {
            query_id: crate::supervision::query_id(&e.topic_id, e.turn),
            turn: e.turn,
            prf: prf(&e.predicted, &e.gold),
        });
    }
    per_query.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let mean = mean_prf(per_query.iter().map(|q| q.prf));
    let p = per_turn(per_query.iter().map(|q| (q.turn, q.prf.precision)));
    let r = per_turn(per_query.iter().map(|q| (q.turn, q.prf.recall)));
    let f = per_turn(per_query.iter().map(|q| (q.turn, q.prf.f1)));
    let per_turn = p
        .keys()
        .map(|t| {
            (
                *t,
                Prf {
                    precision: p[t],
                    recall: r[t],
                    f1: f[t],
                },
            )
        })
        .collect();
    IntrinsicReport {
        count: per_query.len(),
        empty: per_query.is_empty(),
        first_turns_excluded: first,
        mean,
        per_turn,
        per_query,
    }
}

fn mean_prf(it: impl Iterator<Item = Prf>) -> Prf {
    let v: Vec<Prf> = it.collect();
    Prf {
        precision: mean(v.iter().map(|x| x.precision)),
        recall: mean(v.iter().map(|x| x.recall)),
        f1: mean(v.iter().map(|x| x.f1)),
    }
}

/// Arithmetic mean; 0 for an empty input.
pub fn mean(it: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = it.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean value per turn index.
pub fn per_turn(entries: impl IntoIterator<Item = (u32, f64)>) -> BTreeMap<u32, f64> {
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (turn, v) in entries {
        groups.entry(turn).or_default().push(v);
    }
    groups.into_iter().map(|(t, v)| (t, mean(v))).collect()
}

/// Whether per-turn means never increase with the turn index.
pub fn is_non_increasing(per_turn: &BTreeMap<u32, f64>) -> bool {
    per_turn.values().zip(per_turn.values().skip(1)).all(|(a, b)| b <= a)
}

/// Graded judgments: query id → passage id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) -> Result<()> {
        let prev = self
            .judgments
            .entry(query_id.to_owned())
            .or_default()
            .insert(passage_id.to_owned(), grade);
        match prev {
            Some(g) if g != grade => Err(Error::invalid(format!(
                "conflicting grades {g} and {grade} for ({query_id}, {passage_id})"
            ))),
            _ => Ok(()),
        }
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), &path.display().to_string())
    }

    /// Parses `query_id 0 passage_id grade` lines.
    pub fn parse(reader: impl BufRead, name: &str) -> Result<Self> {
        let mut q = Qrels::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse {
                path: name.to_owned(),
                line: i + 1,
                message: m,
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(err("expected: query_id 0 passage_id grade".into()));
            }
            let grade: i64 = f[3].parse().map_err(|_| err(format!("bad grade {:?}", f[3])))?;
            let grade = u32::try_from(grade).map_err(|_| err(format!("negative grade {grade}")))?;
            q.insert(f[0], f[2], grade).map_err(|e| err(e.to_string()))?;
        }
        Ok(q)
    }

    pub fn to_trec_string(&self) -> String {
        let mut s = String::new();
        for (qid, docs) in &self.judgments {
            for (pid, g) in docs {
                writeln!(s, "{qid} 0 {pid} {g}").expect("string write");
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingOptions {
    pub ndcg_cut: usize,
    pub cut: usize,
    /// Minimum grade counted as relevant by the binary metrics.
    pub binarize_at: u32,
}

impl Default for RankingOptions {
    fn default() -> Self {
        RankingOptions {
            ndcg_cut: 3,
            cut: 1000,
            binarize_at: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub recall: f64,
    pub ap: f64,
    pub rr: f64,
    pub ndcg: f64,
}

/// Recall, AP and RR to depth `cut` plus NDCG at `ndcg_cut` (linear gain,
/// `1/log2(rank+1)` discount). `None` when the query has no relevant
/// passage.
pub fn ranking_metrics(
    run: &RankedList,
    judged: &BTreeMap<String, u32>,
    opts: &RankingOptions,
) -> Option<QueryMetrics> {
    let relevant = judged.values().filter(|&&g| g >= opts.binarize_at).count();
    if relevant == 0 {
        return None;
    }
    let grade = |id: &str| judged.get(id).copied().unwrap_or(0);
    let mut hits = 0usize;
    let mut sum_prec = 0.0;
    let mut rr = 0.0;
    for (i, id) in run.ids().take(opts.cut).enumerate() {
        if grade(id) >= opts.binarize_at {
            hits += 1;
            sum_prec += hits as f64 / (i + 1) as f64;
            if rr == 0.0 {
                rr = 1.0 / (i + 1) as f64;
            }
        }
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = run
        .ids()
        .take(opts.ndcg_cut)
        .enumerate()
        .map(|(i, id)| f64::from(grade(id)) * discount(i + 1))
        .sum();
    let mut ideal: Vec<(&String, u32)> = judged.iter().map(|(k, v)| (k, *v)).collect();
    ideal.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let idcg: f64 = ideal
        .iter()
        .take(opts.ndcg_cut)
        .enumerate()
        .map(|(i, (_, g))| f64::from(*g) * discount(i + 1))
        .sum();
    Some(QueryMetrics {
        recall: hits as f64 / relevant as f64,
        ap: sum_prec / relevant as f64,
        rr,
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingQuery {
    pub query_id: String,
    pub turn: Option<u32>,
    #[serde(flatten)]
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub options: RankingOptions,
    pub per_query: Vec<RankingQuery>,
    pub count: usize,
    pub mean: QueryMetrics,
    /// Run queries absent from the qrels.
    pub unjudged_queries: Vec<String>,
    /// Judged queries without any relevant passage.
    pub no_relevant_queries: Vec<String>,
    /// Judged queries the run has no ranking for; they score zero.
    pub missing_from_run: Vec<String>,
    pub per_turn: BTreeMap<u32, QueryMetrics>,
}

/// Scores every judged query of `run`. Queries judged but not retrieved
/// count with all-zero metrics; queries absent from the qrels or without a
/// relevant passage are excluded and listed.
pub fn evaluate_run(run: &Run, qrels: &Qrels, opts: &RankingOptions) -> RankingReport {
    let mut per_query = Vec::new();
    let mut unjudged = Vec::new();
    let mut no_relevant = Vec::new();
    let mut missing = Vec::new();
    for qid in run.keys() {
        if qrels.query(qid).is_none() {
            log::warn!("query {qid} has no judgments; excluded");
            unjudged.push(qid.clone());
        }
    }
    let empty = RankedList::empty("");
    for (qid, judged) in &qrels.judgments {
        let list = match run.get(qid) {
            Some(l) => l,
            None => {
                missing.push(qid.clone());
                &empty
            }
        };
        match ranking_metrics(list, judged, opts) {
            Some(metrics) => per_query.push(RankingQuery {
                query_id: qid.clone(),
                turn: split_query_id(qid).map(|(_, t)| t),
                metrics,
            }),
            None => no_relevant.push(qid.clone()),
        }
    }
    if !no_relevant.is_empty() {
        log::info!("{} judged queries have no relevant passage", no_relevant.len());
    }
    let mean = mean_metrics(per_query.iter().map(|q| q.metrics));
    let mut by_turn: BTreeMap<u32, Vec<QueryMetrics>> = BTreeMap::new();
    for q in &per_query {
        if let Some(t) = q.turn {
            by_turn.entry(t).or_default().push(q.metrics);
        }
    }
    RankingReport {
        options: *opts,
        count: per_query.len(),
        mean,
        per_turn: by_turn
            .into_iter()
            .map(|(t, v)| (t, mean_metrics(v.into_iter())))
            .collect(),
        per_query,
        unjudged_queries: unjudged,
        no_relevant_queries: no_relevant,
        missing_from_run: missing,
    }
}

fn mean_metrics(it: impl Iterator<Item = QueryMetrics>) -> QueryMetrics {
    let v: Vec<QueryMetrics> = it.collect();
    QueryMetrics {
        recall: mean(v.iter().map(|m| m.recall)),
        ap: mean(v.iter().map(|m| m.ap)),
        rr: mean(v.iter().map(|m| m.rr)),
        ndcg: mean(v.iter().map(|m| m.ndcg)),
    }
}

/// Paired values of one metric over the queries both reports scored.
pub fn paired_metric(
    a: &RankingReport,
    b: &RankingReport,
    metric: impl Fn(&QueryMetrics) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let bm: BTreeMap<&str, &QueryMetrics> =
        b.per_query.iter().map(|q| (q.query_id.as_str(), &q.metrics)).collect();
    a.per_query
        .iter()
        .filter_map(|q| bm.get(q.query_id.as_str()).map(|m| (metric(&q.metrics), metric(m))))
        .unzip()
}

/// Aligned-column text rendering of a ranking report.
pub fn ranking_table(report: &RankingReport) -> String {
    let cut = report.options.cut;
    let mut s = String::new();
    writeln!(
        s,
        "{:<16} {:>8} {:>8} {:>8} {:>8}",
        "query",
        format!("NDCG@{}", report.options.ndcg_cut),
        format!("R@{cut}"),
        "MAP",
        "MRR"
    )
    .expect("string write");
    let row = |s: &mut String, name: &str, m: &QueryMetrics| {
        writeln!(
            s,
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            name, m.ndcg, m.recall, m.ap, m.rr
        )
        .expect("string write");
    };
    for q in &report.per_query {
        row(&mut s, &q.query_id, &q.metrics);
    }
    for (t, m) in &report.per_turn {
        row(&mut s, &format!("turn {t}"), m);
    }
    row(&mut s, &format!("mean (n={})", report.count), &report.mean);
    s
}

pub fn intrinsic_table(report: &IntrinsicReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:<16} {:>8} {:>8} {:>8}", "query", "P", "R", "F1").expect("string write");
    let row = |s: &mut String, name: &str, m: &Prf| {
        writeln!(s, "{:<16} {:>8.4} {:>8.4} {:>8.4}", name, m.precision, m.recall, m.f1)
            .expect("string write");
    };
    for q in &report.per_query {
        row(&mut s, &q.query_id, &q.prf);
    }
    for (t, m) in &report.per_turn {
        row(&mut s, &format!("turn {t}"), m);
    }
    row(&mut s, &format!("mean (n={})", report.count), &report.mean);
    s
}

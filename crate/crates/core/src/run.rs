//! Ranked lists and TREC run files (`query_id Q0 passage_id rank score tag`).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
}

/// Scored passages for one query: scores non-increasing, ties by ascending
/// passage id, no duplicate ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Descending score, then ascending id.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Sorts `scores` into canonical order. Fails on duplicate ids or
    /// non-finite scores.
    pub fn from_scores(query_id: impl Into<String>, scores: Vec<(String, f64)>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(scores.len());
        for (id, s) in &scores {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("{query_id}: duplicate passage {id}")));
            }
            if !s.is_finite() {
                return Err(Error::Numerical(format!("{query_id}: non-finite score for {id}")));
            }
        }
        let mut scores = scores;
        scores.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
        Ok(RankedList {
            query_id,
            entries: scores
                .into_iter()
                .map(|(passage_id, score)| RankedEntry { passage_id, score })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    /// 1-based rank of `passage_id`, if present.
    pub fn rank_of(&self, passage_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.passage_id == passage_id)
            .map(|p| p + 1)
    }

    /// Whether the canonical-order invariants hold.
    pub fn is_canonical(&self) -> bool {
        let mut seen = HashSet::new();
        self.entries.iter().all(|e| seen.insert(e.passage_id.as_str()))
            && self.entries.windows(2).all(|w| {
                rank_order((&w[0].passage_id, w[0].score), (&w[1].passage_id, w[1].score))
                    == Ordering::Less
            })
    }
}

/// Runs keyed by query id.
pub type Run = BTreeMap<String, RankedList>;

pub fn write_run(mut w: impl Write, run: &Run, tag: &str) -> std::io::Result<()> {
    for list in run.values() {
        for (i, e) in list.entries.iter().enumerate() {
            writeln!(
                w,
                "{} Q0 {} {} {:.6} {}",
                list.query_id,
                e.passage_id,
                i + 1,
                e.score,
                tag
            )?;
        }
    }
    Ok(())
}

pub fn run_to_string(run: &Run, tag: &str) -> String {
    let mut buf = Vec::new();
    write_run(&mut buf, run, tag).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("utf8")
}

pub fn read_run(path: &Path) -> Result<Run> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_run(std::io::BufReader::new(file), &path.display().to_string())
}

/// Parses a TREC run. Entries are ordered by the rank column; the scores are
/// kept as written.
pub fn parse_run(reader: impl BufRead, name: &str) -> Result<Run> {
    let mut raw: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| Error::Parse {
            path: name.to_owned(),
            line: i + 1,
            message: message.to_owned(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err("expected 6 fields: query_id Q0 passage_id rank score tag"));
        }
        let rank: usize = fields[3].parse().map_err(|_| err("rank is not an integer"))?;
        if rank == 0 {
            return Err(err("ranks are 1-based"));
        }
        let score: f64 = fields[4].parse().map_err(|_| err("score is not a number"))?;
        if !score.is_finite() {
            return Err(err("score is not finite"));
        }
        raw.entry(fields[0].to_owned())
            .or_default()
            .push((rank, fields[2].to_owned(), score));
    }
    let mut run = Run::new();
    for (qid, mut rows) in raw {
        rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut seen = HashSet::new();
        for (_, pid, _) in &rows {
            if !seen.insert(pid.clone()) {
                return Err(Error::Parse {
                    path: name.to_owned(),
                    line: 0,
                    message: format!("query {qid}: passage {pid} listed twice"),
                });
            }
        }
        let entries = rows
            .into_iter()
            .map(|(_, passage_id, score)| RankedEntry { passage_id, score })
            .collect();
        run.insert(
            qid.clone(),
            RankedList {
                query_id: qid,
                entries,
            },
        );
    }
    Ok(run)
}

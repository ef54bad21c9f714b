//! Pipeline configuration: a `key = value` file plus overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::RankingOptions;
use crate::resolver::{EncoderConfig, ResolverVariant, TrainConfig};
use crate::retrieval::{Rm3Params, DEFAULT_DEPTH, DEFAULT_MU};
use crate::supervision::{LabelMode, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub train_topics: Option<PathBuf>,
    pub dev_topics: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub variant: ResolverVariant,
    pub label_mode: LabelMode,
    pub seed: u64,
    pub mu: f64,
    pub depth: usize,
    pub rrf_k: f64,
    pub rm3: Rm3Params,
    pub ranking: RankingOptions,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            topics: None,
            qrels: None,
            train_topics: None,
            dev_topics: None,
            index: None,
            model: None,
            output: None,
            variant: ResolverVariant::QuReTeC,
            label_mode: LabelMode::Gold,
            seed: EncoderConfig::default().seed,
            mu: DEFAULT_MU,
            depth: DEFAULT_DEPTH,
            rrf_k: crate::fusion::DEFAULT_RRF_K,
            rm3: Rm3Params::default(),
            ranking: RankingOptions::default(),
            encoder: EncoderConfig {
                max_len: DEFAULT_MAX_LEN,
                ..Default::default()
            },
            train: TrainConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 33] = [
        "corpus",
        "topics",
        "qrels",
        "train_topics",
        "dev_topics",
        "index",
        "model",
        "output",
        "variant",
        "label_mode",
        "seed",
        "mu",
        "depth",
        "rrf_k",
        "rm3_fb_docs",
        "rm3_fb_terms",
        "rm3_original_weight",
        "ndcg_cut",
        "binarize_at",
        "threshold",
        "vocab_size",
        "embed_dim",
        "layers",
        "heads",
        "max_len",
        "dropout",
        "learning_rate",
        "batch_size",
        "grad_clip_norm",
        "patience",
        "max_epochs",
        "pos_weight",
        "metric_cut",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || Some(PathBuf::from(value));
        match key {
            "corpus" => self.corpus = path(),
            "topics" => self.topics = path(),
            "qrels" => self.qrels = path(),
            "train_topics" => self.train_topics = path(),
            "dev_topics" => self.dev_topics = path(),
            "index" => self.index = path(),
            "model" => self.model = path(),
            "output" => self.output = path(),
            "variant" => self.variant = value.parse()?,
            "label_mode" => self.label_mode = value.parse()?,
            "seed" => {
                self.seed = num(key, value)?;
                self.encoder.seed = self.seed;
            }
            "mu" => {
                self.mu = num(key, value)?;
                self.rm3.mu = self.mu;
            }
            "depth" => self.depth = num(key, value)?,
            "rrf_k" => self.rrf_k = num(key, value)?,
            "rm3_fb_docs" => self.rm3.fb_docs = num(key, value)?,
            "rm3_fb_terms" => self.rm3.fb_terms = num(key, value)?,
            "rm3_original_weight" => self.rm3.original_weight = num(key, value)?,
            "ndcg_cut" => self.ranking.ndcg_cut = num(key, value)?,
            "metric_cut" => self.ranking.cut = num(key, value)?,
            "binarize_at" => self.ranking.binarize_at = num(key, value)?,
            "threshold" => self.train.threshold = num(key, value)?,
            "vocab_size" => self.encoder.vocab_size = num(key, value)?,
            "embed_dim" => self.encoder.embed_dim = num(key, value)?,
            "layers" => self.encoder.layers = num(key, value)?,
            "heads" => self.encoder.heads = num(key, value)?,
            "max_len" => self.encoder.max_len = num(key, value)?,
            "dropout" => self.encoder.dropout_rate = num(key, value)?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "grad_clip_norm" => self.train.grad_clip_norm = num(key, value)?,
            "patience" => self.train.patience = num(key, value)?,
            "max_epochs" => self.train.max_epochs = num(key, value)?,
            "pos_weight" => self.train.pos_weight = num(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. Relative paths
    /// are resolved against the file's directory.
    pub fn apply_text(&mut self, text: &str, name: &str, base: Option<&Path>) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse {
                path: name.to_owned(),
                line: i + 1,
                message: m,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let k = k.trim();
            self.set(k, v).map_err(|e| err(e.to_string()))?;
            if let (Some(base), true) = (base, is_path_key(k)) {
                let p = PathBuf::from(v.trim());
                if p.is_relative() {
                    self.set(k, &base.join(p).to_string_lossy())?;
                }
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string(), path.parent())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        if !(self.mu > 0.0) || !(self.rrf_k > 0.0) {
            return Err(Error::Config("mu and rrf_k must be positive".into()));
        }
        if self.depth == 0 || self.ranking.cut == 0 || self.ranking.ndcg_cut == 0 {
            return Err(Error::Config("depth and metric cut-offs must be positive".into()));
        }
        if self.rm3.fb_docs == 0 || self.rm3.fb_terms == 0 || !(0.0..=1.0).contains(&self.rm3.original_weight) {
            return Err(Error::Config("RM3 needs fb_docs, fb_terms >= 1 and a weight in [0,1]".into()));
        }
        Ok(())
    }

    /// Every key with its current value, in key order.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let p = |x: &Option<PathBuf>| x.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut m = BTreeMap::new();
        for key in Self::KEYS {
            let v = match key {
                "corpus" => p(&self.corpus),
                "topics" => p(&self.topics),
                "qrels" => p(&self.qrels),
                "train_topics" => p(&self.train_topics),
                "dev_topics" => p(&self.dev_topics),
                "index" => p(&self.index),
                "model" => p(&self.model),
                "output" => p(&self.output),
                "variant" => self.variant.to_string(),
                "label_mode" => match self.label_mode {
                    LabelMode::Gold => "gold".into(),
                    LabelMode::Distant => "distant".into(),
                },
                "seed" => self.seed.to_string(),
                "mu" => self.mu.to_string(),
                "depth" => self.depth.to_string(),
                "rrf_k" => self.rrf_k.to_string(),
                "rm3_fb_docs" => self.rm3.fb_docs.to_string(),
                "rm3_fb_terms" => self.rm3.fb_terms.to_string(),
                "rm3_original_weight" => self.rm3.original_weight.to_string(),
                "ndcg_cut" => self.ranking.ndcg_cut.to_string(),
                "metric_cut" => self.ranking.cut.to_string(),
                "binarize_at" => self.ranking.binarize_at.to_string(),
                "threshold" => self.train.threshold.to_string(),
                "vocab_size" => self.encoder.vocab_size.to_string(),
                "embed_dim" => self.encoder.embed_dim.to_string(),
                "layers" => self.encoder.layers.to_string(),
                "heads" => self.encoder.heads.to_string(),
                "max_len" => self.encoder.max_len.to_string(),
                "dropout" => self.encoder.dropout_rate.to_string(),
                "learning_rate" => self.train.learning_rate.to_string(),
                "batch_size" => self.train.batch_size.to_string(),
                "grad_clip_norm" => self.train.grad_clip_norm.to_string(),
                "patience" => self.train.patience.to_string(),
                "max_epochs" => self.train.max_epochs.to_string(),
                "pos_weight" => self.train.pos_weight.to_string(),
                _ => unreachable!("every key is rendered"),
            };
            m.insert(key, v);
        }
        m
    }

    /// `key = value` text that [`PipelineConfig::apply_text`] reads back.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        let p = value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{key} is not set")))?;
        Ok(p)
    }

    /// Like [`PipelineConfig::require`], and the path must exist.
    pub fn require_existing<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        let p = self.require(value, key)?;
        if !p.exists() {
            return Err(Error::Config(format!("{key} {} does not exist", p.display())));
        }
        Ok(p)
    }
}

fn is_path_key(k: &str) -> bool {
    matches!(
        k,
        "corpus" | "topics" | "qrels" | "train_topics" | "dev_topics" | "index" | "model" | "output"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = PipelineConfig::default();
        c.apply_text("# experiment\nmu = 1000\nvariant = original:all\ncorpus = data/p.tsv\n", "cfg", Some(Path::new("/base")))
            .unwrap();
        assert_eq!(c.mu, 1000.0);
        assert_eq!(c.rm3.mu, 1000.0);
        assert_eq!(c.corpus.as_deref(), Some(Path::new("/base/data/p.tsv")));
        c.apply_overrides(["mu=50", "seed = 9"]).unwrap();
        assert_eq!(c.mu, 50.0);
        assert_eq!(c.encoder.seed, 9);

        let mut back = PipelineConfig::default();
        back.apply_text(&c.to_text(), "round", None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = PipelineConfig::default();
        assert!(c.apply_text("mu 3\n", "cfg", None).is_err());
        assert!(c.apply_text("nonsense = 1\n", "cfg", None).is_err());
        assert!(c.set("depth", "-1").is_err());
        assert!(c.set("variant", "bert").is_err());
        c.set("heads", "3").unwrap();
        assert!(c.validate().is_err());
        assert_eq!(PipelineConfig::default().entries().len(), PipelineConfig::KEYS.len());
    }
}

//! JSON checkpoints: config, vocabulary and named tensors, sealed with a
//! SHA-256 of the serialized body.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncoderConfig, Params, Tensor};
use super::vocab::Vocab;
use super::ResolverModel;
use crate::error::{Error, Result};
use crate::{io_util, preproc};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "convres-resolver";

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct Body {
    format: String,
    format_version: u32,
    preprocessing: String,
    config: EncoderConfig,
    vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    #[serde(flatten)]
    body: Body,
    sha256: String,
}

fn body_hash(body: &Body) -> Result<String> {
    Ok(io_util::sha256_hex(&serde_json::to_vec(body)?))
}

impl ResolverModel {
    pub fn to_json(&self) -> Result<String> {
        let body = Body {
            format: FORMAT_NAME.into(),
            format_version: CHECKPOINT_FORMAT_VERSION,
            preprocessing: preproc::fingerprint(),
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tensors: self
                .params
                .named()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    tensor: t.clone(),
                })
                .collect(),
        };
        let sha256 = body_hash(&body)?;
        let mut s = serde_json::to_string(&Checkpoint { body, sha256 })?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io_util::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw).map_err(|e| match e {
            Error::Incompatible { message, .. } => Error::Incompatible {
                path: path.to_owned(),
                message,
            },
            other => other,
        })
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let incompatible = |message: String| Error::Incompatible {
            path: "<checkpoint>".into(),
            message,
        };
        let ck: Checkpoint = serde_json::from_str(raw)?;
        let b = ck.body;
        if b.format != FORMAT_NAME || b.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(incompatible(format!(
                "expected {FORMAT_NAME} v{CHECKPOINT_FORMAT_VERSION}, found {} v{}",
                b.format, b.format_version
            )));
        }
        if body_hash(&b)? != ck.sha256 {
            return Err(incompatible("content hash mismatch".into()));
        }
        if b.preprocessing != preproc::fingerprint() {
            return Err(incompatible(format!(
                "model preprocessing {:?} differs from this build's {:?}",
                b.preprocessing,
                preproc::fingerprint()
            )));
        }
        b.config.validate()?;
        let vocab = Vocab::from_tokens(b.vocab)?;
        if vocab.len() != b.config.vocab_size {
            return Err(incompatible("vocabulary size disagrees with config".into()));
        }
        let mut params = Params::init(&b.config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
        let expected: Vec<(String, Vec<usize>)> =
            params.named().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        if expected.len() != b.tensors.len() {
            return Err(incompatible("tensor count mismatch".into()));
        }
        for ((slot, (name, shape)), stored) in params.tensors_mut().into_iter().zip(expected).zip(b.tensors) {
            if stored.name != name || stored.tensor.shape != shape || stored.tensor.data.len() != slot.data.len() {
                return Err(incompatible(format!("unexpected tensor {:?}", stored.name)));
            }
            *slot = stored.tensor;
        }
        if !params.all_finite() {
            return Err(Error::Numerical("checkpoint holds non-finite parameters".into()));
        }
        Ok(ResolverModel {
            config: b.config,
            vocab,
            params,
        })
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, bce_with_logits, forward, EncoderConfig, Params};
use super::vocab::Vocab;
use super::ResolverModel;
use crate::error::{Error, Result};
use crate::evaluation::{mean, prf};
use crate::supervision::LabeledExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip.
    pub grad_clip_norm: f64,
    /// Epochs without dev-F1 improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub threshold: f64,
    /// Multiplier on the positive-class loss term; 1 is plain BCE.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            grad_clip_norm: 1.0,
            patience: 2,
            max_epochs: 30,
            threshold: 0.5,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm > 0.0) || !(self.pos_weight > 0.0) {
            return bad("learning rate, clip norm and positive weight must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0,1)", self.threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub num_params: usize,
    pub vocab_size: usize,
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &Params) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let gs = grads.named();
        for (((p, m), v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(gs)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = Self::B1 * m.data[i] + (1.0 - Self::B1) * gi;
                v.data[i] = Self::B2 * v.data[i] + (1.0 - Self::B2) * gi * gi;
                p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn scale_and_clip(grads: &mut Params, scale: f64, max_norm: f64) {
    let mut sq = 0.0;
    for t in grads.tensors_mut() {
        for x in &mut t.data {
            *x *= scale;
            sq += *x * *x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for t in grads.tensors_mut() {
            for x in &mut t.data {
                *x *= f;
            }
        }
    }
}

/// Mean per-example F1 of thresholded predictions against the labeled
/// positives.
pub fn dev_f1(model: &ResolverModel, dev: &[LabeledExample], threshold: f64) -> Result<f64> {
    let scores = dev
        .iter()
        .map(|ex| {
            let (pred, _) = model.predict_example(ex, threshold)?;
            Ok(prf(&pred, &ex.positives()).f1)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(scores))
}

/// Trains a fresh model and returns the snapshot with the best dev F1.
/// Deterministic for a given seed.
pub fn train(
    train_set: &[LabeledExample],
    dev_set: &[LabeledExample],
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(ResolverModel, TrainReport)> {
    encoder.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if dev_set.is_empty() {
        return Err(Error::Config("dev set is empty".into()));
    }
    let vocab = Vocab::build(train_set, encoder.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(encoder.seed);
    let mut model = ResolverModel::init(encoder, vocab, &mut rng)?;
    let encoded: Vec<Vec<usize>> = train_set.iter().map(|ex| model.vocab.encode(ex)).collect();

    let mut adam = Adam::new(&model.params);
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let mut epochs = Vec::new();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.params.zeros_like();
            let mut used = 0usize;
            for &i in batch {
                let ex = &train_set[i];
                let fw = forward(&model.params, &model.config, &encoded[i], Some(&mut rng))?;
                let Some((loss, dl)) = bce_with_logits(&fw.logits, &ex.labels, &ex.mask, config.pos_weight) else {
                    continue;
                };
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss on {} in epoch {epoch}",
                        ex.query_id()
                    )));
                }
                backward(&model.params, &model.config, &fw, &dl, &mut grads);
                loss_sum += loss;
                loss_n += 1;
                used += 1;
            }
            if used == 0 {
                continue;
            }
            scale_and_clip(&mut grads, 1.0 / used as f64, config.grad_clip_norm);
            adam.update(&mut model.params, &grads, config.learning_rate);
        }
        if !model.params.all_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after epoch {epoch}")));
        }
        let f1 = dev_f1(&model, dev_set, config.threshold)?;
        let train_loss = if loss_n == 0 { 0.0 } else { loss_sum / loss_n as f64 };
        log::info!("epoch {epoch}: train loss {train_loss:.6}, dev F1 {f1:.4}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            dev_f1: f1,
        });
        if f1 > best.1 {
            best = (model.clone(), f1, epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }
    let (model, best_dev_f1, best_epoch) = best;
    let report = TrainReport {
        epochs,
        best_epoch,
        best_dev_f1,
        num_params: model.params.num_params(),
        vocab_size: model.vocab.len(),
    };
    Ok((model, report))
}

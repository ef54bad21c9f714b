//! Post-LN transformer encoder with a per-token sigmoid head, in f64 with
//! hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
pub(crate) const PROB_MIN: f64 = 1e-7;
pub(crate) const PROB_MAX: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding table rows. When training, this caps the vocabulary built
    /// from the training data and is then set to its actual size.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Positional table rows; longer inputs are rejected.
    pub max_len: usize,
    /// Dropout on the classification layer input.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 30_000,
            embed_dim: 128,
            layers: 2,
            heads: 4,
            max_len: crate::supervision::DEFAULT_MAX_LEN,
            dropout_rate: 0.1,
            seed: 13,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0,1)", self.dropout_rate)));
        }
        if self.max_len == 0 || self.vocab_size == 0 {
            return Err(Error::Config("max_len and vocab_size must be positive".into()));
        }
        Ok(())
    }

    /// Feed-forward inner width.
    pub fn ff_dim(&self) -> usize {
        4 * self.embed_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn filled(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    /// Glorot-uniform matrix of shape `[fan_in, fan_out]`.
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(&[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
}

const LAYER_NAMES: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g",
    "ln2_b",
];

impl LayerParams {
    fn init(d: usize, f: usize, rng: &mut impl Rng) -> Self {
        LayerParams {
            wq: Tensor::glorot(d, d, rng),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::glorot(d, d, rng),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::glorot(d, d, rng),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::glorot(d, d, rng),
            bo: Tensor::zeros(&[d]),
            ln1_g: Tensor::filled(&[d], 1.0),
            ln1_b: Tensor::zeros(&[d]),
            w1: Tensor::glorot(d, f, rng),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::glorot(f, d, rng),
            b2: Tensor::zeros(&[d]),
            ln2_g: Tensor::filled(&[d], 1.0),
            ln2_b: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.ln1_g,
            &self.ln1_b, &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g, &self.ln2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

/// All trainable parameters. Gradients use the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl Params {
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = config.embed_dim;
        Params {
            tok_emb: Tensor::uniform(&[config.vocab_size, d], 0.1, rng),
            pos_emb: Tensor::uniform(&[config.max_len, d], 0.1, rng),
            layers: (0..config.layers)
                .map(|_| LayerParams::init(d, config.ff_dim(), rng))
                .collect(),
            head_w: Tensor::uniform(&[d], (6.0 / (d + 1) as f64).sqrt(), rng),
            head_b: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    /// Named tensors in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("tok_emb".to_owned(), &self.tok_emb), ("pos_emb".to_owned(), &self.pos_emb)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("head_w".to_owned(), &self.head_w));
        out.push(("head_b".to_owned(), &self.head_b));
        out
    }

    /// Same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }
}

/// `x (n×k) · w (k×m) + b`.
fn linear(x: &[f64], n: usize, k: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[p * m..(p + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Backward of [`linear`]: accumulates `dW += xᵀ·dy`, `db += Σ dy` and
/// returns `dx = dy·Wᵀ`.
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    k: usize,
    m: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * k];
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for (b, &g) in db.iter_mut().zip(dyr) {
            *b += g;
        }
        for p in 0..k {
            let xv = x[i * k + p];
            let wr = &w[p * m..(p + 1) * m];
            let dwr = &mut dw[p * m..(p + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                dwr[j] += xv * dyr[j];
                acc += dyr[j] * wr[j];
            }
            dx[i * k + p] = acc;
        }
    }
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], n: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[i * d + j] = h;
            y[i * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &[f64], c: &LnCache, n: usize, d: usize, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let df = d as f64;
    for i in 0..n {
        let xh = &c.xhat[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mut sum = 0.0;
        let mut sum_xh = 0.0;
        let mut dxhat = vec![0.0; d];
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            sum += dxhat[j];
            sum_xh += dxhat[j] * xh[j];
        }
        for j in 0..d {
            dx[i * d + j] = c.inv_std[i] / df * (df * dxhat[j] - sum - xh[j] * sum_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads × n × n attention weights.
    attn: Vec<f64>,
    o: Vec<f64>,
    ln1: LnCache,
    x1: Vec<f64>,
    u: Vec<f64>,
    h: Vec<f64>,
    ln2: LnCache,
}

pub(crate) struct Forward {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    /// Final encoder output, n × d.
    pub(crate) hidden: Vec<f64>,
    /// Dropout multipliers on the head input (already scaled), if training.
    keep: Option<Vec<f64>>,
    pub(crate) logits: Vec<f64>,
}

fn layer_forward(p: &LayerParams, x: Vec<f64>, n: usize, d: usize, heads: usize, f: usize) -> (Vec<f64>, LayerCache) {
    let q = linear(&x, n, d, &p.wq.data, &p.bq.data, d);
    let k = linear(&x, n, d, &p.wk.data, &p.bk.data, d);
    let v = linear(&x, n, d, &p.wv.data, &p.bv.data, d);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = vec![0.0; heads * n * n];
    let mut o = vec![0.0; n * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let a = &mut attn[(h * n + i) * n..(h * n + i + 1) * n];
            let qi = &q[i * d + off..i * d + off + dh];
            let mut max = f64::NEG_INFINITY;
            for (j, aj) in a.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                *aj = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                max = max.max(*aj);
            }
            let mut z = 0.0;
            for aj in a.iter_mut() {
                *aj = (*aj - max).exp();
                z += *aj;
            }
            for aj in a.iter_mut() {
                *aj /= z;
            }
            let oi = &mut o[i * d + off..i * d + off + dh];
            for (j, &aj) in a.iter().enumerate() {
                for (oc, vc) in oi.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                    *oc += aj * vc;
                }
            }
        }
    }
    let z = linear(&o, n, d, &p.wo.data, &p.bo.data, d);
    let r1: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
    let (x1, ln1) = layer_norm(&r1, n, d, &p.ln1_g.data, &p.ln1_b.data);
    let u = linear(&x1, n, d, &p.w1.data, &p.b1.data, f);
    let h: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
    let f2 = linear(&h, n, f, &p.w2.data, &p.b2.data, d);
    let r2: Vec<f64> = x1.iter().zip(&f2).map(|(a, b)| a + b).collect();
    let (y, ln2) = layer_norm(&r2, n, d, &p.ln2_g.data, &p.ln2_b.data);
    (
        y,
        LayerCache {
            x,
            q,
            k,
            v,
            attn,
            o,
            ln1,
            x1,
            u,
            h,
            ln2,
        },
    )
}

fn layer_backward(
    p: &LayerParams,
    g: &mut LayerParams,
    c: &LayerCache,
    dy: &[f64],
    n: usize,
    d: usize,
    heads: usize,
    f: usize,
) -> Vec<f64> {
    let dr2 = layer_norm_backward(dy, &c.ln2, n, d, &p.ln2_g.data, &mut g.ln2_g.data, &mut g.ln2_b.data);
    let dh_out = linear_backward(&c.h, &dr2, n, f, d, &p.w2.data, &mut g.w2.data, &mut g.b2.data);
    let du: Vec<f64> = dh_out.iter().zip(&c.u).map(|(dh, &u)| dh * gelu_grad(u)).collect();
    let dx1_ff = linear_backward(&c.x1, &du, n, d, f, &p.w1.data, &mut g.w1.data, &mut g.b1.data);
    let dx1: Vec<f64> = dr2.iter().zip(&dx1_ff).map(|(a, b)| a + b).collect();
    let dr1 = layer_norm_backward(&dx1, &c.ln1, n, d, &p.ln1_g.data, &mut g.ln1_g.data, &mut g.ln1_b.data);
    let d_o = linear_backward(&c.o, &dr1, n, d, d, &p.wo.data, &mut g.wo.data, &mut g.bo.data);

    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut da = vec![0.0; n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let a = &c.attn[(h * n + i) * n..(h * n + i + 1) * n];
            let doi = &d_o[i * d + off..i * d + off + dh];
            let mut dot = 0.0;
            for j in 0..n {
                let vj = &c.v[j * d + off..j * d + off + dh];
                da[j] = doi.iter().zip(vj).map(|(x, y)| x * y).sum();
                dot += a[j] * da[j];
                for (dvc, &g) in dv[j * d + off..j * d + off + dh].iter_mut().zip(doi) {
                    *dvc += a[j] * g;
                }
            }
            for j in 0..n {
                let ds = a[j] * (da[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for cc in 0..dh {
                    dq[i * d + off + cc] += ds * c.k[j * d + off + cc];
                    dk[j * d + off + cc] += ds * c.q[i * d + off + cc];
                }
            }
        }
    }
    let mut dx = dr1;
    for (w, dw, db, dproj) in [
        (&p.wq, &mut g.wq, &mut g.bq, &dq),
        (&p.wk, &mut g.wk, &mut g.bk, &dk),
        (&p.wv, &mut g.wv, &mut g.bv, &dv),
    ] {
        let part = linear_backward(&c.x, dproj, n, d, d, &w.data, &mut dw.data, &mut db.data);
        for (a, b) in dx.iter_mut().zip(part) {
            *a += b;
        }
    }
    dx
}

/// Runs the encoder and head on token ids. `dropout` enables training-mode
/// dropout on the head input.
pub(crate) fn forward(
    params: &Params,
    config: &EncoderConfig,
    ids: &[usize],
    dropout: Option<&mut dyn rand::RngCore>,
) -> Result<Forward> {
    let n = ids.len();
    let d = config.embed_dim;
    if n == 0 || n > config.max_len {
        return Err(Error::invalid(format!(
            "sequence length {n} outside 1..={}",
            config.max_len
        )));
    }
    let mut x = vec![0.0; n * d];
    for (i, &id) in ids.iter().enumerate() {
        if id >= config.vocab_size {
            return Err(Error::invalid(format!("token id {id} outside vocabulary")));
        }
        let te = &params.tok_emb.data[id * d..(id + 1) * d];
        let pe = &params.pos_emb.data[i * d..(i + 1) * d];
        for j in 0..d {
            x[i * d + j] = te[j] + pe[j];
        }
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (y, cache) = layer_forward(layer, x, n, d, config.heads, config.ff_dim());
        caches.push(cache);
        x = y;
    }
    let keep = match dropout {
        Some(rng) if config.dropout_rate > 0.0 => {
            let r = config.dropout_rate;
            Some(
                (0..n * d)
                    .map(|_| if rng.random::<f64>() < r { 0.0 } else { 1.0 / (1.0 - r) })
                    .collect::<Vec<f64>>(),
            )
        }
        _ => None,
    };
    let w = &params.head_w.data;
    let b = params.head_b.data[0];
    let logits = (0..n)
        .map(|i| {
            let row = &x[i * d..(i + 1) * d];
            let dot: f64 = match &keep {
                Some(m) => row.iter().zip(&m[i * d..(i + 1) * d]).zip(w).map(|((x, m), w)| x * m * w).sum(),
                None => row.iter().zip(w).map(|(x, w)| x * w).sum(),
            };
            dot + b
        })
        .collect();
    Ok(Forward {
        ids: ids.to_vec(),
        layers: caches,
        hidden: x,
        keep,
        logits,
    })
}

/// Accumulates parameter gradients given `dL/dlogit` per position.
pub(crate) fn backward(params: &Params, config: &EncoderConfig, fw: &Forward, dlogits: &[f64], grads: &mut Params) {
    let n = fw.ids.len();
    let d = config.embed_dim;
    let w = &params.head_w.data;
    let mut dx = vec![0.0; n * d];
    for i in 0..n {
        let dz = dlogits[i];
        if dz == 0.0 {
            continue;
        }
        grads.head_b.data[0] += dz;
        for j in 0..d {
            let m = fw.keep.as_ref().map_or(1.0, |k| k[i * d + j]);
            grads.head_w.data[j] += dz * fw.hidden[i * d + j] * m;
            dx[i * d + j] = dz * w[j] * m;
        }
    }
    for ((p, g), c) in params.layers.iter().zip(grads.layers.iter_mut()).zip(&fw.layers).rev() {
        dx = layer_backward(p, g, c, &dx, n, d, config.heads, config.ff_dim());
    }
    for (i, &id) in fw.ids.iter().enumerate() {
        for j in 0..d {
            grads.tok_emb.data[id * d + j] += dx[i * d + j];
            grads.pos_emb.data[i * d + j] += dx[i * d + j];
        }
    }
}

/// Mean clamped binary cross-entropy over masked positions, with the
/// positive term scaled by `pos_weight`. `None` when nothing is masked in.
pub fn bce_loss(probs: &[f64], labels: &[u8], mask: &[u8], pos_weight: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut m = 0usize;
    for ((&p, &y), &k) in probs.iter().zip(labels).zip(mask) {
        if k == 0 {
            continue;
        }
        let p = p.clamp(PROB_MIN, PROB_MAX);
        sum -= if y == 1 { pos_weight * p.ln() } else { (1.0 - p).ln() };
        m += 1;
    }
    (m > 0).then(|| sum / m as f64)
}

/// Loss and `dL/dlogit` for one sequence; `None` when nothing is masked in.
pub(crate) fn bce_with_logits(logits: &[f64], labels: &[u8], mask: &[u8], pos_weight: f64) -> Option<(f64, Vec<f64>)> {
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let loss = bce_loss(&probs, labels, mask, pos_weight)?;
    let m = mask.iter().filter(|&&k| k == 1).count() as f64;
    let grad = probs
        .iter()
        .zip(labels)
        .zip(mask)
        .map(|((&p, &y), &k)| {
            if k == 0 || !(PROB_MIN..=PROB_MAX).contains(&p) {
                0.0
            } else if y == 1 {
                -pos_weight * (1.0 - p) / m
            } else {
                p / m
            }
        })
        .collect();
    Some((loss, grad))
}

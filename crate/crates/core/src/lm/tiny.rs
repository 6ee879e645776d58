//! A small pre-LayerNorm causal transformer with seed-derived weights.
//!
//! Weights are drawn in a fixed order from the keyed ChaCha8 stream
//! `(WEIGHT_DOMAIN, weight_seed, "", 0)`:
//!
//! 1. token embeddings `vocab × d`, uniform on `[-1, 1)`
//! 2. positional embeddings `context_cap × d`, uniform on `[-0.5, 0.5)`
//! 3. the start-of-sequence vector `d`, uniform on `[-1, 1)`
//! 4. per block: `qkv`, `proj`, `up`, `down` linear layers, each weight and
//!    bias uniform on `[-1/√fan_in, 1/√fan_in)`, weights before biases
//!
//! LayerNorm gains are 1 and offsets 0, the MLP activation is ReLU, and the
//! output head is tied to the token embeddings and scaled by [`LOGIT_SCALE`].
//! Every position of the input is preceded by the internal start vector, so the first target is predicted from that vector alone;
//! the start vector is part of the model and is never perturbed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;

use super::{check_forward_args, check_uniform_batch, impl_live_backend, EmbeddingMatrix, EmbeddingModel};
use crate::rng::{keyed_stream, symmetric_unit, WEIGHT_DOMAIN};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
/// Keeps next-token distributions from saturating with unit-scale embeddings.
pub const LOGIT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyLmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_cap: usize,
    pub weight_seed: u64,
}

impl Default for TinyLmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            context_cap: 512,
            weight_seed: 0,
        }
    }
}

impl TinyLmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::InvalidConfig { reason: reason.into() });
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.context_cap == 0 {
            return bad("tinylm sizes must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("tinylm n_heads must divide d_model");
        }
        if self.vocab_size > u32::MAX as usize {
            return bad("tinylm vocab_size must fit in u32");
        }
        Ok(())
    }
}

struct Linear {
    inp: usize,
    out: usize,
    /// `inp × out`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Self {
        let bound = 1.0 / libm::sqrt(inp as f64);
        let w = uniform(rng, inp * out, bound);
        let b = uniform(rng, out, bound);
        Self { inp, out, w, b }
    }

    /// `y = x W + b` for `n` stacked rows.
    fn apply(&self, x: &[f64], n: usize, y: &mut Vec<f64>) {
        y.clear();
        y.resize(n * self.out, 0.0);
        matmul(x, &self.w, Some(&self.b), self.inp, self.out, y);
    }
}

/// `y = x W (+ b)` over stacked rows of `x`, with `W` stored `inp × out`.
/// Outputs are accumulated in register-sized blocks; every element sums
/// `b + x0 w0 + x1 w1 + ...` in input order, so blocking does not change
/// the result.
fn matmul(x: &[f64], w: &[f64], bias: Option<&[f64]>, inp: usize, out: usize, y: &mut [f64]) {
    const LANES: usize = 8;
    let full = out - out % LANES;
    for (xr, yr) in x.chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
        for o in (0..full).step_by(LANES) {
            let mut acc = [0.0; LANES];
            if let Some(b) = bias {
                acc.copy_from_slice(&b[o..o + LANES]);
            }
            for (&xv, wr) in xr.iter().zip(w.chunks_exact(out)) {
                let wb: &[f64; LANES] = wr[o..o + LANES].try_into().unwrap();
                for (a, &wv) in acc.iter_mut().zip(wb) {
                    *a += xv * wv;
                }
            }
            yr[o..o + LANES].copy_from_slice(&acc);
        }
        for o in full..out {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for (&xv, wr) in xr.iter().zip(w.chunks_exact(out)) {
                acc += xv * wr[o];
            }
            yr[o] = acc;
        }
    }
}

struct Block {
    qkv: Linear,
    proj: Linear,
    up: Linear,
    down: Linear,
}

/// Deterministic built-in scoring model. Immutable after construction.
pub struct TinyLm {
    cfg: TinyLmConfig,
    tok_emb: Vec<f64>,
    /// Transposed token embeddings (`d × vocab`) for the tied output head.
    unembed: Vec<f64>,
    pos_emb: Vec<f64>,
    bos: Vec<f64>,
    blocks: Vec<Block>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| bound * symmetric_unit(rng)).collect()
}

fn layer_norm(x: &[f64], d: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(x.len(), 0.0);
    for (xr, yr) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / libm::sqrt(var + LN_EPS);
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = (v - mean) * inv;
        }
    }
}

impl TinyLm {
    pub fn new(cfg: TinyLmConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut rng = keyed_stream(WEIGHT_DOMAIN, cfg.weight_seed, b"", 0);
        let tok_emb = uniform(&mut rng, cfg.vocab_size * d, 1.0);
        let pos_emb = uniform(&mut rng, cfg.context_cap * d, 0.5);
        let bos = uniform(&mut rng, d, 1.0);
        let blocks = (0..cfg.n_layers)
            .map(|_| Block {
                qkv: Linear::init(&mut rng, d, 3 * d),
                proj: Linear::init(&mut rng, d, d),
                up: Linear::init(&mut rng, d, 4 * d),
                down: Linear::init(&mut rng, 4 * d, d),
            })
            .collect();
        let mut unembed = vec![0.0; d * cfg.vocab_size];
        for v in 0..cfg.vocab_size {
            for k in 0..d {
                unembed[k * cfg.vocab_size + v] = LOGIT_SCALE * tok_emb[v * d + k];
            }
        }
        Ok(Self { cfg, tok_emb, unembed, pos_emb, bos, blocks })
    }

    pub fn config(&self) -> &TinyLmConfig {
        &self.cfg
    }

    /// Final hidden states for a batch of same-shaped inputs. Each sequence
    /// is `[bos, emb rows 0..rows-1]`, so position `p` has seen the start
    /// vector and rows `0..p` and predicts target `p`. The last embedding
    /// row never feeds a prediction and is not processed.
    fn hidden_states(&self, embs: &[&EmbeddingMatrix]) -> Vec<f64> {
        let d = self.cfg.d_model;
        let n = embs.first().map_or(0, |e| e.rows());
        if n == 0 {
            return Vec::new();
        }
        let batch = embs.len();
        let mut x = Vec::with_capacity(batch * n * d);
        for e in embs {
            x.extend_from_slice(&self.bos);
            x.extend_from_slice(&e.values()[..(n - 1) * d]);
        }
        let rows = batch * n;
        let (mut h, mut qkv, mut attn, mut tmp, mut up) =
            (Vec::new(), Vec::new(), vec![0.0; rows * d], Vec::new(), Vec::new());
        let heads = self.cfg.n_heads;
        let hd = d / heads;
        let scale = 1.0 / libm::sqrt(hd as f64);
        let mut scores = vec![0.0; n];
        for block in &self.blocks {
            layer_norm(&x, d, &mut h);
            block.qkv.apply(&h, rows, &mut qkv);
            attn.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..batch {
                let base = b * n;
                for head in 0..heads {
                    let off = head * hd;
                    for i in 0..n {
                        let q = &qkv[(base + i) * 3 * d + off..][..hd];
                        let mut max = f64::NEG_INFINITY;
                        for (j, s) in scores[..=i].iter_mut().enumerate() {
                            let k = &qkv[(base + j) * 3 * d + d + off..][..hd];
                            *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                            max = max.max(*s);
                        }
                        let mut total = 0.0;
                        for s in &mut scores[..=i] {
                            *s = libm::exp(*s - max);
                            total += *s;
                        }
                        let out = &mut attn[(base + i) * d + off..][..hd];
                        for (j, &w) in scores[..=i].iter().enumerate() {
                            let v = &qkv[(base + j) * 3 * d + 2 * d + off..][..hd];
                            let w = w / total;
                            for (o, &vv) in out.iter_mut().zip(v) {
                                *o += w * vv;
                            }
                        }
                    }
                }
            }
            block.proj.apply(&attn, rows, &mut tmp);
            x.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            layer_norm(&x, d, &mut h);
            block.up.apply(&h, rows, &mut up);
            up.iter_mut().for_each(|v| *v = v.max(0.0));
            block.down.apply(&up, rows, &mut tmp);
            x.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        }
        layer_norm(&x, d, &mut h);
        h
    }

    /// Output-head logits for stacked hidden states.
    fn logits(&self, hidden: &[f64], out: &mut Vec<f64>) {
        let (d, v) = (self.cfg.d_model, self.cfg.vocab_size);
        out.clear();
        out.resize(hidden.len() / d * v, 0.0);
        matmul(hidden, &self.unembed, None, d, v, out);
    }

    fn check(&self, emb: &EmbeddingMatrix, targets: &[u32], predict_from: usize) -> Result<()> {
        let c = &self.cfg;
        check_forward_args(emb, targets, predict_from, c.d_model, c.vocab_size, c.context_cap)
    }

    /// Full next-token log-distributions: row `p` is `log P(· | rows 0..p)`.
    pub fn log_distributions(&self, emb: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        let dummy = vec![0u32; emb.rows()];
        self.check(emb, &dummy, 0)?;
        let mut logits = Vec::new();
        self.logits(&self.hidden_states(&[emb]), &mut logits);
        Ok(logits
            .chunks_exact(self.cfg.vocab_size)
            .map(|row| {
                let lse = log_sum_exp(row);
                row.iter().map(|l| l - lse).collect()
            })
            .collect())
    }

    fn batch_logprobs(
        &self,
        embs: &[&EmbeddingMatrix],
        targets: &[u32],
        predict_from: usize,
    ) -> Vec<Vec<f64>> {
        let d = self.cfg.d_model;
        let n = targets.len();
        let v = self.cfg.vocab_size;
        let h = self.hidden_states(embs);
        let scored: Vec<f64> = h
            .chunks_exact(n * d)
            .flat_map(|seq| &seq[predict_from * d..])
            .copied()
            .collect();
        let mut logits = Vec::new();
        self.logits(&scored, &mut logits);
        let per_seq = n - predict_from;
        logits
            .chunks_exact(v * per_seq.max(1))
            .take(embs.len())
            .map(|seq| {
                seq.chunks_exact(v)
                    .zip(&targets[predict_from..])
                    .map(|(row, &t)| row[t as usize] - log_sum_exp(row))
                    .collect()
            })
            .collect()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(xs.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

impl EmbeddingModel for TinyLm {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn dim(&self) -> usize {
        self.cfg.d_model
    }

    fn context_cap(&self) -> usize {
        self.cfg.context_cap
    }

    fn embed(&self, tokens: &[u32]) -> Result<EmbeddingMatrix> {
        let c = &self.cfg;
        if tokens.len() > c.context_cap {
            return Err(Error::SequenceTooLong { len: tokens.len(), cap: c.context_cap });
        }
        let d = c.d_model;
        let mut values = Vec::with_capacity(tokens.len() * d);
        for (pos, &t) in tokens.iter().enumerate() {
            if t as usize >= c.vocab_size {
                return Err(Error::TokenOutOfRange { token: t, vocab_size: c.vocab_size });
            }
            let te = &self.tok_emb[t as usize * d..][..d];
            let pe = &self.pos_emb[pos * d..][..d];
            values.extend(te.iter().zip(pe).map(|(a, b)| a + b));
        }
        EmbeddingMatrix::new(tokens.len(), d, values)
    }

    fn forward_logprobs(
        &self,
        emb: &EmbeddingMatrix,
        targets: &[u32],
        predict_from: usize,
    ) -> Result<Vec<f64>> {
        self.check(emb, targets, predict_from)?;
        Ok(self.batch_logprobs(&[emb], targets, predict_from).pop().unwrap_or_default())
    }

    fn forward_logprobs_batched(
        &self,
        embs: &[EmbeddingMatrix],
        targets: &[u32],
        predict_from: usize,
    ) -> Result<Vec<Vec<f64>>> {
        check_uniform_batch(embs)?;
        for e in embs {
            self.check(e, targets, predict_from)?;
        }
        if embs.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&EmbeddingMatrix> = embs.iter().collect();
        Ok(self.batch_logprobs(&refs, targets, predict_from))
    }
}

fn tiny_name(m: &TinyLm) -> String {
    let c = &m.cfg;
    format!(
        "tinylm-v1(vocab={},d={},layers={},heads={},ctx={},seed={})",
        c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.context_cap, c.weight_seed
    )
}

impl_live_backend!(TinyLm, tiny_name);

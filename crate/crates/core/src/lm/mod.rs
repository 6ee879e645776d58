//! Scoring-model contracts and the built-in backends.
//!
//! Two layers: [`EmbeddingModel`] is a causal LM that exposes its
//! pre-forward representation, so noise can be injected into it.
//! [`ScoringBackend`] is the narrower contract the scorer needs (per-pass
//! log-probs of the response), which a precomputed [`LogProbCache`] can
//! also satisfy.

mod cache;
mod tiny;
mod uniform;

use alloc::string::String;
use alloc::vec::Vec;

pub use cache::LogProbCache;
pub use tiny::{TinyLm, TinyLmConfig};
pub use uniform::UniformLm;

use crate::corpus::TokenizedSample;
use crate::{Error, Result};

/// Which of the two scoring passes a log-prob vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PassKind {
    /// Over `[instruction ‖ response]`, scoring response positions.
    Conditional,
    /// Over the response alone.
    Unconditional,
}

impl PassKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PassKind::Conditional => "cond",
            PassKind::Unconditional => "uncond",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cond" | "conditional" => Some(PassKind::Conditional),
            "uncond" | "unconditional" => Some(PassKind::Unconditional),
            _ => None,
        }
    }
}

/// Row-major `rows × cols` matrix of pre-forward token representations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch { what: "embedding values do not fill rows × cols" });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: alloc::vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + noise`, where `noise` is row-major with the same shape.
    pub fn perturbed(&self, noise: &[f64]) -> Result<Self> {
        if noise.len() != self.values.len() {
            return Err(Error::ShapeMismatch { what: "noise shape differs from embedding" });
        }
        let values = self.values.iter().zip(noise).map(|(v, n)| v + n).collect();
        Ok(Self { rows: self.rows, cols: self.cols, values })
    }
}

/// A causal language model with an exposed embedding layer.
pub trait EmbeddingModel: Sync {
    fn vocab_size(&self) -> usize;
    fn dim(&self) -> usize;
    fn context_cap(&self) -> usize;

    /// The exact representation the forward pass consumes (positions
    /// included when the model adds them at the input).
    fn embed(&self, tokens: &[u32]) -> Result<EmbeddingMatrix>;

    /// Entry `j` is `log P(targets[predict_from + j] | rows 0..predict_from + j)`.
    fn forward_logprobs(
        &self,
        emb: &EmbeddingMatrix,
        targets: &[u32],
        predict_from: usize,
    ) -> Result<Vec<f64>>;

    /// Same as calling [`forward_logprobs`](Self::forward_logprobs) on each
    /// matrix, but in one pass. All matrices must share a shape.
    fn forward_logprobs_batched(
        &self,
        embs: &[EmbeddingMatrix],
        targets: &[u32],
        predict_from: usize,
    ) -> Result<Vec<Vec<f64>>> {
        check_uniform_batch(embs)?;
        embs.iter().map(|e| self.forward_logprobs(e, targets, predict_from)).collect()
    }
}

/// Source of per-pass response log-probs for the scorer.
pub trait ScoringBackend: Sync {
    fn model_name(&self) -> String;

    /// Log-probs of the `T` response tokens under the given pass.
    fn pass_logprobs(&self, sample: &TokenizedSample, kind: PassKind) -> Result<Vec<f64>>;

    /// `None` for backends that cannot be perturbed.
    fn embedding_model(&self) -> Option<&dyn EmbeddingModel> {
        None
    }
}

/// Token sequence and first scored position of a pass.
pub fn pass_inputs(sample: &TokenizedSample, kind: PassKind) -> (Vec<u32>, usize) {
    match kind {
        PassKind::Conditional => (sample.joined_tokens(), sample.instr_len()),
        PassKind::Unconditional => (sample.resp_tokens.clone(), 0),
    }
}

/// Embed then forward, the way any embedding model answers a pass.
pub fn live_pass_logprobs(
    model: &dyn EmbeddingModel,
    sample: &TokenizedSample,
    kind: PassKind,
) -> Result<Vec<f64>> {
    let (tokens, from) = pass_inputs(sample, kind);
    let emb = model.embed(&tokens)?;
    model.forward_logprobs(&emb, &tokens, from)
}

pub(crate) fn check_uniform_batch(embs: &[EmbeddingMatrix]) -> Result<()> {
    if let Some(first) = embs.first() {
        if embs.iter().any(|e| e.rows != first.rows || e.cols != first.cols) {
            return Err(Error::ShapeMismatch { what: "batch members differ in shape" });
        }
    }
    Ok(())
}

pub(crate) fn check_forward_args(
    emb: &EmbeddingMatrix,
    targets: &[u32],
    predict_from: usize,
    dim: usize,
    vocab_size: usize,
    cap: usize,
) -> Result<()> {
    if emb.cols != dim {
        return Err(Error::ShapeMismatch { what: "embedding width differs from model dim" });
    }
    if targets.len() != emb.rows {
        return Err(Error::ShapeMismatch { what: "targets length differs from embedding rows" });
    }
    if emb.rows > cap {
        return Err(Error::SequenceTooLong { len: emb.rows, cap });
    }
    if predict_from > emb.rows {
        return Err(Error::PredictFromOutOfRange { predict_from, rows: emb.rows });
    }
    if let Some(&token) = targets.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::TokenOutOfRange { token, vocab_size });
    }
    if !emb.is_finite() {
        return Err(Error::NonFiniteEmbedding);
    }
    Ok(())
}

macro_rules! impl_live_backend {
    ($ty:ty, $name:expr) => {
        impl $crate::lm::ScoringBackend for $ty {
            fn model_name(&self) -> alloc::string::String {
                $name(self)
            }

            fn pass_logprobs(
                &self,
                sample: &$crate::corpus::TokenizedSample,
                kind: $crate::lm::PassKind,
            ) -> $crate::Result<alloc::vec::Vec<f64>> {
                $crate::lm::live_pass_logprobs(self, sample, kind)
            }

            fn embedding_model(&self) -> Option<&dyn $crate::lm::EmbeddingModel> {
                Some(self)
            }
        }
    };
}
pub(crate) use impl_live_backend;

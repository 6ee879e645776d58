use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{check_forward_args, impl_live_backend, EmbeddingMatrix, EmbeddingModel};
use crate::{Error, Result};

/// A model whose logits are identically zero: every token has probability
/// `1 / vocab_size` regardless of context. Embeddings are all zeros.
#[derive(Debug, Clone, Copy)]
pub struct UniformLm {
    pub vocab_size: usize,
    pub dim: usize,
    pub context_cap: usize,
}

impl UniformLm {
    pub fn new(vocab_size: usize, dim: usize) -> Self {
        Self { vocab_size, dim, context_cap: usize::MAX }
    }
}

impl EmbeddingModel for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn context_cap(&self) -> usize {
        self.context_cap
    }

    fn embed(&self, tokens: &[u32]) -> Result<EmbeddingMatrix> {
        if tokens.len() > self.context_cap {
            return Err(Error::SequenceTooLong { len: tokens.len(), cap: self.context_cap });
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size: self.vocab_size });
        }
        Ok(EmbeddingMatrix::zeros(tokens.len(), self.dim))
    }

    fn forward_logprobs(
        &self,
        emb: &EmbeddingMatrix,
        targets: &[u32],
        predict_from: usize,
    ) -> Result<Vec<f64>> {
        check_forward_args(emb, targets, predict_from, self.dim, self.vocab_size, self.context_cap)?;
        let lp = -libm::log(self.vocab_size as f64);
        Ok(alloc::vec![lp; emb.rows() - predict_from])
    }
}

fn uniform_name(m: &UniformLm) -> String {
    format!("uniform(vocab={})", m.vocab_size)
}

impl_live_backend!(UniformLm, uniform_name);

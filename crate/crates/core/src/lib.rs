//! Allocation-only core of the selective-IFD instruction-tuning data selector.
//!
//! Everything in this crate is a pure function of its inputs: tokenization,
//! the built-in TinyLM scoring model, per-token log-likelihood gains, the
//! dataset-wide top-k% token gate, embedding-noise neighborhoods, and the
//! two-stage (mean, then variance) subset selection. File formats, parallel
//! orchestration and the command line live in the `sifd` crate.
//!
//! The crate is `#![no_std]` and only needs `alloc`. Transcendental functions
//! come from `libm`, so results are bit-reproducible across platforms.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
mod error;
pub mod lm;
pub mod perturbation;
pub mod rng;
pub mod scoring;
pub mod selection;
pub mod tokenizer;

pub use corpus::{Dataset, PromptTemplate, Sample, TokenizedSample};
pub use error::{Error, Result};
pub use lm::{
    EmbeddingMatrix, EmbeddingModel, LogProbCache, PassKind, ScoringBackend, TinyLm,
    TinyLmConfig, UniformLm,
};
pub use perturbation::{draw_noise, neighborhood_stats, NeighborhoodStats, NoiseSpec};
pub use scoring::{
    compute_delta_trace, compute_gate, compute_ifd, compute_sifd, DeltaTrace, DiscardReason,
    GateThreshold, ScoreRecord, SelectiveScore,
};
pub use selection::{
    hierarchical_select, select_baseline, BaselineMethod, SelectionConfig, SelectionResult,
    TieBreak,
};
pub use tokenizer::{Tokenizer, WhitespaceByteTokenizer};

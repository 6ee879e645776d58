//! Embedding-noise neighborhoods and the mean/variance of their gated scores.
//!
//! Neighbor `i` of a sample adds one `(L+T) × d` noise matrix to the
//! conditional-pass embeddings; its last `T` rows are added to the
//! unconditional-pass embeddings as well, so both passes see the same
//! perturbed response. Entries are uniform on `[-ε, ε)` with
//! `ε = α / √((L+T)·d)`, which puts the expected squared norm of the whole
//! perturbation at `α²/3`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::TokenizedSample;
use crate::lm::{EmbeddingModel, ScoringBackend};
use crate::rng::{keyed_stream, symmetric_unit, NOISE_DOMAIN};
use crate::scoring::{gated_score, GateThreshold};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Base noise scale α.
    pub alpha: f64,
    /// Number of neighbors M.
    pub perturbations: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { alpha: 5.0, perturbations: 30, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig { reason: "alpha must be finite and non-negative".into() });
        }
        Ok(())
    }

    /// Per-entry bound `α / √(rows·d)`; zero for an empty matrix.
    pub fn epsilon(&self, rows: usize, d: usize) -> f64 {
        if rows * d == 0 {
            return 0.0;
        }
        self.alpha / libm::sqrt((rows * d) as f64)
    }
}

/// Noise matrix `index` for `sample_id`, row-major `rows × d`, drawn from
/// the stream keyed by `(seed, sample_id, index)`.
pub fn draw_noise(spec: &NoiseSpec, sample_id: &str, index: usize, rows: usize, d: usize) -> Vec<f64> {
    let eps = spec.epsilon(rows, d);
    let mut rng = keyed_stream(NOISE_DOMAIN, spec.seed, sample_id.as_bytes(), index as u64);
    (0..rows * d).map(|_| eps * symmetric_unit(&mut rng)).collect()
}

/// Per-token deltas of all `M` neighbors, computed with one batched
/// forward call per pass.
pub fn perturbed_deltas(
    model: &dyn EmbeddingModel,
    sample: &TokenizedSample,
    spec: &NoiseSpec,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let d = model.dim();
    let l = sample.instr_len();
    let joined = sample.joined_tokens();
    let cond = model.embed(&joined)?;
    let uncond = model.embed(&sample.resp_tokens)?;
    let m = spec.perturbations;
    let mut cond_batch = Vec::with_capacity(m);
    let mut uncond_batch = Vec::with_capacity(m);
    for i in 0..m {
        let noise = draw_noise(spec, &sample.id, i, joined.len(), d);
        cond_batch.push(cond.perturbed(&noise)?);
        uncond_batch.push(uncond.perturbed(&noise[l * d..])?);
    }
    let cond_lp = model.forward_logprobs_batched(&cond_batch, &joined, l)?;
    let uncond_lp = model.forward_logprobs_batched(&uncond_batch, &sample.resp_tokens, 0)?;
    Ok(cond_lp
        .iter()
        .zip(&uncond_lp)
        .map(|(c, u)| c.iter().zip(u).map(|(c, u)| c - u).collect())
        .collect())
}

/// Mean and population variance of a sample's neighbor scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodStats {
    pub sample_id: String,
    pub mu_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub m_effective: usize,
    pub undefined_count: usize,
    /// Per-neighbor gated score, `None` where no token passed the gate.
    pub scores: Vec<Option<f64>>,
}

impl NeighborhoodStats {
    /// Moments over the defined scores, divisor `m_effective`. Deviations
    /// are taken from the first score before averaging, so identical
    /// scores give exactly that score and exactly zero variance.
    pub fn from_scores(sample_id: impl Into<String>, scores: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = scores.iter().flatten().copied().collect();
        let m = defined.len();
        let (mu_hat, sigma2_hat) = match defined.first() {
            None => (None, None),
            Some(&first) => {
                let mu = first + defined.iter().map(|s| s - first).sum::<f64>() / m as f64;
                let var = defined.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / m as f64;
                (Some(mu), Some(var))
            }
        };
        Self {
            sample_id: sample_id.into(),
            mu_hat,
            sigma2_hat,
            m_effective: m,
            undefined_count: scores.len() - m,
            scores,
        }
    }
}

/// Scores `M` noisy neighbors of `sample` against a fixed gate.
pub fn neighborhood_stats(
    backend: &dyn ScoringBackend,
    sample: &TokenizedSample,
    gate: &GateThreshold,
    spec: &NoiseSpec,
) -> Result<NeighborhoodStats> {
    let model = backend.embedding_model().ok_or(Error::PerturbationRequiresEmbedding)?;
    if spec.perturbations == 0 {
        return Err(Error::InvalidConfig { reason: "neighborhoods need at least one perturbation".into() });
    }
    let deltas = perturbed_deltas(model, sample, spec).map_err(|e| e.for_sample(&sample.id))?;
    let scores = deltas.iter().map(|d| gated_score(d, gate.tau).value).collect();
    Ok(NeighborhoodStats::from_scores(sample.id.clone(), scores))
}

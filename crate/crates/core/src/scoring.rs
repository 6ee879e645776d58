//! Per-token log-likelihood gains, IFD, the dataset-wide top-k% token gate
//! and the gated (selective) IFD.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::TokenizedSample;
use crate::lm::{PassKind, ScoringBackend};
use crate::perturbation::NeighborhoodStats;
use crate::{Error, Result};

/// Conditional and unconditional response log-probs and their difference
/// `delta[t] = logp_cond[t] - logp_uncond[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTrace {
    sample_id: String,
    logp_cond: Vec<f64>,
    logp_uncond: Vec<f64>,
    delta: Vec<f64>,
}

impl DeltaTrace {
    pub fn new(sample_id: impl Into<String>, logp_cond: Vec<f64>, logp_uncond: Vec<f64>) -> Result<Self> {
        let sample_id = sample_id.into();
        if logp_cond.len() != logp_uncond.len() {
            return Err(Error::LengthMismatch {
                id: sample_id,
                expected: logp_cond.len(),
                found: logp_uncond.len(),
            });
        }
        if logp_cond.is_empty() {
            return Err(Error::EmptyResponse { id: sample_id });
        }
        let delta = logp_cond.iter().zip(&logp_uncond).map(|(c, u)| c - u).collect();
        Ok(Self { sample_id, logp_cond, logp_uncond, delta })
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn logp_cond(&self) -> &[f64] {
        &self.logp_cond
    }

    pub fn logp_uncond(&self) -> &[f64] {
        &self.logp_uncond
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

/// Runs both passes for one sample. The conditional pass scores response
/// position `L + t`, which lines up with unconditional position `t`.
pub fn compute_delta_trace(backend: &dyn ScoringBackend, sample: &TokenizedSample) -> Result<DeltaTrace> {
    let run = || {
        let cond = backend.pass_logprobs(sample, PassKind::Conditional)?;
        let uncond = backend.pass_logprobs(sample, PassKind::Unconditional)?;
        for lp in [&cond, &uncond] {
            if lp.len() != sample.resp_len() {
                return Err(Error::LengthMismatch {
                    id: sample.id.clone(),
                    expected: sample.resp_len(),
                    found: lp.len(),
                });
            }
        }
        DeltaTrace::new(sample.id.clone(), cond, uncond)
    };
    run().map_err(|e| e.for_sample(&sample.id))
}

/// `exp(-mean(delta))`, i.e. `PPL(y|x) / PPL(y)`.
pub fn compute_ifd(trace: &DeltaTrace) -> f64 {
    gated_score(trace.delta(), 0.0).value.expect("traces are never empty")
}

/// The `|delta|` cutoff realizing a top-k% rank over every response token
/// of a dataset. Tokens tied with the cutoff are all admitted, so
/// `selected_tokens` can exceed the nominal count by the tie mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateThreshold {
    pub k: f64,
    pub tau: f64,
    pub total_tokens: usize,
    pub selected_tokens: usize,
}

impl GateThreshold {
    /// Exact quantile over all `|delta|` values. The nominal count is
    /// `ceil(k/100 · n)`, and `tau` is the value at that rank.
    pub fn from_deltas<'a, I>(deltas: I, k: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if !(k > 0.0 && k <= 100.0) {
            return Err(Error::InvalidRatio { k });
        }
        let mut abs: Vec<f64> = deltas.into_iter().flatten().map(|d| d.abs()).collect();
        let n = abs.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if k == 100.0 {
            return Ok(Self { k, tau: 0.0, total_tokens: n, selected_tokens: n });
        }
        let want = nominal_count(k, n);
        // Descending, so index want-1 holds the want-th largest value.
        let (_, tau, _) = abs.select_nth_unstable_by(want - 1, |a, b| b.total_cmp(a));
        let tau = *tau;
        let selected_tokens = abs.iter().filter(|&&a| a >= tau).count();
        Ok(Self { k, tau, total_tokens: n, selected_tokens })
    }

    #[inline]
    pub fn admits(&self, delta: f64) -> bool {
        delta.abs() >= self.tau
    }

    pub fn selected_fraction(&self) -> f64 {
        self.selected_tokens as f64 / self.total_tokens as f64
    }
}

/// `ceil(k/100 · n)` clamped to `1..=n`. The small slack keeps values such
/// as `k = 30, n = 10` (which round to `3.0000000000000004`) exact.
fn nominal_count(k: f64, n: usize) -> usize {
    let raw = k / 100.0 * n as f64;
    let c = libm::ceil(raw - 1e-9 * raw.max(1.0)) as usize;
    c.clamp(1, n)
}

pub fn compute_gate(traces: &[DeltaTrace], k: f64) -> Result<GateThreshold> {
    GateThreshold::from_deltas(traces.iter().map(DeltaTrace::delta), k)
}

/// A gated score and the number of tokens that passed the gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectiveScore {
    /// Absent when no token passed the gate.
    pub value: Option<f64>,
    pub selected: usize,
}

/// `exp(-Σ w_t Δ_t / Σ w_t)` with `w_t = [|Δ_t| ≥ tau]`.
pub fn gated_score(delta: &[f64], tau: f64) -> SelectiveScore {
    let mut sum = 0.0;
    let mut selected = 0usize;
    for &d in delta {
        if d.abs() >= tau {
            sum += d;
            selected += 1;
        }
    }
    let value = (selected > 0).then(|| libm::exp(-(sum / selected as f64)));
    SelectiveScore { value, selected }
}

pub fn compute_sifd(trace: &DeltaTrace, gate: &GateThreshold) -> SelectiveScore {
    gated_score(trace.delta(), gate.tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscardReason {
    /// Clean score ≥ 1: the instruction did not make the response easier.
    IfdGeOne,
    /// No token passed the gate, on the clean sample or on every neighbor.
    NoSelectedTokens,
    BackendError,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::IfdGeOne => "ifd_ge_one",
            DiscardReason::NoSelectedTokens => "no_selected_tokens",
            DiscardReason::BackendError => "backend_error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ifd_ge_one" => Some(DiscardReason::IfdGeOne),
            "no_selected_tokens" => Some(DiscardReason::NoSelectedTokens),
            "backend_error" => Some(DiscardReason::BackendError),
            _ => None,
        }
    }
}

/// One row of the score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub instr_len: usize,
    pub resp_len: usize,
    pub ifd: Option<f64>,
    /// Clean (unperturbed) selective score.
    pub sifd: Option<f64>,
    pub selected_token_count: usize,
    pub mu_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub m_effective: usize,
    pub undefined_count: usize,
    pub discard: Option<DiscardReason>,
}

impl ScoreRecord {
    /// Clean scores only; neighborhood fields are filled in later.
    pub fn clean(sample: &TokenizedSample, trace: &DeltaTrace, gate: &GateThreshold) -> Self {
        let s = compute_sifd(trace, gate);
        let mut rec = Self {
            sample_id: sample.id.clone(),
            instr_len: sample.instr_len(),
            resp_len: sample.resp_len(),
            ifd: Some(compute_ifd(trace)),
            sifd: s.value,
            selected_token_count: s.selected,
            mu_hat: None,
            sigma2_hat: None,
            m_effective: 0,
            undefined_count: 0,
            discard: None,
        };
        rec.refresh_discard();
        rec
    }

    pub fn backend_error(sample: &TokenizedSample) -> Self {
        Self {
            sample_id: sample.id.clone(),
            instr_len: sample.instr_len(),
            resp_len: sample.resp_len(),
            ifd: None,
            sifd: None,
            selected_token_count: 0,
            mu_hat: None,
            sigma2_hat: None,
            m_effective: 0,
            undefined_count: 0,
            discard: Some(DiscardReason::BackendError),
        }
    }

    /// Zero-perturbation mode: the neighborhood is the sample itself, so
    /// `mu_hat` is the clean score and `sigma2_hat` is 0.
    pub fn without_neighborhood(mut self) -> Self {
        if self.discard != Some(DiscardReason::BackendError) {
            self.mu_hat = self.sifd;
            self.sigma2_hat = self.sifd.map(|_| 0.0);
        }
        self
    }

    pub fn with_neighborhood(mut self, stats: &NeighborhoodStats) -> Self {
        self.mu_hat = stats.mu_hat;
        self.sigma2_hat = stats.sigma2_hat;
        self.m_effective = stats.m_effective;
        self.undefined_count = stats.undefined_count;
        self.refresh_discard();
        self
    }

    fn refresh_discard(&mut self) {
        if self.discard == Some(DiscardReason::BackendError) {
            return;
        }
        let perturbed = self.m_effective + self.undefined_count > 0;
        self.discard = if self.sifd.is_none() || (perturbed && self.m_effective == 0) {
            Some(DiscardReason::NoSelectedTokens)
        } else if self.sifd.is_some_and(|s| s >= 1.0) {
            Some(DiscardReason::IfdGeOne)
        } else {
            None
        };
    }
}

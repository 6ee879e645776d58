//! Parallel, order-stable scoring of a whole dataset.

use std::time::{Duration, Instant};

use log::info;
use rayon::prelude::*;
use sifd_core::perturbation::perturbed_deltas;
use sifd_core::scoring::gated_score;
use sifd_core::{
    compute_delta_trace, neighborhood_stats, Dataset, DeltaTrace, GateThreshold, NeighborhoodStats,
    NoiseSpec, ScoreRecord, ScoringBackend,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub k: f64,
    /// `perturbations == 0` skips neighborhoods (clean scores only).
    pub noise: NoiseSpec,
    /// Recompute the top-k% gate within each perturbation index instead of
    /// reusing the clean-pass gate.
    pub rerank_per_perturbation: bool,
    /// Record backend failures as discarded rows instead of aborting.
    pub skip_backend_errors: bool,
    /// 0 means one worker per available core.
    pub workers: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            k: 75.0,
            noise: NoiseSpec::default(),
            rerank_per_perturbation: false,
            skip_backend_errors: false,
            workers: 0,
        }
    }
}

#[derive(Debug)]
pub struct ScoreRun {
    /// Clean traces in dataset order; `None` where the backend failed.
    pub traces: Vec<Option<DeltaTrace>>,
    pub gate: GateThreshold,
    pub records: Vec<ScoreRecord>,
    pub timings: Vec<(&'static str, Duration)>,
}

fn timed<T>(stage: &'static str, timings: &mut Vec<(&'static str, Duration)>, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    info!("{stage}: {:.2?}", took);
    timings.push((stage, took));
    out
}

pub fn score_dataset(backend: &dyn ScoringBackend, dataset: &Dataset, opts: &ScoreOptions) -> Result<ScoreRun> {
    opts.noise.validate()?;
    if opts.noise.perturbations > 0 && backend.embedding_model().is_none() {
        return Err(sifd_core::Error::PerturbationRequiresEmbedding.into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run(backend, dataset, opts))
}

fn run(backend: &dyn ScoringBackend, dataset: &Dataset, opts: &ScoreOptions) -> Result<ScoreRun> {
    let samples = dataset.samples();
    let mut timings = Vec::new();
    info!("scoring {} samples with {}", samples.len(), backend.model_name());

    let traces = timed("delta traces", &mut timings, || {
        samples
            .par_iter()
            .map(|s| match compute_delta_trace(backend, s) {
                Ok(t) => Ok(Some(t)),
                Err(e) if opts.skip_backend_errors && e.is_backend() => {
                    log::warn!("{e}");
                    Ok(None)
                }
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(|e| Error::at_stage("delta")(e.into()))?;

    let gate = timed("gate", &mut timings, || {
        GateThreshold::from_deltas(traces.iter().flatten().map(DeltaTrace::delta), opts.k)
    })
    .map_err(|e| Error::at_stage("gate")(e.into()))?;
    info!(
        "gate k={}%: tau={} admits {}/{} tokens",
        gate.k, gate.tau, gate.selected_tokens, gate.total_tokens
    );

    let clean: Vec<ScoreRecord> = samples
        .iter()
        .zip(&traces)
        .map(|(s, t)| match t {
            Some(t) => ScoreRecord::clean(s, t, &gate),
            None => ScoreRecord::backend_error(s),
        })
        .collect();

    let records = if opts.noise.perturbations == 0 {
        clean.into_iter().map(ScoreRecord::without_neighborhood).collect()
    } else {
        let stats = timed("neighborhoods", &mut timings, || {
            if opts.rerank_per_perturbation {
                reranked_neighborhoods(backend, dataset, &traces, opts)
            } else {
                fixed_gate_neighborhoods(backend, dataset, &traces, &gate, opts)
            }
        })
        .map_err(Error::at_stage("neighborhood"))?;
        clean
            .into_iter()
            .zip(stats)
            .map(|(rec, st)| match st {
                Some(st) => rec.with_neighborhood(&st),
                None => rec,
            })
            .collect()
    };
    Ok(ScoreRun { traces, gate, records, timings })
}

fn fixed_gate_neighborhoods(
    backend: &dyn ScoringBackend,
    dataset: &Dataset,
    traces: &[Option<DeltaTrace>],
    gate: &GateThreshold,
    opts: &ScoreOptions,
) -> Result<Vec<Option<NeighborhoodStats>>> {
    dataset
        .samples()
        .par_iter()
        .zip(traces)
        .map(|(s, t)| match t {
            Some(_) => neighborhood_stats(backend, s, gate, &opts.noise).map(Some).map_err(Error::from),
            None => Ok(None),
        })
        .collect()
}

/// Neighbor `i` of every sample is scored against a gate ranked over the
/// deltas of neighbor `i` across the whole dataset.
fn reranked_neighborhoods(
    backend: &dyn ScoringBackend,
    dataset: &Dataset,
    traces: &[Option<DeltaTrace>],
    opts: &ScoreOptions,
) -> Result<Vec<Option<NeighborhoodStats>>> {
    let model = backend.embedding_model().ok_or(sifd_core::Error::PerturbationRequiresEmbedding)?;
    let perturbed: Vec<Option<Vec<Vec<f64>>>> = dataset
        .samples()
        .par_iter()
        .zip(traces)
        .map(|(s, t)| match t {
            Some(_) => perturbed_deltas(model, s, &opts.noise).map(Some),
            None => Ok(None),
        })
        .collect::<Result<_, _>>()?;
    let m = opts.noise.perturbations;
    let gates = (0..m)
        .map(|i| GateThreshold::from_deltas(perturbed.iter().flatten().map(|p| p[i].as_slice()), opts.k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(dataset
        .samples()
        .iter()
        .zip(&perturbed)
        .map(|(s, p)| {
            p.as_ref().map(|p| {
                let scores = p.iter().zip(&gates).map(|(d, g)| gated_score(d, g.tau).value).collect();
                NeighborhoodStats::from_scores(s.id.clone(), scores)
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_samples;
    use sifd_core::{LogProbCache, PromptTemplate, TinyLm, TinyLmConfig, WhitespaceByteTokenizer};

    fn dataset(n: usize) -> Dataset {
        let raw = synthetic_samples(n, 5);
        Dataset::from_samples(&raw, &WhitespaceByteTokenizer::new(), &PromptTemplate::default()).unwrap()
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let ds = dataset(24);
        let lm = TinyLm::new(TinyLmConfig::default()).unwrap();
        let opts = ScoreOptions { noise: NoiseSpec { perturbations: 4, ..Default::default() }, ..Default::default() };
        let one = score_dataset(&lm, &ds, &ScoreOptions { workers: 1, ..opts }).unwrap();
        let four = score_dataset(&lm, &ds, &ScoreOptions { workers: 4, ..opts }).unwrap();
        assert_eq!(one.records, four.records);
    }

    #[test]
    fn rerank_mode_with_zero_noise_matches_fixed_gate() {
        let ds = dataset(12);
        let lm = TinyLm::new(TinyLmConfig::default()).unwrap();
        let noise = NoiseSpec { alpha: 0.0, perturbations: 3, seed: 1 };
        let base = ScoreOptions { k: 50.0, noise, ..Default::default() };
        let fixed = score_dataset(&lm, &ds, &base).unwrap();
        let rerank = score_dataset(&lm, &ds, &ScoreOptions { rerank_per_perturbation: true, ..base }).unwrap();
        assert_eq!(fixed.records, rerank.records);
    }

    #[test]
    fn cache_backend_rejects_perturbation_and_skips_missing() {
        let ds = dataset(5);
        let lm = TinyLm::new(TinyLmConfig::default()).unwrap();
        let cache = LogProbCache::from_backend(&lm, &ds).unwrap();
        let err = score_dataset(&cache, &ds, &ScoreOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "perturbation requires embedding access");
        assert_eq!(err.exit_code(), 3);

        let clean = ScoreOptions { noise: NoiseSpec { perturbations: 0, ..Default::default() }, ..Default::default() };
        let from_cache = score_dataset(&cache, &ds, &clean).unwrap();
        let live = score_dataset(&lm, &ds, &clean).unwrap();
        assert_eq!(from_cache.records, live.records);

        let mut partial = LogProbCache::new(ds.tokenizer_fingerprint(), "m");
        for (id, kind, lp) in cache.records().filter(|(id, _, _)| *id != ds.samples()[2].id) {
            partial.insert(id, kind, lp.to_vec()).unwrap();
        }
        let err = score_dataset(&partial, &ds, &clean).unwrap_err();
        assert!(err.to_string().contains(&ds.samples()[2].id), "{err}");
        let skipped = score_dataset(&partial, &ds, &ScoreOptions { skip_backend_errors: true, ..clean }).unwrap();
        assert_eq!(skipped.records[2].discard, Some(sifd_core::DiscardReason::BackendError));
    }
}

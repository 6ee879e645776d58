//! Subcommand bodies. Each returns a summary and leaves all files written
//! under the configured output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sifd_core::{
    hierarchical_select, select_baseline, BaselineMethod, Dataset, DiscardReason, GateThreshold, LogProbCache,
    Sample, SelectionResult, TinyLm, Tokenizer,
};

use crate::cache_io::{load_cache, save_cache};
use crate::config::RunConfig;
use crate::corpus_io::{read_samples, save_tokenized};
use crate::error::{Error, Result};
use crate::pipeline::{score_dataset, ScoreOptions, ScoreRun};
use crate::stats::{histogram, traces_from_cache, threshold_fractions, write_histogram, write_series, write_thresholds};
use crate::tables::{load_scores, load_traces, save_scores, write_audit, write_selection, write_traces, ScoreTable};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GATE_FILE: &str = "gate.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const TRACES_FILE: &str = "traces.tsv";
pub const TOKENIZED_FILE: &str = "tokenized.tsv";
pub const SELECTION_FILE: &str = "selection.jsonl";
pub const AUDIT_FILE: &str = "selection_audit.csv";

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    config_hash: &'a str,
    dataset_fingerprint: &'a str,
    tokenizer: &'a str,
    backend: &'a str,
    samples: usize,
}

#[derive(Serialize)]
struct GateReport {
    k: f64,
    tau: f64,
    total_tokens: usize,
    selected_tokens: usize,
    selected_fraction: f64,
}

impl From<&GateThreshold> for GateReport {
    fn from(g: &GateThreshold) -> Self {
        Self {
            k: g.k,
            tau: g.tau,
            total_tokens: g.total_tokens,
            selected_tokens: g.selected_tokens,
            selected_fraction: g.selected_fraction(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::io(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(Error::io(path))
}

/// Raw samples and their tokenized dataset under the configured tokenizer
/// and template.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Vec<Sample>, Dataset)> {
    let path = cfg.dataset_path()?;
    let raw = read_samples(path).map_err(Error::at_stage("ingest"))?;
    let dataset = Dataset::from_samples(&raw, &cfg.tokenizer(), &cfg.prompt_template()?)
        .map_err(|e| Error::at_stage("ingest")(e.into()))?;
    if dataset.is_empty() {
        return Err(Error::Data(format!("{}: no samples", path.display())));
    }
    Ok((raw, dataset))
}

pub fn score_options(cfg: &RunConfig) -> ScoreOptions {
    ScoreOptions {
        k: cfg.k,
        noise: cfg.noise_spec(),
        rerank_per_perturbation: cfg.rerank_per_perturbation,
        skip_backend_errors: cfg.skip_backend_errors,
        workers: cfg.workers,
    }
}

#[derive(Debug)]
pub struct ScoreOutput {
    pub run: ScoreRun,
    pub table: ScoreTable,
    pub out_dir: PathBuf,
}

/// Scores the dataset and writes config, manifest, gate report, score
/// table, tokenized corpus and (optionally) the delta traces.
pub fn score(cfg: &RunConfig) -> Result<ScoreOutput> {
    let (_, dataset) = load_dataset(cfg)?;
    let tokenizer = cfg.tokenizer();
    let backend = cfg.build_backend(&tokenizer).map_err(Error::at_stage("backend"))?;
    let run = score_dataset(backend.as_ref(), &dataset, &score_options(cfg))?;

    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(Error::io(&out))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let model = backend.model_name();
    let fingerprint = dataset.fingerprint();
    write_json(
        &out.join(MANIFEST_FILE),
        &Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &cfg.hash(),
            dataset_fingerprint: &fingerprint,
            tokenizer: &tokenizer.fingerprint(),
            backend: &model,
            samples: dataset.len(),
        },
    )?;
    write_json(&out.join(GATE_FILE), &GateReport::from(&run.gate))?;
    let table = ScoreTable { dataset_fingerprint: fingerprint, backend: model, records: run.records.clone() };
    save_scores(&table, &out.join(SCORES_FILE))?;
    save_tokenized(&dataset, &out.join(TOKENIZED_FILE))?;
    if cfg.dump_traces {
        let path = out.join(TRACES_FILE);
        let mut w = create(&path)?;
        write_traces(run.traces.iter().flatten(), &mut w).map_err(Error::io(&path))?;
        finish(w, &path)?;
    }
    info!("wrote {} rows to {}", table.records.len(), out.join(SCORES_FILE).display());
    Ok(ScoreOutput { run, table, out_dir: out })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectSummary {
    pub budget: usize,
    pub gamma: f64,
    pub total: usize,
    pub eligible: usize,
    pub discards: Vec<(DiscardReason, usize)>,
    pub result: SelectionResult,
}

impl std::fmt::Display for SelectSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "selected {} of {} samples (gamma={}, stage 1={}, eligible={})",
            self.result.selected_ids.len(),
            self.total,
            self.gamma,
            self.result.stage1_ids.len(),
            self.eligible
        )?;
        for (reason, n) in &self.discards {
            write!(f, "\n  discarded {}: {n}", reason.as_str())?;
        }
        Ok(())
    }
}

fn discard_counts(table: &ScoreTable) -> Vec<(DiscardReason, usize)> {
    [DiscardReason::IfdGeOne, DiscardReason::NoSelectedTokens, DiscardReason::BackendError]
        .into_iter()
        .map(|r| (r, table.records.iter().filter(|rec| rec.discard == Some(r)).count()))
        .collect()
}

/// Loads a score table and verifies it was produced from `dataset`.
pub fn load_matching_scores(path: &Path, dataset: &Dataset) -> Result<ScoreTable> {
    let table = load_scores(path)?;
    let fp = dataset.fingerprint();
    if table.dataset_fingerprint != fp {
        return Err(Error::Data(format!(
            "{} was scored on dataset {} but the given dataset is {fp}",
            path.display(),
            table.dataset_fingerprint
        )));
    }
    Ok(table)
}

fn scores_path(cfg: &RunConfig, scores: Option<&Path>) -> PathBuf {
    scores.map_or_else(|| cfg.output_dir.join(SCORES_FILE), Path::to_path_buf)
}

fn write_selected(out: &Path, file: &str, ids: &[String], raw: &[Sample]) -> Result<()> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let path = out.join(file);
    let mut w = create(&path)?;
    write_selection(ids, raw, &mut w)?;
    finish(w, &path)
}

/// Two-stage selection over a score table; writes the selection and the
/// audit sidecar.
pub fn select(cfg: &RunConfig, scores: Option<&Path>) -> Result<SelectSummary> {
    let (raw, dataset) = load_dataset(cfg)?;
    let table = load_matching_scores(&scores_path(cfg, scores), &dataset)?;
    let budget = cfg.budget()?.resolve(table.records.len());
    let result = hierarchical_select(&table.records, &cfg.selection_config(budget))
        .map_err(|e| Error::at_stage("select")(e.into()))?;

    let out = &cfg.output_dir;
    write_selected(out, SELECTION_FILE, &result.selected_ids, &raw)?;
    let audit_path = out.join(AUDIT_FILE);
    let mut w = create(&audit_path)?;
    write_audit(&result, &mut w).map_err(Error::io(&audit_path))?;
    finish(w, &audit_path)?;
    Ok(SelectSummary {
        budget,
        gamma: cfg.gamma,
        total: table.records.len(),
        eligible: result.eligible,
        discards: discard_counts(&table),
        result,
    })
}

/// Single-stage baseline selection, written to `baseline_<method>.jsonl`.
pub fn baseline(cfg: &RunConfig, method: BaselineMethod, scores: Option<&Path>) -> Result<SelectionResult> {
    let (raw, dataset) = load_dataset(cfg)?;
    let table = load_matching_scores(&scores_path(cfg, scores), &dataset)?;
    let budget = cfg.budget()?.resolve(table.records.len());
    let result = select_baseline(&table.records, method, budget, cfg.seed)
        .map_err(|e| Error::at_stage("baseline")(e.into()))?;
    let name = match method {
        BaselineMethod::Random => "random",
        BaselineMethod::Longest => "longest",
        BaselineMethod::IfdTop => "ifd_top",
    };
    write_selected(&cfg.output_dir, &format!("baseline_{name}.jsonl"), &result.selected_ids, &raw)?;
    Ok(result)
}

pub const THRESHOLDS_FILE: &str = "delta_thresholds.csv";
pub const HISTOGRAM_FILE: &str = "delta_histogram.csv";
pub const SERIES_FILE: &str = "delta_series.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRequest {
    pub traces: PathBuf,
    /// Read deltas from a log-prob cache instead of a trace dump.
    pub cache: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub bins: usize,
    pub ids: Vec<String>,
    pub out_dir: PathBuf,
}

/// |Δ| threshold fractions, histogram and per-id series from a trace dump
/// or a log-prob cache.
pub fn stats(req: &StatsRequest) -> Result<Vec<crate::stats::ThresholdFraction>> {
    let traces = match &req.cache {
        Some(path) => {
            let (traces, incomplete) = traces_from_cache(&load_cache(path)?)?;
            if !incomplete.is_empty() {
                log::warn!("{} ids lack one of the two passes and are skipped", incomplete.len());
            }
            traces
        }
        None if !req.traces.exists() => {
            return Err(Error::Usage(format!(
                "{} not found; rerun `sifd score` with --dump-traces",
                req.traces.display()
            )))
        }
        None => load_traces(&req.traces)?,
    };
    fs::create_dir_all(&req.out_dir).map_err(Error::io(&req.out_dir))?;

    let fractions = threshold_fractions(&traces, &req.thresholds);
    let path = req.out_dir.join(THRESHOLDS_FILE);
    write_thresholds(&fractions, create(&path)?).map_err(|e| Error::Data(e.to_string()))?;
    let path = req.out_dir.join(HISTOGRAM_FILE);
    write_histogram(&histogram(&traces, req.bins), create(&path)?).map_err(|e| Error::Data(e.to_string()))?;
    if !req.ids.is_empty() {
        let path = req.out_dir.join(SERIES_FILE);
        let missing = write_series(&traces, &req.ids, create(&path)?).map_err(|e| Error::Data(e.to_string()))?;
        if !missing.is_empty() {
            return Err(Error::Data(format!("ids not in trace dump: {}", missing.join(", "))));
        }
    }
    Ok(fractions)
}

/// Runs both passes of the configured TinyLM over the dataset and stores
/// them as a log-prob cache file.
pub fn export_cache(cfg: &RunConfig, path: &Path) -> Result<usize> {
    let (_, dataset) = load_dataset(cfg)?;
    let lm = TinyLm::new(cfg.tinylm_config(&cfg.tokenizer()))?;
    let cache = LogProbCache::from_backend(&lm, &dataset)?;
    save_cache(&cache, path)?;
    Ok(cache.len())
}

pub fn write_synthetic(n: usize, seed: u64, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for s in crate::synth::synthetic_samples(n, seed) {
        let line = serde_json::json!({"id": s.id, "instruction": s.instruction, "response": s.response});
        writeln!(w, "{line}").map_err(Error::io(path))?;
    }
    finish(w, path)
}

//! Run configuration: a flat TOML file whose keys mirror the CLI flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sifd_core::{
    NoiseSpec, PromptTemplate, ScoringBackend, SelectionConfig, TieBreak, TinyLm, TinyLmConfig,
    Tokenizer, WhitespaceByteTokenizer,
};

use crate::cache_io::load_cache;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Tinylm,
    Cache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakName {
    #[default]
    CleanScore,
    HigherMean,
}

impl From<TieBreakName> for TieBreak {
    fn from(t: TieBreakName) -> Self {
        match t {
            TieBreakName::CleanScore => TieBreak::CleanScore,
            TieBreakName::HigherMean => TieBreak::HigherMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub backend: BackendKind,
    pub cache: Option<PathBuf>,
    pub tinylm_d: usize,
    pub tinylm_layers: usize,
    pub tinylm_heads: usize,
    pub tinylm_context: usize,
    pub tinylm_seed: u64,
    pub template: String,
    pub separator: bool,
    /// Token ratio, in percent.
    pub k: f64,
    pub alpha: f64,
    /// Number of noise neighbors; 0 scores clean samples only.
    pub m: usize,
    pub gamma: f64,
    /// A count (`"2600"`) or a percentage of the dataset (`"5%"`).
    pub budget: Option<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// 0 uses every available core.
    pub workers: usize,
    pub tie_break: TieBreakName,
    pub filter_ifd_ge_one: bool,
    pub rerank_per_perturbation: bool,
    pub dump_traces: bool,
    pub skip_backend_errors: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lm = TinyLmConfig::default();
        let noise = NoiseSpec::default();
        Self {
            dataset: None,
            backend: BackendKind::Tinylm,
            cache: None,
            tinylm_d: lm.d_model,
            tinylm_layers: lm.n_layers,
            tinylm_heads: lm.n_heads,
            tinylm_context: lm.context_cap,
            tinylm_seed: lm.weight_seed,
            template: "{instruction}".into(),
            separator: true,
            k: 75.0,
            alpha: noise.alpha,
            m: noise.perturbations,
            gamma: 2.0,
            budget: None,
            seed: noise.seed,
            output_dir: PathBuf::from("sifd-out"),
            workers: 0,
            tie_break: TieBreakName::CleanScore,
            filter_ifd_ge_one: true,
            rerank_per_perturbation: false,
            dump_traces: false,
            skip_backend_errors: false,
        }
    }
}

/// How many samples to select.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Count(usize),
    Percent(f64),
}

impl Budget {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Usage(format!("invalid budget {s:?}: expected a count or a percentage like 5%"));
        match s.strip_suffix('%') {
            Some(p) => {
                let p: f64 = p.trim().parse().map_err(|_| bad())?;
                if !(p > 0.0 && p <= 100.0) {
                    return Err(bad());
                }
                Ok(Budget::Percent(p))
            }
            None => s.parse().map(Budget::Count).map_err(|_| bad()),
        }
    }

    /// Percentages round to the nearest whole sample of a pool of `n`.
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Budget::Count(c) => c,
            Budget::Percent(p) => (p / 100.0 * n as f64).round() as usize,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the configuration with machine-local settings (worker
    /// count, output directory) cleared.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { workers: 0, output_dir: PathBuf::new(), ..self.clone() };
        let mut hex = String::with_capacity(64);
        for b in Sha256::digest(canonical.to_toml().as_bytes()) {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset.as_deref().ok_or_else(|| Error::Usage("no dataset given (--dataset or `dataset =`)".into()))
    }

    pub fn tokenizer(&self) -> WhitespaceByteTokenizer {
        WhitespaceByteTokenizer::new()
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate> {
        Ok(PromptTemplate::parse(&self.template, self.separator)?)
    }

    pub fn tinylm_config(&self, tokenizer: &dyn Tokenizer) -> TinyLmConfig {
        TinyLmConfig {
            vocab_size: tokenizer.vocab_size(),
            d_model: self.tinylm_d,
            n_layers: self.tinylm_layers,
            n_heads: self.tinylm_heads,
            context_cap: self.tinylm_context,
            weight_seed: self.tinylm_seed,
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec { alpha: self.alpha, perturbations: self.m, seed: self.seed }
    }

    pub fn budget(&self) -> Result<Budget> {
        Budget::parse(
            self.budget.as_deref().ok_or_else(|| Error::Usage("no budget given (--budget or `budget =`)".into()))?,
        )
    }

    pub fn selection_config(&self, budget: usize) -> SelectionConfig {
        SelectionConfig {
            budget,
            gamma: self.gamma,
            tie_break: self.tie_break.into(),
            filter_ifd_ge_one: self.filter_ifd_ge_one,
        }
    }

    /// Builds the scoring backend; cache files must match the tokenizer.
    pub fn build_backend(&self, tokenizer: &dyn Tokenizer) -> Result<Box<dyn ScoringBackend>> {
        match self.backend {
            BackendKind::Tinylm => Ok(Box::new(TinyLm::new(self.tinylm_config(tokenizer))?)),
            BackendKind::Cache => {
                let path = self
                    .cache
                    .as_deref()
                    .ok_or_else(|| Error::Usage("cache backend needs a cache path (--cache)".into()))?;
                let cache = load_cache(path)?;
                if cache.tokenizer_fingerprint() != tokenizer.fingerprint() {
                    return Err(sifd_core::Error::TokenizerMismatch {
                        expected: tokenizer.fingerprint(),
                        found: cache.tokenizer_fingerprint().into(),
                    }
                    .into());
                }
                Ok(Box::new(cache))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_toml() {
        let cfg: RunConfig = toml::from_str("k = 50.0\nm = 10\nbudget = \"5%\"\nbackend = \"cache\"\n").unwrap();
        assert_eq!((cfg.k, cfg.m, cfg.backend), (50.0, 10, BackendKind::Cache));
        assert_eq!(cfg.alpha, 5.0);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn budgets() {
        assert_eq!(Budget::parse("5%").unwrap().resolve(52_002), 2600);
        assert_eq!(Budget::parse("120").unwrap().resolve(10), 120);
        assert!(Budget::parse("0%").is_err());
        assert!(Budget::parse("lots").is_err());
    }

    #[test]
    fn hash_ignores_machine_local_settings() {
        let a = RunConfig::default();
        let b = RunConfig { workers: 8, output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig { k: 50.0, ..a.clone() }.hash());
    }
}

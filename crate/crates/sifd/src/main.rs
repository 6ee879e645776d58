use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sifd::commands::{self, StatsRequest};
use sifd::config::{BackendKind, TieBreakName};
use sifd::{Error, RunConfig};
use sifd_core::BaselineMethod;

#[derive(Parser)]
#[command(name = "sifd", version, about = "Selective-IFD instruction data selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every sample (clean scores, plus noise neighborhoods when m > 0).
    Score(RunArgs),
    /// Same as `score`, but requires m > 0.
    PerturbScore(RunArgs),
    /// Two-stage selection from a score table.
    Select {
        #[command(flatten)]
        run: RunArgs,
        /// Score table; defaults to <out>/scores.csv.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Random, longest-response or top-IFD selection.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_method)]
        method: BaselineMethod,
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// |Δ| statistics from a trace dump or a log-prob cache.
    Stats {
        /// Trace dump written by `score --dump-traces`; defaults to <out>/traces.tsv.
        #[arg(long, conflicts_with = "cache")]
        traces: Option<PathBuf>,
        /// Log-prob cache to take deltas from directly.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1")]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Sample ids whose per-token |Δ| series to emit.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        #[arg(long, env = "SIFD_OUTPUT_DIR", default_value = "sifd-out")]
        out: PathBuf,
    },
    /// Write the TinyLM log-probs of both passes to a cache file.
    ExportCache {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long = "to")]
        path: PathBuf,
    },
    /// Write a synthetic instruction-response corpus as JSONL.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "to")]
        path: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<BaselineMethod, String> {
    BaselineMethod::parse(s).ok_or_else(|| format!("unknown method {s:?} (random, longest, ifd_top)"))
}

/// Flags override the config file, which overrides the defaults.
#[derive(Args)]
struct RunArgs {
    /// Flat TOML file with the same keys as the long flags (underscored).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    no_separator: bool,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Count, or percentage of the dataset such as 5%.
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "SIFD_OUTPUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    tie_break: Option<TieBreakName>,
    #[arg(long)]
    keep_ifd_ge_one: bool,
    #[arg(long)]
    rerank_per_perturbation: bool,
    #[arg(long)]
    dump_traces: bool,
    #[arg(long)]
    skip_backend_errors: bool,
    #[arg(long)]
    tinylm_d: Option<usize>,
    #[arg(long)]
    tinylm_layers: Option<usize>,
    #[arg(long)]
    tinylm_heads: Option<usize>,
    #[arg(long)]
    tinylm_context: Option<usize>,
    #[arg(long)]
    tinylm_seed: Option<u64>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(backend, template, k, alpha, m, gamma, seed, workers, tie_break);
        set!(tinylm_d, tinylm_layers, tinylm_heads, tinylm_context, tinylm_seed);
        if self.dataset.is_some() {
            c.dataset = self.dataset;
        }
        if self.cache.is_some() {
            c.cache = self.cache;
        }
        if self.budget.is_some() {
            c.budget = self.budget;
        }
        if let Some(out) = self.out {
            c.output_dir = out;
        }
        c.separator &= !self.no_separator;
        c.filter_ifd_ge_one &= !self.keep_ifd_ge_one;
        c.rerank_per_perturbation |= self.rerank_per_perturbation;
        c.dump_traces |= self.dump_traces;
        c.skip_backend_errors |= self.skip_backend_errors;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Score(args) => report_score(&args.resolve()?),
        Command::PerturbScore(args) => {
            let cfg = args.resolve()?;
            if cfg.m == 0 {
                return Err(Error::Usage("perturb-score needs m > 0".into()));
            }
            report_score(&cfg)
        }
        Command::Select { run, scores } => {
            let summary = commands::select(&run.resolve()?, scores.as_deref())?;
            println!("{summary}");
            Ok(())
        }
        Command::Baseline { run, method, scores } => {
            let cfg = run.resolve()?;
            let res = commands::baseline(&cfg, method, scores.as_deref())?;
            println!("selected {} samples", res.selected_ids.len());
            Ok(())
        }
        Command::Stats { traces, cache, thresholds, bins, ids, out } => {
            let traces = traces.unwrap_or_else(|| out.join(commands::TRACES_FILE));
            let fractions = commands::stats(&StatsRequest { traces, cache, thresholds, bins, ids, out_dir: out })?;
            for f in fractions {
                println!("|delta| <= {}: {}/{} ({:.4})", f.threshold, f.tokens_le, f.total_tokens, f.fraction);
            }
            Ok(())
        }
        Command::Synth { n, seed, path } => {
            commands::write_synthetic(n, seed, &path)?;
            println!("wrote {n} samples to {}", path.display());
            Ok(())
        }
        Command::ExportCache { run, path } => {
            let n = commands::export_cache(&run.resolve()?, &path)?;
            println!("wrote {n} records to {}", path.display());
            Ok(())
        }
    }
}

fn report_score(cfg: &RunConfig) -> Result<(), Error> {
    let out = commands::score(cfg)?;
    let discarded = out.table.records.iter().filter(|r| r.discard.is_some()).count();
    println!(
        "scored {} samples (tau={}, {} discarded) -> {}",
        out.table.records.len(),
        out.run.gate.tau,
        discarded,
        out.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! |Δ| statistics over a delta-trace dump.

use std::io::Write;

use sifd_core::{DeltaTrace, LogProbCache, PassKind};

/// Delta traces for every id that has both passes in the cache, in cache
/// order. Ids with only one pass are returned separately.
pub fn traces_from_cache(cache: &LogProbCache) -> sifd_core::Result<(Vec<DeltaTrace>, Vec<String>)> {
    let mut traces = Vec::new();
    let mut incomplete = Vec::new();
    for (id, kind, cond) in cache.records() {
        if kind != PassKind::Conditional {
            if cache.get(id, PassKind::Conditional).is_none() {
                incomplete.push(id.to_owned());
            }
            continue;
        }
        match cache.get(id, PassKind::Unconditional) {
            Some(uncond) => traces.push(DeltaTrace::new(id, cond.to_vec(), uncond.to_vec())?),
            None => incomplete.push(id.to_owned()),
        }
    }
    Ok((traces, incomplete))
}

/// Share of response tokens with `|Δ| ≤ threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFraction {
    pub threshold: f64,
    pub tokens_le: usize,
    pub total_tokens: usize,
    pub fraction: f64,
}

pub fn threshold_fractions(traces: &[DeltaTrace], thresholds: &[f64]) -> Vec<ThresholdFraction> {
    let mut abs: Vec<f64> = traces.iter().flat_map(|t| t.delta().iter().map(|d| d.abs())).collect();
    abs.sort_by(f64::total_cmp);
    let total = abs.len();
    thresholds
        .iter()
        .map(|&threshold| {
            let tokens_le = abs.partition_point(|&a| a <= threshold);
            let fraction = if total == 0 { 0.0 } else { tokens_le as f64 / total as f64 };
            ThresholdFraction { threshold, tokens_le, total_tokens: total, fraction }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// `bins` equal-width bins over `[0, max |Δ|]`; the last bin is closed.
pub fn histogram(traces: &[DeltaTrace], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let abs: Vec<f64> = traces.iter().flat_map(|t| t.delta().iter().map(|d| d.abs())).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for a in abs {
        let i = ((a / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin { lo: i as f64 * width, hi: (i + 1) as f64 * width, count })
        .collect()
}

pub fn write_thresholds<W: Write>(rows: &[ThresholdFraction], w: W) -> csv::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["threshold", "tokens_le", "total_tokens", "fraction_le"])?;
    for r in rows {
        csv.write_record([
            r.threshold.to_string(),
            r.tokens_le.to_string(),
            r.total_tokens.to_string(),
            r.fraction.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(bins: &[HistogramBin], w: W) -> csv::Result<()> {
    let total: usize = bins.iter().map(|b| b.count).sum();
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["bin_lo", "bin_hi", "count", "fraction"])?;
    for b in bins {
        let frac = if total == 0 { 0.0 } else { b.count as f64 / total as f64 };
        csv.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), frac.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

/// Per-token `|Δ|` for the traces whose ids are listed, in the listed order.
pub fn write_series<W: Write>(traces: &[DeltaTrace], ids: &[String], w: W) -> csv::Result<Vec<String>> {
    let mut missing = Vec::new();
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["id", "t", "abs_delta"])?;
    for id in ids {
        match traces.iter().find(|t| t.sample_id() == id) {
            Some(tr) => {
                for (t, d) in tr.delta().iter().enumerate() {
                    csv.write_record([id.clone(), t.to_string(), d.abs().to_string()])?;
                }
            }
            None => missing.push(id.clone()),
        }
    }
    csv.flush()?;
    Ok(missing)
}

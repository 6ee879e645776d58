//! Two-stage subset selection and the baseline selectors.
//!
//! Stage 1 keeps the `ceil(γ·b)` eligible samples with the highest
//! neighborhood mean; stage 2 keeps the `b` of those with the lowest
//! neighborhood variance. Ties are broken by the clean selective score
//! (descending) and finally by sample id, so the result never depends on
//! record order.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::rng::{keyed_u64, SHUFFLE_DOMAIN};
use crate::scoring::{DiscardReason, ScoreRecord};
use crate::{Error, Result};

/// Secondary ordering key at stage 2 (after variance ascending).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Clean selective score descending, then id.
    #[default]
    CleanScore,
    /// Neighborhood mean descending, then clean score, then id.
    HigherMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub budget: usize,
    /// Oversampling factor γ ≥ 1.
    pub gamma: f64,
    pub tie_break: TieBreak,
    pub filter_ifd_ge_one: bool,
}

impl SelectionConfig {
    pub fn new(budget: usize) -> Self {
        Self { budget, gamma: 2.0, tie_break: TieBreak::default(), filter_ifd_ge_one: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidConfig { reason: "budget must be positive".into() });
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig { reason: "gamma must be finite and at least 1".into() });
        }
        Ok(())
    }

    /// `ceil(γ·b)`, tolerant of products like `1.1 · 10 = 11.000000000000002`.
    pub fn stage1_count(&self) -> usize {
        let raw = self.gamma * self.budget as f64;
        libm::ceil(raw - 1e-9 * raw.max(1.0)) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub sample_id: String,
    pub mu_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub sifd: Option<f64>,
    /// 1-based position after stage 1.
    pub stage1_rank: usize,
    /// 1-based position in the final selection, if selected.
    pub stage2_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Final selection in rank order.
    pub selected_ids: Vec<String>,
    /// The intermediate stage-1 set in rank order.
    pub stage1_ids: Vec<String>,
    /// One row per stage-1 member, in stage-1 order.
    pub audit: Vec<AuditRow>,
    pub eligible: usize,
}

/// Whether a record may enter stage 1.
pub fn is_eligible(rec: &ScoreRecord, filter_ifd_ge_one: bool) -> bool {
    let discard_ok = match rec.discard {
        None => true,
        Some(DiscardReason::IfdGeOne) => !filter_ifd_ge_one,
        Some(_) => false,
    };
    discard_ok && rec.sifd.is_some() && rec.mu_hat.is_some() && rec.sigma2_hat.is_some()
}

fn desc(a: Option<f64>, b: Option<f64>) -> Ordering {
    // None sorts last.
    match (a, b) {
        (Some(a), Some(b)) => b.total_cmp(&a),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

fn asc(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(a), Some(b)) => a.total_cmp(&b),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

fn check_unique(records: &[ScoreRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(Error::DuplicateId { id: r.sample_id.clone() });
        }
    }
    Ok(())
}

pub fn hierarchical_select(records: &[ScoreRecord], cfg: &SelectionConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    check_unique(records)?;
    let mut pool: Vec<&ScoreRecord> =
        records.iter().filter(|r| is_eligible(r, cfg.filter_ifd_ge_one)).collect();
    let eligible = pool.len();
    let stage1_n = cfg.stage1_count();
    if stage1_n > eligible {
        return Err(Error::InsufficientEligible { eligible, required: stage1_n });
    }

    pool.sort_by(|a, b| {
        desc(a.mu_hat, b.mu_hat)
            .then_with(|| desc(a.sifd, b.sifd))
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    pool.truncate(stage1_n);
    let stage1 = pool.clone();

    pool.sort_by(|a, b| {
        let secondary = match cfg.tie_break {
            TieBreak::CleanScore => desc(a.sifd, b.sifd),
            TieBreak::HigherMean => desc(a.mu_hat, b.mu_hat).then_with(|| desc(a.sifd, b.sifd)),
        };
        asc(a.sigma2_hat, b.sigma2_hat)
            .then(secondary)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    pool.truncate(cfg.budget);

    Ok(build_result(&stage1, &pool, eligible))
}

fn build_result(stage1: &[&ScoreRecord], selected: &[&ScoreRecord], eligible: usize) -> SelectionResult {
    let audit = stage1
        .iter()
        .enumerate()
        .map(|(i, r)| AuditRow {
            sample_id: r.sample_id.clone(),
            mu_hat: r.mu_hat,
            sigma2_hat: r.sigma2_hat,
            sifd: r.sifd,
            stage1_rank: i + 1,
            stage2_rank: selected.iter().position(|s| s.sample_id == r.sample_id).map(|p| p + 1),
        })
        .collect();
    SelectionResult {
        selected_ids: selected.iter().map(|r| r.sample_id.clone()).collect(),
        stage1_ids: stage1.iter().map(|r| r.sample_id.clone()).collect(),
        audit,
        eligible,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    /// Uniformly random subset, seed-deterministic.
    Random,
    /// Most response tokens first.
    Longest,
    /// Highest clean IFD among samples with IFD < 1.
    IfdTop,
}

impl BaselineMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Self::Random),
            "longest" => Some(Self::Longest),
            "ifd_top" | "ifd-top" | "ifd" => Some(Self::IfdTop),
            _ => None,
        }
    }
}

/// Single-stage baseline selection; `stage1_ids` equals `selected_ids`.
/// Ties are broken by sample id. The random method ranks samples by a hash
/// of `(seed, id)`, so its output is independent of record order.
pub fn select_baseline(
    records: &[ScoreRecord],
    method: BaselineMethod,
    budget: usize,
    seed: u64,
) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::InvalidConfig { reason: "budget must be positive".into() });
    }
    check_unique(records)?;
    let mut pool: Vec<&ScoreRecord> = match method {
        BaselineMethod::IfdTop => records.iter().filter(|r| r.ifd.is_some_and(|v| v < 1.0)).collect(),
        _ => records.iter().collect(),
    };
    if budget > pool.len() {
        return Err(Error::BudgetTooLarge { budget, pool: pool.len() });
    }
    let eligible = pool.len();
    match method {
        BaselineMethod::Random => pool.sort_by_cached_key(|r| {
            (keyed_u64(SHUFFLE_DOMAIN, seed, r.sample_id.as_bytes()), r.sample_id.clone())
        }),
        BaselineMethod::Longest => pool.sort_by(|a, b| {
            b.resp_len.cmp(&a.resp_len).then_with(|| a.sample_id.cmp(&b.sample_id))
        }),
        BaselineMethod::IfdTop => {
            pool.sort_by(|a, b| desc(a.ifd, b.ifd).then_with(|| a.sample_id.cmp(&b.sample_id)))
        }
    }
    pool.truncate(budget);
    Ok(build_result(&pool, &pool, eligible))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn rec(id: &str, mu: f64, var: f64) -> ScoreRecord {
        ScoreRecord {
            sample_id: id.into(),
            instr_len: 3,
            resp_len: 5,
            ifd: Some(0.5),
            sifd: Some(0.5),
            selected_token_count: 5,
            mu_hat: Some(mu),
            sigma2_hat: Some(var),
            m_effective: 30,
            undefined_count: 0,
            discard: None,
        }
    }

    #[test]
    fn five_row_example() {
        let mus = [0.9, 0.8, 0.7, 0.6, 0.5];
        let vars = [4.0, 1.0, 3.0, 2.0, 5.0];
        let records: Vec<_> =
            (0..5).map(|i| rec(&format!("{}", i + 1), mus[i], vars[i])).collect();
        let cfg = SelectionConfig { budget: 2, gamma: 2.0, ..SelectionConfig::new(2) };
        let res = hierarchical_select(&records, &cfg).unwrap();
        assert_eq!(res.stage1_ids, ["1", "2", "3", "4"]);
        assert_eq!(res.selected_ids, ["2", "4"]);
        assert_eq!(res.audit[1].stage2_rank, Some(1));
        assert_eq!(res.audit[0].stage2_rank, None);
    }

    #[test]
    fn oversampling_spanning_the_pool() {
        let records: Vec<_> =
            (0..6).map(|i| rec(&format!("r{i}"), 0.1 * i as f64, (6 - i) as f64)).collect();
        let cfg = SelectionConfig { budget: 3, gamma: 2.0, ..SelectionConfig::new(3) };
        let res = hierarchical_select(&records, &cfg).unwrap();
        assert_eq!(res.stage1_ids.len(), 6);
        assert_eq!(res.selected_ids, ["r5", "r4", "r3"]);
    }

    #[test]
    fn equal_variance_falls_to_tie_break() {
        let records: Vec<_> =
            (0..6).map(|i| rec(&format!("r{i}"), 0.1 * i as f64, 1.0)).collect();
        let cfg = SelectionConfig {
            budget: 2,
            gamma: 2.0,
            tie_break: TieBreak::HigherMean,
            filter_ifd_ge_one: true,
        };
        let res = hierarchical_select(&records, &cfg).unwrap();
        assert_eq!(res.selected_ids, ["r5", "r4"]);
    }

    #[test]
    fn discards_and_errors() {
        let mut records: Vec<_> = (0..4).map(|i| rec(&format!("r{i}"), 0.5, 1.0)).collect();
        records[0].discard = Some(DiscardReason::IfdGeOne);
        records[1].discard = Some(DiscardReason::NoSelectedTokens);
        let cfg = SelectionConfig { gamma: 1.0, ..SelectionConfig::new(3) };
        assert_eq!(
            hierarchical_select(&records, &cfg),
            Err(Error::InsufficientEligible { eligible: 2, required: 3 })
        );
        let off = SelectionConfig { filter_ifd_ge_one: false, ..cfg };
        let res = hierarchical_select(&records, &off).unwrap();
        assert_eq!(res.eligible, 3);
        assert!(!res.selected_ids.contains(&"r1".into()));

        assert!(hierarchical_select(&records, &SelectionConfig { gamma: 0.5, ..cfg }).is_err());
        assert_eq!(SelectionConfig { gamma: 1.1, ..SelectionConfig::new(10) }.stage1_count(), 11);
        assert_eq!(SelectionConfig { gamma: 1.5, ..SelectionConfig::new(3) }.stage1_count(), 5);
        let dup = vec![rec("a", 0.1, 0.1), rec("a", 0.2, 0.1)];
        assert!(matches!(hierarchical_select(&dup, &cfg), Err(Error::DuplicateId { .. })));
    }

    #[test]
    fn full_budget_selects_everything() {
        let records: Vec<_> = (0..5).map(|i| rec(&format!("r{i}"), 0.5, i as f64)).collect();
        let cfg = SelectionConfig { gamma: 1.0, ..SelectionConfig::new(5) };
        let res = hierarchical_select(&records, &cfg).unwrap();
        let mut got = res.selected_ids.clone();
        got.sort();
        assert_eq!(got, ["r0", "r1", "r2", "r3", "r4"]);
    }

    #[test]
    fn baselines() {
        let mut records: Vec<_> = (0..3).map(|i| rec(&format!("r{i}"), 0.5, 1.0)).collect();
        for (r, t) in records.iter_mut().zip([3, 9, 5]) {
            r.resp_len = t;
        }
        let longest = select_baseline(&records, BaselineMethod::Longest, 1, 0).unwrap();
        assert_eq!(longest.selected_ids, ["r1"]);

        let a = select_baseline(&records, BaselineMethod::Random, 2, 7).unwrap();
        let b = select_baseline(&records, BaselineMethod::Random, 2, 7).unwrap();
        assert_eq!(a, b);
        let mut rev = records.clone();
        rev.reverse();
        assert_eq!(select_baseline(&rev, BaselineMethod::Random, 2, 7).unwrap().selected_ids, a.selected_ids);

        records[0].ifd = Some(1.2);
        records[1].ifd = Some(0.7);
        records[2].ifd = Some(0.9);
        let top = select_baseline(&records, BaselineMethod::IfdTop, 2, 0).unwrap();
        assert_eq!(top.selected_ids, ["r2", "r1"]);
        assert_eq!(
            select_baseline(&records, BaselineMethod::IfdTop, 3, 0),
            Err(Error::BudgetTooLarge { budget: 3, pool: 2 })
        );
    }
}

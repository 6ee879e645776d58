use std::cmp::Ordering;

use proptest::prelude::*;
use sifd_core::{hierarchical_select, DiscardReason, ScoreRecord, SelectionConfig, TieBreak};

fn record(id: String, mu: f64, var: f64, sifd: f64, discard: Option<DiscardReason>) -> ScoreRecord {
    ScoreRecord {
        sample_id: id,
        instr_len: 3,
        resp_len: 4,
        ifd: Some(sifd),
        sifd: Some(sifd),
        selected_token_count: 4,
        mu_hat: Some(mu),
        sigma2_hat: Some(var),
        m_effective: 30,
        undefined_count: 0,
        discard,
    }
}

/// Values drawn from a coarse grid so that ties are common.
fn grid(levels: u32) -> impl Strategy<Value = f64> {
    prop_oneof![(0..levels).prop_map(move |i| f64::from(i) / f64::from(levels)), 0.0..1.0f64]
}

fn table(max: usize) -> impl Strategy<Value = Vec<ScoreRecord>> {
    proptest::collection::vec(
        (grid(8), grid(5), grid(6), prop_oneof![8 => Just(None), 1 => Just(Some(DiscardReason::IfdGeOne)), 1 => Just(Some(DiscardReason::BackendError))]),
        1..max,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            // Ids whose lexicographic order differs from position order.
            .map(|(i, (mu, var, s, d))| record(format!("r{}", (i * 7919) % 100_003), mu, var, s, d))
            .collect()
    })
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap()
}

/// `ceil(γ·b)`, where a product within floating-point noise (1e-9
/// relative) of a whole number counts as that number.
fn stage_one_count(gamma: f64, budget: usize) -> usize {
    let raw = gamma * budget as f64;
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) {
        nearest as usize
    } else {
        raw.ceil() as usize
    }
}

/// Two full stable sorts with explicit keys, truncating after each.
fn brute_force(records: &[ScoreRecord], cfg: &SelectionConfig) -> Option<(Vec<String>, Vec<String>)> {
    let mut pool: Vec<ScoreRecord> = records
        .iter()
        .filter(|r| match r.discard {
            None => true,
            Some(DiscardReason::IfdGeOne) => !cfg.filter_ifd_ge_one,
            Some(_) => false,
        })
        .cloned()
        .collect();
    let stage1 = stage_one_count(cfg.gamma, cfg.budget);
    if stage1 > pool.len() {
        return None;
    }
    pool.sort_by(|a, b| {
        desc(a.mu_hat.unwrap(), b.mu_hat.unwrap())
            .then(desc(a.sifd.unwrap(), b.sifd.unwrap()))
            .then(a.sample_id.cmp(&b.sample_id))
    });
    pool.truncate(stage1);
    let stage1_ids = pool.iter().map(|r| r.sample_id.clone()).collect();
    pool.sort_by(|a, b| {
        let var = a.sigma2_hat.unwrap().partial_cmp(&b.sigma2_hat.unwrap()).unwrap();
        let second = match cfg.tie_break {
            TieBreak::CleanScore => desc(a.sifd.unwrap(), b.sifd.unwrap()),
            TieBreak::HigherMean => {
                desc(a.mu_hat.unwrap(), b.mu_hat.unwrap()).then(desc(a.sifd.unwrap(), b.sifd.unwrap()))
            }
        };
        var.then(second).then(a.sample_id.cmp(&b.sample_id))
    });
    pool.truncate(cfg.budget);
    Some((pool.into_iter().map(|r| r.sample_id).collect(), stage1_ids))
}

fn config(budget: usize, gamma: f64, higher_mean: bool, filter: bool) -> SelectionConfig {
    SelectionConfig {
        budget,
        gamma,
        tie_break: if higher_mean { TieBreak::HigherMean } else { TieBreak::CleanScore },
        filter_ifd_ge_one: filter,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_brute_force_double_sort(
        records in table(1000),
        budget_frac in 0.0..1.0f64,
        gamma in 1.0..3.0f64,
        higher_mean: bool,
        filter: bool,
    ) {
        let budget = 1 + (budget_frac * records.len() as f64 / 3.0) as usize;
        let cfg = config(budget, gamma, higher_mean, filter);
        match (hierarchical_select(&records, &cfg), brute_force(&records, &cfg)) {
            (Ok(res), Some((selected, stage1))) => {
                prop_assert_eq!(&res.selected_ids, &selected);
                prop_assert_eq!(&res.stage1_ids, &stage1);
                prop_assert_eq!(res.selected_ids.len(), budget);
                prop_assert!(res.selected_ids.iter().all(|id| res.stage1_ids.contains(id)));
            }
            (Err(e), None) => prop_assert!(e.to_string().contains("eligible"), "{}", e),
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got.map(|r| r.selected_ids), want),
        }
    }

    #[test]
    fn record_order_does_not_matter(records in table(300), seed: u64) {
        let cfg = config(1 + records.len() / 6, 2.0, false, true);
        let mut shuffled = records.clone();
        // Deterministic Fisher-Yates driven by a simple LCG.
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = hierarchical_select(&records, &cfg).map(|r| r.selected_ids).ok();
        let b = hierarchical_select(&shuffled, &cfg).map(|r| r.selected_ids).ok();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn raising_a_mean_never_evicts_from_stage_one(records in table(300), pick in any::<prop::sample::Index>(), bump in 0.0..2.0f64) {
        let cfg = config(1 + records.len() / 6, 2.0, false, true);
        let Ok(before) = hierarchical_select(&records, &cfg) else { return Ok(()) };
        let id = pick.get(&before.stage1_ids).clone();
        let mut raised = records.clone();
        let r = raised.iter_mut().find(|r| r.sample_id == id).unwrap();
        r.mu_hat = Some(r.mu_hat.unwrap() + bump);
        let after = hierarchical_select(&raised, &cfg).unwrap();
        prop_assert!(after.stage1_ids.contains(&id));
    }
}

#[test]
fn ranks_in_audit_follow_both_stages() {
    let records: Vec<ScoreRecord> = (0..10)
        .map(|i| record(format!("{i}"), 1.0 - f64::from(i) / 10.0, f64::from((i * 3) % 5), 0.5, None))
        .collect();
    let res = hierarchical_select(&records, &config(3, 2.0, false, true)).unwrap();
    assert_eq!(res.audit.len(), 6);
    for (i, row) in res.audit.iter().enumerate() {
        assert_eq!(row.stage1_rank, i + 1);
        assert_eq!(row.sample_id, res.stage1_ids[i]);
        if let Some(r) = row.stage2_rank {
            assert_eq!(res.selected_ids[r - 1], row.sample_id);
        }
    }
}

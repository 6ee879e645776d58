use sifd_core::perturbation::perturbed_deltas;
use sifd_core::scoring::gated_score;
use sifd_core::{
    compute_delta_trace, compute_gate, draw_noise, neighborhood_stats, Dataset, EmbeddingModel, NoiseSpec,
    PromptTemplate, Sample, TinyLm, TinyLmConfig, TokenizedSample, WhitespaceByteTokenizer,
};

fn fixtures(n: usize) -> Dataset {
    let words = ["red", "blue", "cat", "sum", "two", "list", "of", "and", "with", "the"];
    let raw: Vec<Sample> = (0..n)
        .map(|i| Sample {
            id: format!("fx-{i:02}"),
            instruction: format!("{} {} {}", words[i % 10], words[(i * 3 + 1) % 10], words[(i * 7 + 2) % 10]),
            response: format!("{} {} {}", words[(i * 5 + 3) % 10], words[i % 10], words[(i + 4) % 10]),
        })
        .collect();
    Dataset::from_samples(&raw, &WhitespaceByteTokenizer::new(), &PromptTemplate::default()).unwrap()
}

/// One forward call per perturbation and pass, with the noise re-drawn
/// independently for each pass.
fn looped_deltas(lm: &TinyLm, s: &TokenizedSample, spec: &NoiseSpec) -> Vec<Vec<f64>> {
    let d = lm.dim();
    let l = s.instr_len();
    let joined = s.joined_tokens();
    (0..spec.perturbations)
        .map(|i| {
            let full = draw_noise(spec, &s.id, i, joined.len(), d);
            let resp_only = draw_noise(spec, &s.id, i, joined.len(), d)[l * d..].to_vec();
            let cond = lm.embed(&joined).unwrap().perturbed(&full).unwrap();
            let uncond = lm.embed(&s.resp_tokens).unwrap().perturbed(&resp_only).unwrap();
            let c = lm.forward_logprobs(&cond, &joined, l).unwrap();
            let u = lm.forward_logprobs(&uncond, &s.resp_tokens, 0).unwrap();
            c.iter().zip(&u).map(|(c, u)| c - u).collect()
        })
        .collect()
}

#[test]
fn batched_neighbors_match_the_loop() {
    let lm = TinyLm::new(TinyLmConfig::default()).unwrap();
    let ds = fixtures(20);
    let traces: Vec<_> = ds.samples().iter().map(|s| compute_delta_trace(&lm, s).unwrap()).collect();
    let gate = compute_gate(&traces, 75.0).unwrap();
    let spec = NoiseSpec { alpha: 5.0, perturbations: 30, seed: 9 };
    for s in ds.samples() {
        let batched = perturbed_deltas(&lm, s, &spec).unwrap();
        let looped = looped_deltas(&lm, s, &spec);
        for (b, l) in batched.iter().zip(&looped) {
            let (b, l) = (gated_score(b, gate.tau).value, gated_score(l, gate.tau).value);
            match (b, l) {
                (Some(b), Some(l)) => assert!((b - l).abs() <= 1e-6, "{}: {b} vs {l}", s.id),
                (b, l) => assert_eq!(b, l),
            }
        }
    }
}

#[test]
fn response_noise_is_shared_between_passes() {
    let spec = NoiseSpec { alpha: 5.0, perturbations: 3, seed: 4 };
    let (l, t, d) = (6, 9, 32);
    for i in 0..3 {
        let a = draw_noise(&spec, "x", i, l + t, d);
        let b = draw_noise(&spec, "x", i, l + t, d);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a[l * d..]), bits(&b[l * d..]));
    }
}

#[test]
fn stats_are_deterministic_and_nonnegative() {
    let lm = TinyLm::new(TinyLmConfig::default()).unwrap();
    let ds = fixtures(6);
    let traces: Vec<_> = ds.samples().iter().map(|s| compute_delta_trace(&lm, s).unwrap()).collect();
    let gate = compute_gate(&traces, 50.0).unwrap();
    let spec = NoiseSpec { alpha: 5.0, perturbations: 8, seed: 2 };
    for s in ds.samples() {
        let a = neighborhood_stats(&lm, s, &gate, &spec).unwrap();
        let b = neighborhood_stats(&lm, s, &gate, &spec).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        if let Some(v) = a.sigma2_hat {
            assert!(v >= 0.0);
        }
    }
}

use blackout::lab::{enumerated_estimate, estimator_sweep, model_distribution, verify_noise_theorem};
use blackout::sampler::ProposalDistribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

#[test]
fn single_sample_noise_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let q = normalized((0..8).map(|_| rng.gen_range(0.1..1.0)).collect());
    let p = normalized((0..8).map(|_| rng.gen_range(0.1..1.0)).collect());
    let r = verify_noise_theorem(&q, &p, 1, 50_000, &mut rng).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn standard_errors_shrink_with_draws() {
    let q = normalized(vec![5.0, 3.0, 1.0, 1.0]);
    let p = normalized(vec![1.0, 1.0, 3.0, 5.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let small = verify_noise_theorem(&q, &p, 2, 4_000, &mut rng).unwrap();
    let large = verify_noise_theorem(&q, &p, 2, 64_000, &mut rng).unwrap();
    // 16x the draws: about a quarter of the error
    let ratio = small.mass_std_error / large.mass_std_error;
    assert!((3.0..5.5).contains(&ratio), "{ratio}");
}

#[test]
fn enumeration_limit_is_exact() {
    let counts = [40u64, 20, 10, 5, 3, 2, 1, 1];
    let scores = [1.0, -0.5, 0.3, 2.0, 0.0, -1.0, 0.7, 0.1];
    for alpha in [0.0, 0.4, 1.0] {
        let q = ProposalDistribution::from_counts(&counts, alpha).unwrap();
        let est = enumerated_estimate(&scores, &q);
        for (a, b) in est.iter().zip(model_distribution(&scores)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

/// Skewed counts with a model flatter than the unigram: α = 0.5 matches it.
fn skewed_instance() -> (Vec<f64>, Vec<u64>) {
    let counts: Vec<u64> = (1..=32).map(|r| 10_000 / r).collect();
    let scores = counts.iter().map(|&c| 0.5 * (c as f64).ln()).collect();
    (scores, counts)
}

#[test]
fn unigram_proposal_has_more_variance_than_matched_exponent() {
    let (scores, counts) = skewed_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let s = estimator_sweep(&scores, &counts, &[0.5, 1.0], 8, 20_000, &mut rng).unwrap();
    let (mid, uni) = (&s[0], &s[1]);
    let se = (mid.variance_se.powi(2) + uni.variance_se.powi(2)).sqrt();
    assert!(uni.variance - mid.variance > 3.0 * se, "{uni:?} vs {mid:?}");
    assert!(s.iter().all(|x| x.variance >= 0.0));
}

#[test]
fn uniform_proposal_has_more_bias_than_matched_exponent() {
    let (scores, counts) = skewed_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let s = estimator_sweep(&scores, &counts, &[0.0, 0.5], 8, 20_000, &mut rng).unwrap();
    let (flat, mid) = (&s[0], &s[1]);
    let se = (flat.bias_top_se.powi(2) + mid.bias_top_se.powi(2)).sqrt();
    assert!(flat.bias_top.abs() - mid.bias_top.abs() > 3.0 * se, "{flat:?} vs {mid:?}");
}

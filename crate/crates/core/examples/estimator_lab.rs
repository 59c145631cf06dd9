//! Monte-Carlo checks: the sample-based noise density averages to the
//! proposal, and the proposal exponent trades bias against variance.

use blackout::lab;
use blackout::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let proposal = [0.3, 0.2, 0.15, 0.1, 0.1, 0.08, 0.05, 0.02];
    let model = [0.05, 0.1, 0.3, 0.05, 0.2, 0.1, 0.1, 0.1];
    for k in [1, 4, 16] {
        let r = lab::verify_noise_theorem(&proposal, &model, k, 20_000, &mut rng)?;
        println!(
            "K={k:<2} pass={} total mass {:.4} +- {:.4}",
            r.pass, r.mass_estimate, r.mass_std_error
        );
    }

    let counts: Vec<u64> = (1..=32).map(|r| 10_000 / r).collect();
    let scores: Vec<f64> = counts.iter().map(|&c| 0.5 * (c as f64).ln()).collect();
    for s in lab::estimator_sweep(&scores, &counts, &[0.0, 0.5, 1.0], 8, 4_000, &mut rng)? {
        println!(
            "alpha {:.1}: |bias| {:.4}  top-word bias {:+.4}  variance {:.5}",
            s.alpha, s.bias_l1, s.bias_top, s.variance
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

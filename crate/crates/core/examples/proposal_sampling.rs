//! The power-raised unigram proposal and target-excluding sample sets.

use blackout::sampler::ProposalDistribution;
use blackout::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<()> {
    let counts = [500u64, 120, 60, 20, 5, 1];
    for alpha in [0.0, 0.4, 1.0] {
        let q = ProposalDistribution::from_counts(&counts, alpha)?;
        let shown: Vec<String> = q.probs().iter().map(|p| format!("{p:.4}")).collect();
        println!("alpha {alpha:.1}: {}", shown.join(" "));
    }

    let q = ProposalDistribution::from_counts(&counts, 0.4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = q.draw(5, 0, &mut rng)?;
    println!("target {} samples {:?} weights {:?}", set.target, set.samples, set.weights);

    // empirical frequencies from the alias table
    let draws = 200_000;
    let mut freq = vec![0usize; counts.len()];
    for _ in 0..draws {
        freq[q.sample(&mut rng)] += 1;
    }
    for (w, f) in freq.iter().enumerate() {
        println!("word {w}: expected {:.4} observed {:.4}", q.prob(w), *f as f64 / draws as f64);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

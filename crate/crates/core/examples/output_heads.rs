//! The four output heads on one score slate.

use blackout::heads::{
    blackout_head, exact_ml_head, is_ml_head, nce_head, nce_posterior, slate_noise_density, weighted_softmax,
    Diagnostics, NceConfig, ScoreSlate,
};
use blackout::Result;

pub fn run_example() -> Result<()> {
    // target first, then three samples; weights are 1/Q
    let slate = ScoreSlate::new(vec![2.0, 0.5, -1.0, 0.0], vec![4.0, 2.0, 2.0, 4.0])?;
    let diag = Diagnostics::default();

    println!("weighted softmax: {:?}", weighted_softmax(&slate));
    let b = blackout_head(&slate, &diag);
    println!("blackout  loss {:.6} grads {:?}", b.loss, b.grads);
    let i = is_ml_head(&slate);
    println!("is-ml     loss {:.6} grads {:?}", i.loss, i.grads);
    let n = nce_head(&slate, &NceConfig::default(), &diag)?;
    println!("nce       loss {:.6} grads {:?}", n.loss, n.grads);
    let e = exact_ml_head(&[2.0, 0.5, -1.0, 0.0, 1.5], 0);
    println!("exact     loss {:.6} grads {:?}", e.loss, e.grads);

    // NCE with the sample-based noise density gives back the weighted softmax
    let log_z = 0.3;
    let post = nce_posterior(
        (slate.target_score() - log_z).exp(),
        slate_noise_density(&slate, log_z),
        slate.k(),
    );
    println!("posterior {post:.15} vs p~ {:.15}", weighted_softmax(&slate)[0]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

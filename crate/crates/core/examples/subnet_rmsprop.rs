//! Update probabilities for lazy RMSProp, and lazy against dense training.

use blackout::corpus;
use blackout::optim::{update_probs_from, OptimMode};
use blackout::sampler::ProposalDistribution;
use blackout::synthetic::{self, SyntheticSpec};
use blackout::{BatchConfig, HeadKind, Result, TrainConfig};

pub fn run_example() -> Result<()> {
    let data = synthetic::generate(&SyntheticSpec::tiny(5))?;
    let vocab = corpus::build_vocab(&data.train, None)?;
    let train = corpus::encode(&data.train, &vocab);
    let valid = corpus::encode(&data.valid, &vocab);

    let q = ProposalDistribution::build(&vocab, 0.4)?;
    let probs = update_probs_from(&vocab.unigram(), q.probs(), BatchConfig::new(4, 8)?, 10);
    for id in [1u32, 3, 50, 150] {
        let word = vocab.word(id).unwrap_or("?");
        let (pi, po) = (probs.input[id as usize], probs.output[id as usize]);
        println!("{word:<6} input p_u {pi:.4} output p_u {po:.4} decay {:.4}", 0.9f64.powf(1.0 / po));
    }

    for mode in [OptimMode::Dense, OptimMode::LazySubnet, OptimMode::LazyExactLapse] {
        let cfg = TrainConfig {
            head: HeadKind::BlackOut,
            k: 10,
            hidden: 12,
            batch_size: 4,
            bptt_len: 8,
            epochs: 2,
            optim_mode: mode,
            ..TrainConfig::default()
        };
        let out = blackout::train(cfg, &vocab, &train, &valid)?;
        println!("{:<10} best valid ppl {:.3}", mode.name(), out.best_valid);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

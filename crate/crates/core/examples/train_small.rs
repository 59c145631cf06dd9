//! Trains a small model with the BlackOut head on a synthetic corpus,
//! checkpoints it and reports test perplexity.

use blackout::corpus;
use blackout::eval;
use blackout::synthetic::{self, SyntheticSpec};
use blackout::{Checkpoint, HeadKind, Result, TrainConfig, Trainer};

pub fn run_example() -> Result<()> {
    let data = synthetic::generate(&SyntheticSpec::tiny(3))?;
    let vocab = corpus::build_vocab(&data.train, None)?;
    let train = corpus::encode(&data.train, &vocab);
    let valid = corpus::encode(&data.valid, &vocab);
    let test = corpus::encode(&data.test, &vocab);

    let cfg = TrainConfig {
        head: HeadKind::BlackOut,
        k: 10,
        alpha: 0.4,
        hidden: 16,
        batch_size: 4,
        bptt_len: 8,
        epochs: 3,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    print!("{}", cfg.to_kv_text());
    let outcome = Trainer::new(cfg.clone(), &vocab, &train, &valid)?.run(|m| {
        println!(
            "epoch {} train loss {:.4} valid ppl {:?}",
            m.epoch, m.train_loss, m.valid_perplexity
        );
    })?;

    let dir = std::env::temp_dir().join("blackout-train-small");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("best.ckpt");
    Checkpoint::new(outcome.best).save(&path)?;
    let restored = Checkpoint::load_expecting(&path, vocab.len(), Some(cfg.hidden))?;
    let report = eval::perplexity(&restored.params, &test, vocab.specials(), cfg.hidden_policy)?;
    println!("test perplexity {:.2} over {} tokens", report.perplexity, report.tokens);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

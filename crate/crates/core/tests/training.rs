mod common;

use blackout::corpus::batch_blocks;
use blackout::rnn::ModelParams;
use blackout::{Checkpoint, Error, HeadKind, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(head: HeadKind) -> TrainConfig {
    TrainConfig {
        head,
        k: 8,
        batch_size: 4,
        bptt_len: 6,
        hidden: 8,
        epochs: 3,
        learning_rate: 0.01,
        seed: 42,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let c = common::tiny_corpus(1);
    for head in [HeadKind::BlackOut, HeadKind::Nce, HeadKind::IsMl, HeadKind::Exact] {
        let run = || {
            Trainer::new(config(head), &c.vocab, &c.train, &c.valid)
                .unwrap()
                .run(|_| {})
                .unwrap()
        };
        let (a, b) = (run(), run());
        let strip = |m: &[blackout::MetricsRecord]| m.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
        assert_eq!(strip(&a.metrics), strip(&b.metrics), "{head}");
        assert_eq!(a.last.to_bytes(), b.last.to_bytes(), "{head}");
    }
}

#[test]
fn resume_continues_the_run_exactly() {
    let c = common::tiny_corpus(2);
    let full = Trainer::new(config(HeadKind::BlackOut), &c.vocab, &c.train, &c.valid)
        .unwrap()
        .run(|_| {})
        .unwrap();

    let first = Trainer::new(
        TrainConfig { epochs: 1, ..config(HeadKind::BlackOut) },
        &c.vocab,
        &c.train,
        &c.valid,
    )
    .unwrap()
    .run(|_| {})
    .unwrap();
    let restored = Checkpoint::read_from(&first.last.to_bytes()[..]).unwrap();
    let rest = Trainer::resume(config(HeadKind::BlackOut), &c.vocab, &c.train, &c.valid, restored)
        .unwrap()
        .run(|_| {})
        .unwrap();

    let mut stitched: Vec<_> = first.metrics.iter().map(|r| r.without_timing()).collect();
    stitched.extend(rest.metrics.iter().map(|r| r.without_timing()));
    let uninterrupted: Vec<_> = full.metrics.iter().map(|r| r.without_timing()).collect();
    assert_eq!(stitched, uninterrupted);
    assert_eq!(rest.last.to_bytes(), full.last.to_bytes());
}

#[test]
fn zero_epochs_checkpoints_the_initial_model() {
    let c = common::tiny_corpus(3);
    let cfg = TrainConfig { epochs: 0, ..config(HeadKind::BlackOut) };
    let out = Trainer::new(cfg.clone(), &c.vocab, &c.train, &c.valid).unwrap().run(|_| {}).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = ModelParams::<f32>::random(c.vocab.len(), cfg.hidden, cfg.init_scale, &mut rng);
    assert_eq!(out.best, init);
    assert_eq!(out.last.params, init);
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.last.optimizer.unwrap().global_step, 0);
}

#[test]
fn untouched_rows_are_never_written() {
    let c = common::tiny_corpus(4);
    for head in [HeadKind::BlackOut, HeadKind::Nce, HeadKind::IsMl] {
        let cfg = config(head);
        let mut t = Trainer::new(cfg.clone(), &c.vocab, &c.train, &c.valid).unwrap();
        t.run_epoch().unwrap();
        let h = cfg.hidden;
        let mut carried = vec![vec![0.0; h]; cfg.batch_size];
        for block in batch_blocks(&c.train, cfg.batch().unwrap(), c.vocab.specials()).unwrap().take(5) {
            let before = t.params().clone();
            let opt_before = t.optimizer().clone();
            t.train_block(&block, &mut carried).unwrap();
            let (rows_in, rows_out) = t.last_touched();
            let after = t.params();
            for row in 0..c.vocab.len() {
                let r = row * h..(row + 1) * h;
                if !rows_in.contains(&(row as u32)) {
                    assert_eq!(before.w_in[r.clone()], after.w_in[r.clone()]);
                    assert_eq!(opt_before.v_in[r.clone()], t.optimizer().v_in[r.clone()]);
                }
                if !rows_out.contains(&(row as u32)) {
                    assert_eq!(before.w_out[r.clone()], after.w_out[r.clone()]);
                    assert_eq!(opt_before.v_out[r.clone()], t.optimizer().v_out[r]);
                }
            }
            assert!(rows_out.len() <= block.inputs.len() * (cfg.k + 1));
        }
    }
}

#[test]
fn sampled_heads_never_score_the_full_vocabulary() {
    let c = common::tiny_corpus(5);
    for head in [HeadKind::BlackOut, HeadKind::Nce, HeadKind::IsMl] {
        let out = Trainer::new(config(head), &c.vocab, &c.train, &c.valid).unwrap().run(|_| {}).unwrap();
        assert!(out.metrics.iter().all(|m| m.full_score_vectors == 0), "{head}");
    }
    let out = Trainer::new(config(HeadKind::Exact), &c.vocab, &c.train, &c.valid).unwrap().run(|_| {}).unwrap();
    let last = out.metrics.last().unwrap();
    assert_eq!(last.full_score_vectors, last.tokens_seen);
}

#[test]
fn exact_training_improves_on_the_initial_model() {
    let c = common::tiny_corpus(6);
    let cfg = TrainConfig { learning_rate: 0.002, ..config(HeadKind::Exact) };
    let out = Trainer::new(cfg, &c.vocab, &c.train, &c.valid).unwrap().run(|_| {}).unwrap();
    let ppl: Vec<f64> = out.metrics.iter().map(|m| m.valid_perplexity.unwrap()).collect();
    assert!(ppl[1..].iter().all(|&p| p < ppl[0]), "{ppl:?}");
    let seen: Vec<u64> = out.metrics.iter().map(|m| m.tokens_seen).collect();
    assert!(seen.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn resume_rejects_a_different_vocabulary_size() {
    let c = common::tiny_corpus(7);
    let out = Trainer::new(TrainConfig { epochs: 1, ..config(HeadKind::BlackOut) }, &c.vocab, &c.train, &c.valid)
        .unwrap()
        .run(|_| {})
        .unwrap();
    let other = blackout::synthetic::zipf_vocabulary(c.vocab.len() + 5, 1.0).unwrap();
    let err = Trainer::resume(config(HeadKind::BlackOut), &other, &c.train, &c.valid, out.last);
    assert!(matches!(err, Err(Error::VocabSizeMismatch { .. })));
}

#[test]
fn too_short_corpus_is_rejected() {
    let c = common::tiny_corpus(9);
    let cfg = TrainConfig { batch_size: 64, bptt_len: 100, ..config(HeadKind::BlackOut) };
    assert!(matches!(
        Trainer::new(cfg, &c.vocab, &c.train, &c.valid),
        Err(Error::InsufficientTokens { .. })
    ));
}

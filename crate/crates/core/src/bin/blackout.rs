use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc::sync_channel;
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use blackout::corpus::{self, Vocabulary};
use blackout::eval;
use blackout::lab;
use blackout::synthetic::{self, SyntheticSpec};
use blackout::{build_vocab, Checkpoint, Error, HiddenPolicy, MetricsRecord, Result, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "blackout", version, about = "RNN language models with sampled output layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a tokenized corpus.
    Vocab {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        max_vocab: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints, metrics.jsonl and config.echo to --out.
    Train(TrainArgs),
    /// Exact-softmax perplexity as one JSON object.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Include per-sentence log-probabilities.
        #[arg(long)]
        sentences: bool,
    },
    /// Per-sentence natural-log probabilities, one per line.
    Score {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Monte-Carlo estimator checks on a small random instance.
    Lab(LabArgs),
    /// Write a deterministic synthetic corpus (train.txt, valid.txt, test.txt).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2016)]
        seed: u64,
        /// Small corpus for quick experiments.
        #[arg(long)]
        tiny: bool,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "reset")]
    hidden_policy: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    /// Existing vocabulary; built from --train when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// key=value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint that carries optimizer and trainer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigFlags,
}

#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    z: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    bptt_len: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    max_vocab: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    decay: Option<String>,
    #[arg(long)]
    damping: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    valid_every: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    hidden_policy: Option<String>,
    #[arg(long)]
    optim_mode: Option<String>,
    #[arg(long)]
    init_scale: Option<String>,
    #[arg(long)]
    share_samples: Option<String>,
    #[arg(long)]
    min_improvement: Option<String>,
}

impl ConfigFlags {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        let pairs = [
            ("head", &self.head),
            ("k", &self.k),
            ("alpha", &self.alpha),
            ("z", &self.z),
            ("batch_size", &self.batch_size),
            ("bptt_len", &self.bptt_len),
            ("hidden", &self.hidden),
            ("max_vocab", &self.max_vocab),
            ("learning_rate", &self.learning_rate),
            ("decay", &self.decay),
            ("damping", &self.damping),
            ("clip", &self.clip),
            ("epochs", &self.epochs),
            ("valid_every", &self.valid_every),
            ("seed", &self.seed),
            ("hidden_policy", &self.hidden_policy),
            ("optim_mode", &self.optim_mode),
            ("init_scale", &self.init_scale),
            ("share_samples", &self.share_samples),
            ("min_improvement", &self.min_improvement),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LabMode {
    Noise,
    Sweep,
}

#[derive(Args)]
struct LabArgs {
    #[arg(long, value_enum, default_value = "noise")]
    mode: LabMode,
    #[arg(long, default_value_t = 8)]
    vocab_size: usize,
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "1,4,16")]
    k: String,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated proposal exponents for the sweep.
    #[arg(long, default_value = "0,0.5,1")]
    alphas: String,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} entry '{}'", s.trim())))
        })
        .collect()
}

fn policy(name: &str) -> Result<HiddenPolicy> {
    let mut cfg = TrainConfig::default();
    cfg.set("hidden_policy", name)?;
    Ok(cfg.hidden_policy)
}

fn load_ids(path: &Path, vocab: &Vocabulary) -> Result<Vec<u32>> {
    Ok(corpus::encode(&corpus::load_sentences(path)?, vocab))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_kv_text(&fs::read_to_string(path)?)?;
    }
    args.overrides.apply(&mut cfg)?;
    cfg.validate()?;

    let train_sentences = corpus::load_sentences(&args.train)?;
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::load(path)?,
        None => build_vocab(&train_sentences, cfg.max_vocab)?,
    };
    let train_ids = corpus::encode(&train_sentences, &vocab);
    let valid_ids = load_ids(&args.valid, &vocab)?;

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("config.echo"), cfg.to_kv_text())?;
    vocab.save(args.out.join("vocab.tsv"))?;

    let (trainer, previous_best) = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let best = ckpt.trainer.as_ref().and_then(|t| t.best_valid);
            (Trainer::resume(cfg, &vocab, &train_ids, &valid_ids, ckpt)?, best)
        }
        None => (Trainer::new(cfg, &vocab, &train_ids, &valid_ids)?, None),
    };

    let metrics_file = fs::OpenOptions::new()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(args.out.join("metrics.jsonl"))?;
    let (tx, rx) = sync_channel::<MetricsRecord>(64);
    let writer = thread::spawn(move || -> std::io::Result<()> {
        let mut out = BufWriter::new(metrics_file);
        for record in rx {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    });

    let result = trainer.run(|record| {
        eprintln!(
            "epoch {} loss {:.4} valid ppl {} lr {}",
            record.epoch,
            record.train_loss,
            record.valid_perplexity.map_or("-".to_string(), |p| format!("{p:.3}")),
            record.learning_rate
        );
        let _ = tx.send(record.clone());
    });
    drop(tx);
    writer.join().expect("metrics writer panicked")?;
    let outcome = result?;

    outcome.last.save(args.out.join("last.ckpt"))?;
    if previous_best.map_or(true, |p| outcome.best_valid < p) {
        Checkpoint::new(outcome.best).save(args.out.join("best.ckpt"))?;
    }
    println!("{}", json!({ "best_valid_perplexity": outcome.best_valid }));
    Ok(())
}

fn load_model(args: &ModelArgs) -> Result<(Checkpoint, Vocabulary, Vec<u32>, HiddenPolicy)> {
    let vocab = Vocabulary::load(&args.vocab)?;
    let ckpt = Checkpoint::load_expecting(&args.model, vocab.len(), None)?;
    let ids = load_ids(&args.data, &vocab)?;
    Ok((ckpt, vocab, ids, policy(&args.hidden_policy)?))
}

fn cmd_lab(args: LabArgs) -> Result<serde_json::Value> {
    let ks: Vec<usize> = parse_list(&args.k, "k")?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let v = args.vocab_size;
    match args.mode {
        LabMode::Noise => {
            let proposal = normalized((0..v).map(|_| rng.gen_range(0.05..1.0)).collect());
            let model = normalized((0..v).map(|_| rng.gen_range(0.05..1.0)).collect());
            let reports = ks
                .iter()
                .map(|&k| lab::verify_noise_theorem(&proposal, &model, k, args.draws, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let pass = reports.iter().all(|r| r.pass);
            Ok(json!({ "mode": "noise", "pass": pass, "reports": reports }))
        }
        LabMode::Sweep => {
            let alphas: Vec<f64> = parse_list(&args.alphas, "alpha")?;
            let counts: Vec<u64> = (1..=v).map(|r| (10_000.0 / r as f64).ceil() as u64).collect();
            // a model flatter than the unigram
            let scores: Vec<f64> = counts.iter().map(|&c| 0.5 * (c as f64).ln()).collect();
            let stats = ks
                .iter()
                .map(|&k| lab::estimator_sweep(&scores, &counts, &alphas, k, args.draws, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(json!({ "mode": "sweep", "stats": stats }))
        }
    }
}

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Vocab { train, max_vocab, out } => {
            let vocab = build_vocab(&corpus::load_sentences(train)?, max_vocab)?;
            vocab.save(out)?;
        }
        Command::Train(args) => cmd_train(args)?,
        Command::Eval { model, sentences } => {
            let (ckpt, vocab, ids, policy) = load_model(&model)?;
            let report = if sentences {
                eval::perplexity_with_sentences(&ckpt.params, &ids, vocab.specials(), policy)?
            } else {
                eval::perplexity(&ckpt.params, &ids, vocab.specials(), policy)?
            };
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
        Command::Score { model } => {
            let (ckpt, vocab, ids, policy) = load_model(&model)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for lp in eval::score_sentences(&ckpt.params, &ids, vocab.specials(), policy)? {
                writeln!(out, "{lp}")?;
            }
        }
        Command::Lab(args) => println!("{}", cmd_lab(args)?),
        Command::Synth { out, seed, tiny } => {
            let spec = if tiny {
                SyntheticSpec::tiny(seed)
            } else {
                SyntheticSpec { seed, ..SyntheticSpec::default() }
            };
            let corpus = synthetic::generate(&spec)?;
            fs::create_dir_all(&out)?;
            for (name, split) in [("train.txt", &corpus.train), ("valid.txt", &corpus.valid), ("test.txt", &corpus.test)] {
                corpus::write_sentences(split, BufWriter::new(fs::File::create(out.join(name))?))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

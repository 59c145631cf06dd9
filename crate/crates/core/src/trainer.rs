//! Epoch orchestration: sampling, head evaluation, BPTT, clipping and
//! RMSProp, with exact-softmax validation between epochs.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainerState};
use crate::corpus::{batch_blocks, BatchConfig, BpttBlock, Specials, Vocabulary};
use crate::error::{Error, Result};
use crate::eval;
use crate::heads::{
    blackout_head, exact_ml_head, is_ml_head, nce_head, DiagnosticCounts, Diagnostics, HeadKind,
    NceConfig, ScoreSlate,
};
use crate::optim::{self, update_probs_with_draws, OptimConfig, OptimMode, OptimizerState, UpdateProbs};
use crate::rnn::{
    bptt_backward_into, forward, full_scores_into, ForwardTape, Gradients, HiddenPolicy,
    ModelParams, OutputGrads, Real,
};
use crate::sampler::{ProposalDistribution, SampleSet};

/// Everything that defines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub head: HeadKind,
    pub k: usize,
    pub alpha: f64,
    pub z: f64,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub hidden: usize,
    pub max_vocab: Option<usize>,
    pub learning_rate: f64,
    pub decay: f64,
    pub damping: f64,
    pub clip: f64,
    pub epochs: usize,
    pub valid_every: usize,
    pub seed: u64,
    pub hidden_policy: HiddenPolicy,
    pub optim_mode: OptimMode,
    pub init_scale: f64,
    /// Draw one sample set per block instead of per position.
    pub share_samples: bool,
    /// Relative validation improvement below which the learning rate halves.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            head: HeadKind::BlackOut,
            k: 50,
            alpha: 0.4,
            z: 1.0,
            batch_size: 8,
            bptt_len: 10,
            hidden: 16,
            max_vocab: None,
            learning_rate: 0.01,
            decay: 0.9,
            damping: 1e-6,
            clip: 5.0,
            epochs: 10,
            valid_every: 1,
            seed: 1,
            hidden_policy: HiddenPolicy::ResetAtSentence,
            optim_mode: OptimMode::LazySubnet,
            init_scale: 0.1,
            share_samples: false,
            min_improvement: 0.01,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{}: cannot parse '{}': {}", key, value, e)))
}

impl TrainConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.learning_rate,
            decay: self.decay,
            damping: self.damping,
            mode: self.optim_mode,
        }
    }

    pub fn batch(&self) -> Result<BatchConfig> {
        BatchConfig::new(self.batch_size, self.bptt_len)
    }

    pub fn nce(&self) -> Result<NceConfig> {
        NceConfig::with_z(self.z)
    }

    pub fn validate(&self) -> Result<()> {
        self.batch()?;
        self.optim().validate()?;
        if self.head.is_sampled() {
            if self.k == 0 {
                return Err(Error::Config("sampled heads need k >= 1".into()));
            }
            if !(0.0..=1.0).contains(&self.alpha) {
                return Err(Error::AlphaOutOfRange(self.alpha));
            }
        }
        if self.head == HeadKind::Nce {
            self.nce()?;
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("clip threshold must be positive".into()));
        }
        if self.valid_every == 0 {
            return Err(Error::Config("valid_every must be positive".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        Ok(())
    }

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "head" => self.head = value.parse()?,
            "k" => self.k = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "z" => self.z = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "bptt_len" => self.bptt_len = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "max_vocab" => {
                self.max_vocab = match value {
                    "" | "none" | "unlimited" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "damping" => self.damping = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "valid_every" => self.valid_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden_policy" => {
                self.hidden_policy = match value {
                    "reset" => HiddenPolicy::ResetAtSentence,
                    "continuous" => HiddenPolicy::Continuous,
                    other => {
                        return Err(Error::Config(format!("unknown hidden policy '{}'", other)))
                    }
                }
            }
            "optim_mode" => self.optim_mode = value.parse()?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "share_samples" => self.share_samples = parse(key, value)?,
            "min_improvement" => self.min_improvement = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{}'", other))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    /// Resolved configuration in the same `key = value` format.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let policy = match self.hidden_policy {
            HiddenPolicy::ResetAtSentence => "reset",
            HiddenPolicy::Continuous => "continuous",
        };
        let max_vocab = self.max_vocab.map_or("none".to_string(), |m| m.to_string());
        let pairs: [(&str, String); 20] = [
            ("head", self.head.to_string()),
            ("k", self.k.to_string()),
            ("alpha", self.alpha.to_string()),
            ("z", self.z.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("bptt_len", self.bptt_len.to_string()),
            ("hidden", self.hidden.to_string()),
            ("max_vocab", max_vocab),
            ("learning_rate", self.learning_rate.to_string()),
            ("decay", self.decay.to_string()),
            ("damping", self.damping.to_string()),
            ("clip", self.clip.to_string()),
            ("epochs", self.epochs.to_string()),
            ("valid_every", self.valid_every.to_string()),
            ("seed", self.seed.to_string()),
            ("hidden_policy", policy.to_string()),
            ("optim_mode", self.optim_mode.name().to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("share_samples", self.share_samples.to_string()),
            ("min_improvement", self.min_improvement.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{} = {}", k, v);
        }
        s
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub tokens_seen: u64,
    /// Mean negated head objective per scored token.
    pub train_loss: f64,
    pub valid_perplexity: Option<f64>,
    pub learning_rate: f64,
    pub wall_seconds: f64,
    pub blackout_clamps: u64,
    pub nce_saturations: u64,
    pub full_score_vectors: u64,
}

impl MetricsRecord {
    /// The record with timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        MetricsRecord {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Proposal used by the sampled heads during training.
///
/// Zero counts are raised to one. A word outside the proposal support is
/// never a negative, so its output row would keep its initial score while
/// every trained score drifts down, and it would soak up probability mass
/// under the full softmax used for evaluation.
pub fn training_proposal(vocab: &Vocabulary, alpha: f64) -> Result<ProposalDistribution> {
    let counts: Vec<u64> = vocab.counts().iter().map(|&c| c.max(1)).collect();
    ProposalDistribution::from_counts(&counts, alpha)
}

/// Per-position sample sets for one block, lane-major. Unscored positions
/// hold an empty set.
pub fn draw_block_samples<G: rand::Rng>(
    block: &BpttBlock,
    proposal: &ProposalDistribution,
    k: usize,
    share: bool,
    rng: &mut G,
    out: &mut Vec<SampleSet>,
) -> Result<()> {
    out.resize_with(block.inputs.len(), SampleSet::default);
    if share {
        let shared: Vec<u32> = (0..k).map(|_| proposal.sample(rng) as u32).collect();
        for (idx, set) in out.iter_mut().enumerate() {
            set.samples.clear();
            set.weights.clear();
            if !block.scored[idx] {
                continue;
            }
            let target = block.targets[idx];
            set.target = target;
            set.weights.push(1.0 / proposal.prob(target as usize));
            for &w in shared.iter().filter(|&&w| w != target) {
                set.samples.push(w);
                set.weights.push(1.0 / proposal.prob(w as usize));
            }
        }
    } else {
        for (idx, set) in out.iter_mut().enumerate() {
            if block.scored[idx] {
                proposal.draw_into(k, block.targets[idx] as usize, rng, set)?;
            } else {
                set.samples.clear();
                set.weights.clear();
            }
        }
    }
    Ok(())
}

/// Runs the block forward, evaluates the head at every scored position and
/// fills `out` with `∂J/∂u`. Returns the summed objective and the tape.
#[allow(clippy::too_many_arguments)]
pub fn block_objective<R: Real>(
    params: &ModelParams<R>,
    block: &BpttBlock,
    carried: &[Vec<f64>],
    policy: HiddenPolicy,
    head: HeadKind,
    nce: &NceConfig,
    samples: &[SampleSet],
    diag: &Diagnostics,
    out: &mut OutputGrads,
) -> Result<(f64, ForwardTape)> {
    let tape = forward(params, block, carried, policy)?;
    if head.is_sampled() && samples.len() != block.inputs.len() {
        return Err(Error::Shape("one sample set per block position required".into()));
    }
    out.clear();
    let mut loss = 0.0;
    let mut u = Vec::new();
    let mut slate = ScoreSlate::default();
    for lane in 0..block.lanes {
        for t in 0..block.width {
            let idx = block.index(lane, t);
            if !block.scored[idx] {
                out.push_position(std::iter::empty());
                continue;
            }
            let s = tape.output_state(lane, t);
            let target = block.targets[idx];
            if head == HeadKind::Exact {
                Diagnostics::bump(&diag.full_score_vectors);
                full_scores_into(s, params, &mut u);
                let o = exact_ml_head(&u, target as usize);
                loss += o.loss;
                out.push_position(o.grads.into_iter().enumerate().map(|(r, g)| (r as u32, g)));
                continue;
            }
            let set = &samples[idx];
            if set.target != target || set.weights.len() != set.samples.len() + 1 {
                return Err(Error::Shape(format!("sample set at position {} does not match its target", idx)));
            }
            slate.scores.clear();
            slate
                .scores
                .extend(set.rows().map(|r| dot_row(params, r as usize, s)));
            slate.weights.clear();
            slate.weights.extend_from_slice(&set.weights);
            let o = match head {
                HeadKind::BlackOut => blackout_head(&slate, diag),
                HeadKind::IsMl => is_ml_head(&slate),
                HeadKind::Nce => nce_head(&slate, nce, diag)?,
                HeadKind::Exact => unreachable!(),
            };
            loss += o.loss;
            out.push_position(set.rows().zip(o.grads));
        }
    }
    Ok((loss, tape))
}

#[inline]
fn dot_row<R: Real>(params: &ModelParams<R>, row: usize, s: &[f64]) -> f64 {
    params
        .out_row(row)
        .iter()
        .zip(s)
        .map(|(&w, &x)| w.to_f64() * x)
        .sum()
}

/// Final model of a run plus its metrics.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation perplexity seen.
    pub best: ModelParams<f32>,
    pub best_valid: f64,
    /// State after the last epoch, resumable.
    pub last: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
}

/// Stateful training driver over pre-encoded streams.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    specials: Specials,
    unigram: Vec<f64>,
    proposal: Option<ProposalDistribution>,
    train: &'a [u32],
    valid: &'a [u32],
    params: ModelParams<f32>,
    optim: OptimizerState,
    state: TrainerState,
    rng: ChaCha8Rng,
    diag: Diagnostics,
    best: Option<ModelParams<f32>>,
    grads: Gradients,
    out: OutputGrads,
    samples: Vec<SampleSet>,
}

const SAMPLER_STREAM: u64 = 1;

impl<'a> Trainer<'a> {
    /// Fresh run: initializes weights from `cfg.seed` and scores the
    /// initial model on `valid`.
    pub fn new(cfg: TrainConfig, vocab: &Vocabulary, train: &'a [u32], valid: &'a [u32]) -> Result<Self> {
        cfg.validate()?;
        let v = vocab.len();
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = ModelParams::random(v, cfg.hidden, cfg.init_scale, &mut init_rng);
        let initial_valid = eval::perplexity(&params, valid, vocab.specials(), cfg.hidden_policy)?.perplexity;
        let state = TrainerState {
            epoch: 0,
            tokens_seen: 0,
            learning_rate: cfg.learning_rate,
            best_valid: Some(initial_valid),
            initial_valid,
            seed: cfg.seed,
            rng_word_pos: 0,
            diagnostics: DiagnosticCounts::default(),
        };
        let optim = OptimizerState::new(v, cfg.hidden);
        Self::assemble(cfg, vocab, train, valid, params, optim, state, true)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        cfg: TrainConfig,
        vocab: &Vocabulary,
        train: &'a [u32],
        valid: &'a [u32],
        ckpt: Checkpoint,
    ) -> Result<Self> {
        cfg.validate()?;
        ckpt.check_dims(vocab.len(), Some(cfg.hidden))?;
        let state = ckpt
            .trainer
            .ok_or_else(|| Error::Config("checkpoint has no trainer state".into()))?;
        let optim = ckpt
            .optimizer
            .ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
        Self::assemble(cfg, vocab, train, valid, ckpt.params, optim, state, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: TrainConfig,
        vocab: &Vocabulary,
        train: &'a [u32],
        valid: &'a [u32],
        params: ModelParams<f32>,
        optim: OptimizerState,
        state: TrainerState,
        fresh: bool,
    ) -> Result<Self> {
        let v = vocab.len();
        let proposal = if cfg.head.is_sampled() {
            Some(training_proposal(vocab, cfg.alpha)?)
        } else {
            None
        };
        // fail early on unusable geometry
        batch_blocks(train, cfg.batch()?, vocab.specials())?;
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_stream(SAMPLER_STREAM);
        rng.set_word_pos(state.rng_word_pos);
        let diag = Diagnostics::default();
        diag.restore(state.diagnostics);
        let best = fresh.then(|| params.clone());
        Ok(Trainer {
            specials: vocab.specials(),
            unigram: vocab.unigram(),
            proposal,
            train,
            valid,
            optim,
            state,
            rng,
            diag,
            best,
            grads: Gradients::new(v, cfg.hidden),
            out: OutputGrads::new(),
            samples: Vec::new(),
            params,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optim
    }

    pub fn epoch(&self) -> u64 {
        self.state.epoch
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.cfg.epochs as u64
    }

    pub fn diagnostics(&self) -> DiagnosticCounts {
        self.diag.snapshot()
    }

    pub fn proposal(&self) -> Option<&ProposalDistribution> {
        self.proposal.as_ref()
    }

    /// Record describing the untrained model.
    pub fn initial_record(&self) -> MetricsRecord {
        MetricsRecord {
            epoch: 0,
            tokens_seen: 0,
            train_loss: 0.0,
            valid_perplexity: Some(self.state.initial_valid),
            learning_rate: self.cfg.learning_rate,
            wall_seconds: 0.0,
            blackout_clamps: 0,
            nce_saturations: 0,
            full_score_vectors: 0,
        }
    }

    /// `p_u` per word for the current head and batch geometry.
    pub fn update_probs(&self) -> Result<UpdateProbs> {
        let batch = self.cfg.batch()?;
        Ok(match &self.proposal {
            Some(q) => {
                // one set per scored position unless shared across the block
                let draws = if self.cfg.share_samples {
                    self.cfg.k
                } else {
                    self.cfg.k * batch.batch_size * batch.bptt_len
                };
                update_probs_with_draws(&self.unigram, q.probs(), batch, draws as f64)
            }
            None => {
                // the exact head touches every output row on every block
                let mut up = update_probs_with_draws(&self.unigram, &self.unigram, batch, 0.0);
                up.output.iter_mut().for_each(|p| *p = 1.0);
                up
            }
        })
    }

    /// Runs one training block and returns `(objective, scored tokens)`.
    pub fn train_block(&mut self, block: &BpttBlock, carried: &mut Vec<Vec<f64>>) -> Result<(f64, usize)> {
        if let Some(q) = &self.proposal {
            draw_block_samples(block, q, self.cfg.k, self.cfg.share_samples, &mut self.rng, &mut self.samples)?;
        }
        let nce = if self.cfg.head == HeadKind::Nce {
            self.cfg.nce()?
        } else {
            NceConfig::default()
        };
        let (loss, tape) = block_objective(
            &self.params,
            block,
            carried,
            self.cfg.hidden_policy,
            self.cfg.head,
            &nce,
            &self.samples,
            &self.diag,
            &mut self.out,
        )?;
        bptt_backward_into(&tape, &self.out, &self.params, &mut self.grads)?;
        self.grads.clip_global_norm(self.cfg.clip);
        let mut ocfg = self.cfg.optim();
        ocfg.learning_rate = self.state.learning_rate;
        optim::step(&mut self.params, &self.grads, &mut self.optim, &ocfg)?;
        *carried = tape.final_states();
        Ok((loss, block.scored_count()))
    }

    /// Touched rows of the last block's gradient: `(W_in rows, W_out rows)`.
    pub fn last_touched(&self) -> (&[u32], &[u32]) {
        (self.grads.w_in.rows(), self.grads.w_out.rows())
    }

    /// One pass over the training stream, followed by validation when due.
    pub fn run_epoch(&mut self) -> Result<MetricsRecord> {
        let started = Instant::now();
        let probs = self.update_probs()?;
        self.optim.set_update_probs(probs, self.cfg.decay);

        let batch = self.cfg.batch()?;
        let mut carried = vec![vec![0.0; self.cfg.hidden]; batch.batch_size];
        let mut loss_sum = 0.0;
        let mut scored = 0usize;
        for block in batch_blocks(self.train, batch, self.specials)? {
            let (l, n) = self.train_block(&block, &mut carried)?;
            loss_sum += l;
            scored += n;
        }
        self.state.epoch += 1;
        self.state.tokens_seen += scored as u64;

        let due = self.state.epoch % self.cfg.valid_every as u64 == 0 || self.finished();
        let valid_perplexity = if due {
            let ppl = eval::perplexity(&self.params, self.valid, self.specials, self.cfg.hidden_policy)?.perplexity;
            if !ppl.is_finite() || ppl > 10.0 * self.state.initial_valid {
                return Err(Error::Diverged {
                    epoch: self.state.epoch as usize,
                    perplexity: ppl,
                });
            }
            let best = self.state.best_valid.unwrap_or(f64::INFINITY);
            if ppl > best * (1.0 - self.cfg.min_improvement) {
                self.state.learning_rate *= 0.5;
            }
            if ppl < best {
                self.state.best_valid = Some(ppl);
                self.best = Some(self.params.clone());
            }
            Some(ppl)
        } else {
            None
        };
        self.state.rng_word_pos = self.rng.get_word_pos();
        self.state.diagnostics = self.diag.snapshot();

        let d = self.state.diagnostics;
        Ok(MetricsRecord {
            epoch: self.state.epoch,
            tokens_seen: self.state.tokens_seen,
            train_loss: if scored > 0 { -loss_sum / scored as f64 } else { 0.0 },
            valid_perplexity,
            learning_rate: self.state.learning_rate,
            wall_seconds: started.elapsed().as_secs_f64(),
            blackout_clamps: d.blackout_clamps,
            nce_saturations: d.nce_saturations,
            full_score_vectors: d.full_score_vectors,
        })
    }

    /// Resumable snapshot of the current state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut state = self.state.clone();
        state.rng_word_pos = self.rng.get_word_pos();
        state.diagnostics = self.diag.snapshot();
        Checkpoint {
            params: self.params.clone(),
            optimizer: Some(self.optim.clone()),
            trainer: Some(state),
        }
    }

    pub fn best_valid(&self) -> Option<f64> {
        self.state.best_valid
    }

    /// Best parameters seen by this trainer instance, if any.
    pub fn best_params(&self) -> Option<&ModelParams<f32>> {
        self.best.as_ref()
    }

    /// Trains until `cfg.epochs`, passing every record to `sink` (the
    /// initial record first on a fresh run).
    pub fn run<F: FnMut(&MetricsRecord)>(mut self, mut sink: F) -> Result<TrainOutcome> {
        let mut metrics = Vec::new();
        if self.state.epoch == 0 {
            let r = self.initial_record();
            sink(&r);
            metrics.push(r);
        }
        while !self.finished() {
            let r = self.run_epoch()?;
            sink(&r);
            metrics.push(r);
        }
        let last = self.checkpoint();
        let best = self.best.take().unwrap_or_else(|| self.params.clone());
        Ok(TrainOutcome {
            best,
            best_valid: self.state.best_valid.unwrap_or(f64::NAN),
            last,
            metrics,
        })
    }
}

/// Trains from scratch and returns the best model with its metrics.
pub fn train(cfg: TrainConfig, vocab: &Vocabulary, train: &[u32], valid: &[u32]) -> Result<TrainOutcome> {
    Trainer::new(cfg, vocab, train, valid)?.run(|_| {})
}

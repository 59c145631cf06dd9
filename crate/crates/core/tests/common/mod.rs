#![allow(dead_code)]

use blackout::corpus::{self, BpttBlock, Vocabulary};
use blackout::heads::{Diagnostics, HeadKind, NceConfig};
use blackout::rnn::{bptt_backward_into, Gradients, HiddenPolicy, ModelParams, OutputGrads};
use blackout::sampler::{ProposalDistribution, SampleSet};
use blackout::synthetic::{self, SyntheticSpec};
use blackout::trainer::block_objective;
use rand::Rng;

/// A small randomized block with fixed samples, for finite differences.
pub struct GradInstance {
    pub head: HeadKind,
    pub params: ModelParams<f64>,
    pub block: BpttBlock,
    pub carried: Vec<Vec<f64>>,
    pub samples: Vec<SampleSet>,
    pub nce: NceConfig,
    pub policy: HiddenPolicy,
}

pub fn random_instance<G: Rng>(head: HeadKind, rng: &mut G) -> GradInstance {
    let v = rng.gen_range(5..=8);
    let h = rng.gen_range(2..=4);
    let width = rng.gen_range(1..=4);
    let lanes = rng.gen_range(1..=2);
    let k = rng.gen_range(1..=8);
    let params = ModelParams::<f64>::random(v, h, 0.8, rng);
    let n = lanes * width;
    let inputs: Vec<u32> = (0..n).map(|_| rng.gen_range(0..v as u32)).collect();
    let targets: Vec<u32> = (0..n).map(|_| rng.gen_range(1..v as u32)).collect();
    let lane_reset: Vec<bool> = inputs.iter().map(|&i| i == 0).collect();
    let scored: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.85)).collect();
    let block = BpttBlock {
        lanes,
        width,
        inputs,
        targets,
        lane_reset,
        scored,
    };
    let carried = (0..lanes)
        .map(|_| (0..h).map(|_| rng.gen_range(0.05..0.95)).collect())
        .collect();
    let counts: Vec<u64> = (0..v).map(|_| rng.gen_range(1..50)).collect();
    let proposal = ProposalDistribution::from_counts(&counts, rng.gen_range(0.0..=1.0)).unwrap();
    let samples = (0..n)
        .map(|idx| {
            if block.scored[idx] {
                proposal.draw(k, block.targets[idx] as usize, rng).unwrap()
            } else {
                SampleSet::default()
            }
        })
        .collect();
    let policy = if rng.gen_bool(0.5) {
        HiddenPolicy::ResetAtSentence
    } else {
        HiddenPolicy::Continuous
    };
    GradInstance {
        head,
        params,
        block,
        carried,
        samples,
        nce: NceConfig::with_z(rng.gen_range(0.5..2.0)).unwrap(),
        policy,
    }
}

impl GradInstance {
    pub fn objective(&self, params: &ModelParams<f64>) -> f64 {
        let diag = Diagnostics::default();
        let mut out = OutputGrads::new();
        block_objective(
            params,
            &self.block,
            &self.carried,
            self.policy,
            self.head,
            &self.nce,
            &self.samples,
            &diag,
            &mut out,
        )
        .unwrap()
        .0
    }

    pub fn analytic(&self) -> Gradients {
        let diag = Diagnostics::default();
        let mut out = OutputGrads::new();
        let (_, tape) = block_objective(
            &self.params,
            &self.block,
            &self.carried,
            self.policy,
            self.head,
            &self.nce,
            &self.samples,
            &diag,
            &mut out,
        )
        .unwrap();
        let mut grads = Gradients::new(self.params.vocab_size(), self.params.hidden());
        bptt_backward_into(&tape, &out, &self.params, &mut grads).unwrap();
        grads
    }
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that entries whose true
/// gradient is (near) zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy)]
enum Matrix {
    Input,
    Recurrent,
    Output,
}

fn entry(p: &mut ModelParams<f64>, m: Matrix, idx: usize) -> &mut f64 {
    match m {
        Matrix::Input => &mut p.w_in[idx],
        Matrix::Recurrent => &mut p.w_r[idx],
        Matrix::Output => &mut p.w_out[idx],
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over every entry of `W_in`, `W_r` and `W_out`.
pub fn max_relative_error(inst: &GradInstance) -> f64 {
    let grads = inst.analytic();
    let h = inst.params.hidden();
    let v = inst.params.vocab_size();
    let mut probe = inst.params.clone();
    let mut worst = 0.0f64;
    let mut check = |m: Matrix, idx: usize, analytic: f64| {
        let orig = *entry(&mut probe, m, idx);
        *entry(&mut probe, m, idx) = orig + FD_STEP;
        let plus = inst.objective(&probe);
        *entry(&mut probe, m, idx) = orig - FD_STEP;
        let minus = inst.objective(&probe);
        *entry(&mut probe, m, idx) = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    };
    for row in 0..v {
        for col in 0..h {
            check(Matrix::Input, row * h + col, grads.w_in.get(row).map_or(0.0, |g| g[col]));
            check(Matrix::Output, row * h + col, grads.w_out.get(row).map_or(0.0, |g| g[col]));
        }
    }
    for idx in 0..h * h {
        check(Matrix::Recurrent, idx, grads.w_r[idx]);
    }
    worst
}

/// The synthetic small corpus encoded against its training vocabulary.
pub struct SmallCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Vec<u32>,
}

pub fn small_corpus() -> SmallCorpus {
    let c = synthetic::generate(&SyntheticSpec::default()).unwrap();
    let vocab = corpus::build_vocab(&c.train, None).unwrap();
    SmallCorpus {
        train: corpus::encode(&c.train, &vocab),
        valid: corpus::encode(&c.valid, &vocab),
        test: corpus::encode(&c.test, &vocab),
        vocab,
    }
}

pub fn tiny_corpus(seed: u64) -> SmallCorpus {
    let c = synthetic::generate(&SyntheticSpec::tiny(seed)).unwrap();
    let vocab = corpus::build_vocab(&c.train, None).unwrap();
    SmallCorpus {
        train: corpus::encode(&c.train, &vocab),
        valid: corpus::encode(&c.valid, &vocab),
        test: corpus::encode(&c.test, &vocab),
        vocab,
    }
}

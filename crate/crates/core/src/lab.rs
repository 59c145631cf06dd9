//! Monte-Carlo checks of the sampling estimators on small vocabularies.
//!
//! Two experiments live here:
//!
//! * the context-dependent noise density built from `K` draws of `Q` has
//!   expectation `Q(w)` for every word and total mass one in expectation;
//! * the self-normalized importance-sampling estimate of the model
//!   distribution, whose bias and variance depend on the proposal exponent.
//!
//! Both need exact model probabilities, so they are meant for `V <= 64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::noise_density;
use crate::rnn::softmax_in_place;
use crate::sampler::{AliasTable, ProposalDistribution};

/// Largest vocabulary the lab accepts.
pub const MAX_LAB_VOCAB: usize = 64;

/// Width of the acceptance band in standard errors.
pub const NOISE_BAND_SIGMAS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseTheoremReport {
    pub k: usize,
    pub draws: usize,
    pub expected: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub mass_estimate: f64,
    pub mass_std_error: f64,
    pub pass: bool,
}

/// Running mean and variance.
#[derive(Clone, Copy, Debug, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

fn check_lab_inputs(proposal: &[f64], model_probs: &[f64]) -> Result<()> {
    if proposal.len() != model_probs.len() {
        return Err(Error::Shape("proposal and model distributions differ in length".into()));
    }
    if proposal.is_empty() || proposal.len() > MAX_LAB_VOCAB {
        return Err(Error::Config(format!(
            "lab vocabulary must have 1..={} words",
            MAX_LAB_VOCAB
        )));
    }
    Ok(())
}

/// Draws `S_K ~ Q` i.i.d. `draws` times and estimates `E[p_n(w_i|s)]` for
/// every word and `E[Σ_i p_n(w_i|s)]`.
pub fn verify_noise_theorem<G: Rng + ?Sized>(
    proposal: &[f64],
    model_probs: &[f64],
    k: usize,
    draws: usize,
    rng: &mut G,
) -> Result<NoiseTheoremReport> {
    check_lab_inputs(proposal, model_probs)?;
    if k == 0 || draws < 2 {
        return Err(Error::Config("need k >= 1 and at least two draws".into()));
    }
    let table = AliasTable::new(proposal);
    let v = proposal.len();
    let mut per_word = vec![Welford::default(); v];
    let mut mass = Welford::default();
    let mut probs = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for _ in 0..draws {
        for j in 0..k {
            let w = table.sample(rng);
            probs[j] = model_probs[w];
            weights[j] = 1.0 / proposal[w];
        }
        let mut total = 0.0;
        for (i, acc) in per_word.iter_mut().enumerate() {
            if proposal[i] == 0.0 {
                acc.push(0.0);
                continue;
            }
            let pn = noise_density(&probs, &weights, 1.0 / proposal[i]);
            total += pn;
            acc.push(pn);
        }
        mass.push(total);
    }

    let estimates: Vec<f64> = per_word.iter().map(|w| w.mean).collect();
    let std_errors: Vec<f64> = per_word.iter().map(Welford::std_error).collect();
    let within = |est: f64, truth: f64, se: f64| (est - truth).abs() <= NOISE_BAND_SIGMAS * se + 1e-12;
    let pass = estimates
        .iter()
        .zip(proposal)
        .zip(&std_errors)
        .all(|((&e, &q), &se)| within(e, q, se))
        && within(mass.mean, 1.0, mass.std_error());
    Ok(NoiseTheoremReport {
        k,
        draws,
        expected: proposal.to_vec(),
        estimates,
        std_errors,
        mass_estimate: mass.mean,
        mass_std_error: mass.std_error(),
        pass,
    })
}

/// Bias and variance of the self-normalized IS estimate of `p_θ` at one α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub alpha: f64,
    pub k: usize,
    pub draws: usize,
    /// `Σ_w |E[p̂_w] - p_w|`.
    pub bias_l1: f64,
    /// Word whose probability is largest under the model.
    pub top_word: usize,
    pub bias_top: f64,
    pub bias_top_se: f64,
    /// `Σ_w Var[p̂_w]`.
    pub variance: f64,
    pub variance_se: f64,
}

/// Softmax of `scores`.
pub fn model_distribution(scores: &[f64]) -> Vec<f64> {
    let mut p = scores.to_vec();
    softmax_in_place(&mut p);
    p
}

/// One draw of the estimate: mass `q_j e^{u_j}` of each sampled occurrence,
/// normalized, accumulated per word.
fn snis_draw<G: Rng + ?Sized>(
    scores: &[f64],
    proposal: &ProposalDistribution,
    k: usize,
    rng: &mut G,
    picks: &mut Vec<(usize, f64)>,
    out: &mut [f64],
) {
    picks.clear();
    for _ in 0..k {
        let w = proposal.sample(rng);
        picks.push((w, scores[w] - proposal.prob(w).ln()));
    }
    let m = picks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = picks.iter().map(|p| (p.1 - m).exp()).sum();
    out.iter_mut().for_each(|x| *x = 0.0);
    for &(w, a) in picks.iter() {
        out[w] += (a - m).exp() / z;
    }
}

/// The estimate with the sample replaced by its expectation under `Q`:
/// `Σ_w Q(w) q_w e^{u_w} δ_w / Σ_w Q(w) q_w e^{u_w}`.
pub fn enumerated_estimate(scores: &[f64], proposal: &ProposalDistribution) -> Vec<f64> {
    let mut logits: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(w, &u)| if proposal.prob(w) > 0.0 { u } else { f64::NEG_INFINITY })
        .collect();
    softmax_in_place(&mut logits);
    logits
}

const VARIANCE_BATCHES: usize = 20;

/// For each α, draws `S_K ~ Q_α` and measures bias and variance of the
/// importance-sampled expectation against the exact softmax.
pub fn estimator_sweep<G: Rng + ?Sized>(
    scores: &[f64],
    counts: &[u64],
    alphas: &[f64],
    k: usize,
    draws: usize,
    rng: &mut G,
) -> Result<Vec<EstimatorStats>> {
    let p = model_distribution(scores);
    check_lab_inputs(&p, &counts.iter().map(|&c| c as f64).collect::<Vec<_>>())?;
    if k == 0 || draws < VARIANCE_BATCHES * 2 {
        return Err(Error::Config(format!(
            "need k >= 1 and at least {} draws",
            VARIANCE_BATCHES * 2
        )));
    }
    let v = p.len();
    let top_word = (0..v).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    let per_batch = draws / VARIANCE_BATCHES;
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let proposal = ProposalDistribution::from_counts(counts, alpha)?;
        let mut picks = Vec::with_capacity(k);
        let mut est = vec![0.0; v];
        let mut per_word = vec![Welford::default(); v];
        let mut batch_vars = Welford::default();
        for _ in 0..VARIANCE_BATCHES {
            let mut batch = vec![Welford::default(); v];
            for _ in 0..per_batch {
                snis_draw(scores, &proposal, k, rng, &mut picks, &mut est);
                for w in 0..v {
                    per_word[w].push(est[w]);
                    batch[w].push(est[w]);
                }
            }
            batch_vars.push(batch.iter().map(Welford::variance).sum());
        }
        let bias: Vec<f64> = per_word.iter().zip(&p).map(|(w, &pw)| w.mean - pw).collect();
        out.push(EstimatorStats {
            alpha,
            k,
            draws: per_batch * VARIANCE_BATCHES,
            bias_l1: bias.iter().map(|b| b.abs()).sum(),
            top_word,
            bias_top: bias[top_word],
            bias_top_se: per_word[top_word].std_error(),
            variance: per_word.iter().map(Welford::variance).sum(),
            variance_se: batch_vars.std_error(),
        });
    }
    Ok(out)
}

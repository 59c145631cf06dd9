//! Output-layer objectives and their partials with respect to the scores.
//!
//! Every head reports a loss to be *maximized* and `∂J/∂u` for each entry it
//! touched. Sampled heads work on a [`ScoreSlate`]: the target's score
//! followed by one score per sample occurrence, with the matching
//! importance weights `q = 1/Q`.

use std::cell::Cell;

use crate::error::{Error, Result};

/// Floor applied to `1 - p̃_j` before taking logs or reciprocals.
pub const ONE_MINUS_FLOOR: f64 = 1e-12;

/// Largest `u - ln Z` for which `exp` is finite in `f64`.
const EXP_LIMIT: f64 = 709.0;

/// Which objective trains the output layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Exact,
    BlackOut,
    Nce,
    IsMl,
}

impl HeadKind {
    pub fn is_sampled(self) -> bool {
        self != HeadKind::Exact
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Exact => "exact",
            HeadKind::BlackOut => "blackout",
            HeadKind::Nce => "nce",
            HeadKind::IsMl => "is-ml",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(HeadKind::Exact),
            "blackout" => Ok(HeadKind::BlackOut),
            "nce" => Ok(HeadKind::Nce),
            "is-ml" | "is_ml" | "isml" => Ok(HeadKind::IsMl),
            other => Err(Error::Config(format!("unknown head kind '{}'", other))),
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scores and weights for `{i} ∪ S_K`; index 0 is the target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSlate {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ScoreSlate {
    pub fn new(scores: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let slate = ScoreSlate { scores, weights };
        slate.validate()?;
        Ok(slate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() || self.scores.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "slate has {} scores and {} weights",
                self.scores.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(Error::Shape("slate weights must be finite and positive".into()));
        }
        Ok(())
    }

    /// Number of samples `K`.
    pub fn k(&self) -> usize {
        self.scores.len() - 1
    }

    pub fn target_score(&self) -> f64 {
        self.scores[0]
    }

    pub fn sample_scores(&self) -> &[f64] {
        &self.scores[1..]
    }
}

/// Loss (maximized) and `∂J/∂u` per slate entry or per vocabulary row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeadOutput {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// Counters for numerically guarded events.
#[derive(Debug, Default)]
pub struct Diagnostics {
    /// `1 - p̃_j` hit [`ONE_MINUS_FLOOR`] in the BlackOut head.
    pub blackout_clamps: Cell<u64>,
    /// `exp(u)/Z` would overflow in the NCE head.
    pub nce_saturations: Cell<u64>,
    /// Length-`V` score vectors built on the training path.
    pub full_score_vectors: Cell<u64>,
}

impl Diagnostics {
    pub fn bump(counter: &Cell<u64>) {
        counter.set(counter.get() + 1);
    }

    pub fn snapshot(&self) -> DiagnosticCounts {
        DiagnosticCounts {
            blackout_clamps: self.blackout_clamps.get(),
            nce_saturations: self.nce_saturations.get(),
            full_score_vectors: self.full_score_vectors.get(),
        }
    }

    pub fn restore(&self, counts: DiagnosticCounts) {
        self.blackout_clamps.set(counts.blackout_clamps);
        self.nce_saturations.set(counts.nce_saturations);
        self.full_score_vectors.set(counts.full_score_vectors);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticCounts {
    pub blackout_clamps: u64,
    pub nce_saturations: u64,
    pub full_score_vectors: u64,
}

/// `ln(q_k) + u_k` for every entry.
fn log_weighted(slate: &ScoreSlate) -> impl Iterator<Item = f64> + '_ {
    slate.scores.iter().zip(&slate.weights).map(|(&u, &q)| u + q.ln())
}

/// Weighted softmax over the slate, computed with a max shift.
pub fn weighted_softmax(slate: &ScoreSlate) -> Vec<f64> {
    let m = log_weighted(slate).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = log_weighted(slate).map(|a| (a - m).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Log of the weighted softmax of the target, `ln p̃_i`.
fn log_target_prob(slate: &ScoreSlate) -> f64 {
    let m = log_weighted(slate).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = log_weighted(slate).map(|a| (a - m).exp()).sum();
    slate.scores[0] + slate.weights[0].ln() - m - z.ln()
}

/// Discriminative objective `ln p̃_i + Σ_j ln(1 - p̃_j)` and its partials.
///
/// Each sample occurrence is its own term; `∂J/∂u_j` excludes only that
/// occurrence from the inner sum.
pub fn blackout_head(slate: &ScoreSlate, diag: &Diagnostics) -> HeadOutput {
    let p = weighted_softmax(slate);
    let k = slate.k();
    let mut one_minus = Vec::with_capacity(k);
    for &pj in &p[1..] {
        let c = 1.0 - pj;
        if c < ONE_MINUS_FLOOR {
            Diagnostics::bump(&diag.blackout_clamps);
            one_minus.push(ONE_MINUS_FLOOR);
        } else {
            one_minus.push(c);
        }
    }
    let inv_sum: f64 = one_minus.iter().map(|c| 1.0 / c).sum();
    let loss = log_target_prob(slate) + one_minus.iter().map(|c| c.ln()).sum::<f64>();

    let kp1 = (k + 1) as f64;
    let mut grads = Vec::with_capacity(k + 1);
    grads.push(1.0 - (kp1 - inv_sum) * p[0]);
    for (j, c) in one_minus.iter().enumerate() {
        let others = inv_sum - 1.0 / c;
        grads.push(-(kp1 - others) * p[j + 1]);
    }
    HeadOutput { loss, grads }
}

/// Maximum likelihood over the full vocabulary: `ln softmax(u)_target`.
pub fn exact_ml_head(full_scores: &[f64], target: usize) -> HeadOutput {
    let mut p = full_scores.to_vec();
    let log_z = crate::rnn::softmax_in_place(&mut p);
    let loss = full_scores[target] - log_z;
    let mut grads: Vec<f64> = p.iter().map(|x| -x).collect();
    grads[target] += 1.0;
    HeadOutput { loss, grads }
}

/// Importance-sampled maximum likelihood: `ln p̃_i` only.
pub fn is_ml_head(slate: &ScoreSlate) -> HeadOutput {
    let p = weighted_softmax(slate);
    let mut grads: Vec<f64> = p.iter().map(|x| -x).collect();
    grads[0] += 1.0;
    HeadOutput {
        loss: log_target_prob(slate),
        grads,
    }
}

/// How the NCE partition function is handled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Partition {
    Constant(f64),
    /// Learned jointly with the model. Not implemented.
    Learned,
}

/// Baseline NCE with context-independent noise `p_n = Q_α`.
///
/// The noise probabilities are read off the slate as `1/q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NceConfig {
    pub partition: Partition,
}

impl Default for NceConfig {
    fn default() -> Self {
        NceConfig {
            partition: Partition::Constant(1.0),
        }
    }
}

impl NceConfig {
    pub fn with_z(z: f64) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::Config(format!("partition constant must be positive, got {}", z)));
        }
        Ok(NceConfig {
            partition: Partition::Constant(z),
        })
    }

    fn log_z(&self) -> Result<f64> {
        match self.partition {
            Partition::Constant(z) if z > 0.0 && z.is_finite() => Ok(z.ln()),
            Partition::Constant(_) => Err(Error::Config("partition constant must be positive".into())),
            Partition::Learned => Err(Error::Unsupported("learned NCE partition")),
        }
    }
}

/// `ln σ(x)` without overflow.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `P(D=1|w) = p̂/(p̂ + K p_n(w))`, `p̂ = exp(u)/Z`, as a logistic in
/// `a = u - ln Z - ln(K p_n(w))`.
pub fn nce_head(slate: &ScoreSlate, cfg: &NceConfig, diag: &Diagnostics) -> Result<HeadOutput> {
    let log_z = cfg.log_z()?;
    let k = slate.k().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(slate.scores.len());
    for (idx, (&u, &q)) in slate.scores.iter().zip(&slate.weights).enumerate() {
        if u - log_z > EXP_LIMIT {
            Diagnostics::bump(&diag.nce_saturations);
        }
        // ln(K p_n) = ln K - ln q
        let a = u - log_z - (k.ln() - q.ln());
        let post = crate::rnn::sigmoid(a);
        if idx == 0 {
            loss += log_sigmoid(a);
            grads.push(1.0 - post);
        } else {
            loss += log_sigmoid(-a);
            grads.push(-post);
        }
    }
    Ok(HeadOutput { loss, grads })
}

/// Posterior `p_θ(w)/(p_θ(w) + K p_n)` given the data and noise
/// densities of one word.
pub fn nce_posterior(model_prob: f64, noise_prob: f64, k: usize) -> f64 {
    model_prob / (model_prob + k as f64 * noise_prob)
}

/// Context-dependent noise density
/// `p_n(w_i|s) = (1/K) Σ_j (q_j/q_i) p_θ(w_j|s)`.
///
/// `sample_probs[j]` is `p_θ(w_j|s)` and `sample_weights[j]` is `q_j` for
/// every occurrence in `S_K`.
pub fn noise_density(sample_probs: &[f64], sample_weights: &[f64], word_weight: f64) -> f64 {
    let k = sample_probs.len() as f64;
    sample_probs
        .iter()
        .zip(sample_weights)
        .map(|(&p, &q)| q / word_weight * p)
        .sum::<f64>()
        / k
}

/// [`noise_density`] for the target of a slate, with
/// `p_θ(w|s) = exp(u - log_partition)`.
pub fn slate_noise_density(slate: &ScoreSlate, log_partition: f64) -> f64 {
    let probs: Vec<f64> = slate
        .sample_scores()
        .iter()
        .map(|u| (u - log_partition).exp())
        .collect();
    noise_density(&probs, &slate.weights[1..], slate.weights[0])
}

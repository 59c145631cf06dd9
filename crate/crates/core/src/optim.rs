//! RMSProp, dense and with lazily decayed subnet updates.
//!
//! Dense mode decays every moving average on every step. The subnet modes
//! only visit rows of `W_in`/`W_out` that received a gradient in the current
//! block and catch up the skipped decay when the row is next touched.

use crate::corpus::{BatchConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::rnn::{Gradients, ModelParams, Real, RowGrads};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimMode {
    /// Every parameter's moving average decays every step.
    Dense,
    /// Touched rows decay by `β^(1/p_u)`, the mean geometric gap.
    LazySubnet,
    /// Touched rows decay by `β^n` with `n` the steps since the last touch.
    LazyExactLapse,
}

impl OptimMode {
    pub fn name(self) -> &'static str {
        match self {
            OptimMode::Dense => "dense",
            OptimMode::LazySubnet => "lazy",
            OptimMode::LazyExactLapse => "lazy-exact",
        }
    }
}

impl std::str::FromStr for OptimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(OptimMode::Dense),
            "lazy" | "lazy-subnet" => Ok(OptimMode::LazySubnet),
            "lazy-exact" | "exact-lapse" => Ok(OptimMode::LazyExactLapse),
            other => Err(Error::Config(format!("unknown optimizer mode '{}'", other))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub damping: f64,
    pub mode: OptimMode,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.01,
            decay: 0.9,
            damping: 1e-6,
            mode: OptimMode::LazySubnet,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config("decay must lie in (0, 1)".into()));
        }
        if !(self.damping > 0.0) {
            return Err(Error::Config("damping must be positive".into()));
        }
        Ok(())
    }
}

/// Probability that a word's input or output row is touched in one block.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateProbs {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl UpdateProbs {
    pub fn ones(vocab_size: usize) -> Self {
        UpdateProbs {
            input: vec![1.0; vocab_size],
            output: vec![1.0; vocab_size],
        }
    }
}

/// `p_u = p_uni·B·T` for input rows and `p_uni·B·T + Q_α·K·T` for output
/// rows, capped at one.
pub fn update_probs_from(unigram: &[f64], proposal: &[f64], batch: BatchConfig, k: usize) -> UpdateProbs {
    update_probs_with_draws(unigram, proposal, batch, (k * batch.bptt_len) as f64)
}

/// Like [`update_probs_from`] with the sampling term `Q_α·draws`, where
/// `draws` is the number of proposal draws per block.
pub fn update_probs_with_draws(unigram: &[f64], proposal: &[f64], batch: BatchConfig, draws: f64) -> UpdateProbs {
    let bt = (batch.batch_size * batch.bptt_len) as f64;
    let input: Vec<f64> = unigram.iter().map(|&p| (p * bt).min(1.0)).collect();
    let output = unigram
        .iter()
        .zip(proposal)
        .map(|(&p, &q)| (p * bt + q * draws).min(1.0))
        .collect();
    UpdateProbs { input, output }
}

pub fn compute_update_probs(
    vocab: &Vocabulary,
    proposal: &[f64],
    batch: BatchConfig,
    k: usize,
) -> UpdateProbs {
    update_probs_from(&vocab.unigram(), proposal, batch, k)
}

/// Moving averages and bookkeeping, shaped like `Ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub v_in: Vec<f64>,
    pub v_r: Vec<f64>,
    pub v_out: Vec<f64>,
    pub last_in: Vec<u64>,
    pub last_out: Vec<u64>,
    pub global_step: u64,
    hidden: usize,
    update_probs: UpdateProbs,
    decay_in: Vec<f64>,
    decay_out: Vec<f64>,
}

impl OptimizerState {
    /// Fresh state. Lazy steps fail until [`set_update_probs`] is called.
    ///
    /// [`set_update_probs`]: Self::set_update_probs
    pub fn new(vocab_size: usize, hidden: usize) -> Self {
        OptimizerState {
            v_in: vec![0.0; vocab_size * hidden],
            v_r: vec![0.0; hidden * hidden],
            v_out: vec![0.0; vocab_size * hidden],
            last_in: vec![0; vocab_size],
            last_out: vec![0; vocab_size],
            global_step: 0,
            hidden,
            update_probs: UpdateProbs::ones(vocab_size),
            decay_in: vec![f64::NAN; vocab_size],
            decay_out: vec![f64::NAN; vocab_size],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.last_in.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn update_probs(&self) -> &UpdateProbs {
        &self.update_probs
    }

    /// Installs `p_u` and precomputes `β^(1/p_u)` per word.
    pub fn set_update_probs(&mut self, probs: UpdateProbs, decay: f64) {
        let lazy = |p: &f64| if *p > 0.0 { decay.powf(1.0 / p) } else { f64::NAN };
        self.decay_in = probs.input.iter().map(lazy).collect();
        self.decay_out = probs.output.iter().map(lazy).collect();
        self.update_probs = probs;
    }
}

#[inline]
fn rms_update<R: Real>(
    p: &mut R,
    v: &mut f64,
    g: f64,
    decay: f64,
    cfg: &OptimConfig,
) -> bool {
    *v = decay * *v + (1.0 - cfg.decay) * g * g;
    let next = p.to_f64() + cfg.learning_rate * g / (*v + cfg.damping).sqrt();
    *p = R::from_f64(next);
    next.is_finite()
}

fn dense_matrix<R: Real>(
    params: &mut [R],
    v: &mut [f64],
    grads: &RowGrads,
    width: usize,
    cfg: &OptimConfig,
    name: &'static str,
) -> Result<()> {
    let zeros = vec![0.0; width];
    for (row, (prow, vrow)) in params
        .chunks_exact_mut(width)
        .zip(v.chunks_exact_mut(width))
        .enumerate()
    {
        let g = grads.get(row).unwrap_or(&zeros);
        for col in 0..width {
            if !rms_update(&mut prow[col], &mut vrow[col], g[col], cfg.decay, cfg) {
                return Err(Error::NonFiniteUpdate { matrix: name, row, col });
            }
        }
    }
    Ok(())
}

fn dense_recurrent<R: Real>(
    params: &mut ModelParams<R>,
    state: &mut OptimizerState,
    grads: &Gradients,
    cfg: &OptimConfig,
) -> Result<()> {
    let h = params.hidden();
    for (idx, (p, v)) in params.w_r.iter_mut().zip(state.v_r.iter_mut()).enumerate() {
        if !rms_update(p, v, grads.w_r[idx], cfg.decay, cfg) {
            return Err(Error::NonFiniteUpdate {
                matrix: "W_r",
                row: idx / h,
                col: idx % h,
            });
        }
    }
    Ok(())
}

/// Plain RMSProp over every entry of `Ω` (gradient ascent).
pub fn dense_step<R: Real>(
    params: &mut ModelParams<R>,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &OptimConfig,
) -> Result<()> {
    let h = params.hidden();
    state.global_step += 1;
    dense_recurrent(params, state, grads, cfg)?;
    dense_matrix(&mut params.w_in, &mut state.v_in, &grads.w_in, h, cfg, "W_in")?;
    dense_matrix(&mut params.w_out, &mut state.v_out, &grads.w_out, h, cfg, "W_out")?;
    let step = state.global_step;
    grads.w_in.rows().iter().for_each(|&r| state.last_in[r as usize] = step);
    grads.w_out.rows().iter().for_each(|&r| state.last_out[r as usize] = step);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn lazy_matrix<R: Real>(
    params: &mut [R],
    v: &mut [f64],
    last: &mut [u64],
    lazy_decay: &[f64],
    grads: &RowGrads,
    width: usize,
    step: u64,
    cfg: &OptimConfig,
    name: &'static str,
) -> Result<()> {
    for (row, g) in grads.iter() {
        let decay = match cfg.mode {
            OptimMode::LazyExactLapse => cfg.decay.powi((step - last[row]) as i32),
            _ => {
                let d = lazy_decay[row];
                if !d.is_finite() {
                    return Err(Error::InconsistentUpdateProbability(row));
                }
                d
            }
        };
        let off = row * width;
        let prow = &mut params[off..off + width];
        let vrow = &mut v[off..off + width];
        for col in 0..width {
            if !rms_update(&mut prow[col], &mut vrow[col], g[col], decay, cfg) {
                return Err(Error::NonFiniteUpdate { matrix: name, row, col });
            }
        }
        last[row] = step;
    }
    Ok(())
}

/// RMSProp on the touched rows of `W_in`/`W_out` only; `W_r` is dense.
pub fn lazy_subnet_step<R: Real>(
    params: &mut ModelParams<R>,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &OptimConfig,
) -> Result<()> {
    let h = params.hidden();
    state.global_step += 1;
    let step = state.global_step;
    dense_recurrent(params, state, grads, cfg)?;
    lazy_matrix(
        &mut params.w_in,
        &mut state.v_in,
        &mut state.last_in,
        &state.decay_in,
        &grads.w_in,
        h,
        step,
        cfg,
        "W_in",
    )?;
    lazy_matrix(
        &mut params.w_out,
        &mut state.v_out,
        &mut state.last_out,
        &state.decay_out,
        &grads.w_out,
        h,
        step,
        cfg,
        "W_out",
    )
}

/// Dispatches on `cfg.mode`.
pub fn step<R: Real>(
    params: &mut ModelParams<R>,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &OptimConfig,
) -> Result<()> {
    match cfg.mode {
        OptimMode::Dense => dense_step(params, grads, state, cfg),
        OptimMode::LazySubnet | OptimMode::LazyExactLapse => lazy_subnet_step(params, grads, state, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: OptimMode) -> OptimConfig {
        OptimConfig {
            learning_rate: 0.05,
            decay: 0.9,
            damping: 1e-6,
            mode,
        }
    }

    fn scalar_grads(g: f64) -> Gradients {
        let mut grads = Gradients::new(1, 1);
        grads.w_in.row_mut(0)[0] = g;
        grads
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = ModelParams::<f64>::zeros(2, 2);
        p.w_in[1] = 0.25;
        let before = p.clone();
        let mut s = OptimizerState::new(2, 2);
        s.v_in.iter_mut().for_each(|v| *v = 2.0);
        dense_step(&mut p, &Gradients::new(2, 2), &mut s, &cfg(OptimMode::Dense)).unwrap();
        assert_eq!(p, before);
        assert!(s.v_in.iter().all(|&v| (v - 1.8).abs() < 1e-15));
    }

    #[test]
    fn first_step_matches_closed_form() {
        let c = cfg(OptimMode::Dense);
        let g = 0.3;
        let mut p = ModelParams::<f64>::zeros(1, 1);
        let mut s = OptimizerState::new(1, 1);
        dense_step(&mut p, &scalar_grads(g), &mut s, &c).unwrap();
        let expect = c.learning_rate * g / ((1.0 - c.decay) * g * g + c.damping).sqrt();
        assert!((p.w_in[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn update_probs_arithmetic() {
        let batch = BatchConfig::new(2, 3).unwrap();
        let up = update_probs_from(&[0.01, 1.0 / 6.0, 0.5], &[0.02, 0.1, 0.1], batch, 4);
        assert!((up.output[0] - 0.30).abs() < 1e-15);
        assert!((up.input[1] - 1.0).abs() < 1e-15);
        assert_eq!(up.input[2], 1.0);
        assert_eq!(up.output[1], 1.0);
    }

    #[test]
    fn zero_probability_touch_is_an_error() {
        let mut p = ModelParams::<f64>::zeros(2, 1);
        let mut s = OptimizerState::new(2, 1);
        s.set_update_probs(
            UpdateProbs {
                input: vec![0.5, 0.0],
                output: vec![0.5, 0.5],
            },
            0.9,
        );
        let mut g = Gradients::new(2, 1);
        g.w_in.row_mut(1)[0] = 1.0;
        let err = lazy_subnet_step(&mut p, &g, &mut s, &cfg(OptimMode::LazySubnet));
        assert!(matches!(err, Err(Error::InconsistentUpdateProbability(1))));
    }

    #[test]
    fn exact_lapse_uses_elapsed_steps() {
        let c = cfg(OptimMode::LazyExactLapse);
        let mut p = ModelParams::<f64>::zeros(2, 1);
        let mut s = OptimizerState::new(2, 1);
        let mut g = Gradients::new(2, 1);
        g.w_out.row_mut(0)[0] = 1.0;
        lazy_subnet_step(&mut p, &g, &mut s, &c).unwrap();
        let v1 = s.v_out[0];
        let mut other = Gradients::new(2, 1);
        other.w_out.row_mut(1)[0] = 1.0;
        for _ in 0..4 {
            lazy_subnet_step(&mut p, &other, &mut s, &c).unwrap();
        }
        assert_eq!(s.v_out[0], v1);
        let mut zero = Gradients::new(2, 1);
        zero.w_out.row_mut(0);
        lazy_subnet_step(&mut p, &zero, &mut s, &c).unwrap();
        assert!((s.v_out[0] - v1 * 0.9f64.powi(5)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_update_reports_coordinates() {
        let mut p = ModelParams::<f64>::zeros(1, 1);
        let mut s = OptimizerState::new(1, 1);
        let err = dense_step(&mut p, &scalar_grads(f64::INFINITY), &mut s, &cfg(OptimMode::Dense));
        assert!(matches!(
            err,
            Err(Error::NonFiniteUpdate {
                matrix: "W_in",
                row: 0,
                col: 0
            })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(OptimMode::Dense).validate().is_ok());
        let mut c = cfg(OptimMode::Dense);
        c.decay = 1.0;
        assert!(c.validate().is_err());
    }
}

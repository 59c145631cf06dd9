//! Elman recurrent network with a sigmoid hidden layer.
//!
//! `s_t = σ(W_in[x_t] + W_r s_{t-1})`, scores `u_j = ⟨W_out[j], s_t⟩`.
//! Parameters are stored as [`Real`] (normally `f32`); every accumulation is
//! carried out in `f64`.

use std::fmt::Debug;

use rand::Rng;

use crate::corpus::BpttBlock;
use crate::error::{Error, Result};

/// Storage type for model parameters.
pub trait Real: Copy + Debug + Default + PartialEq + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(x: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot<R: Real>(row: &[R], v: &[f64]) -> f64 {
    row.iter().zip(v).map(|(&w, &x)| w.to_f64() * x).sum()
}

/// Which hidden state a lane starts from at `<s>` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HiddenPolicy {
    /// Reset to the zero state before every sentence start.
    ResetAtSentence,
    /// Carry the state straight through sentence boundaries.
    Continuous,
}

impl HiddenPolicy {
    #[inline]
    pub fn resets(self, lane_reset: bool) -> bool {
        lane_reset && self == HiddenPolicy::ResetAtSentence
    }
}

/// `Ω = {W_in, W_r, W_out}`, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<R: Real = f32> {
    vocab_size: usize,
    hidden: usize,
    pub w_in: Vec<R>,
    pub w_r: Vec<R>,
    pub w_out: Vec<R>,
}

impl<R: Real> ModelParams<R> {
    pub fn zeros(vocab_size: usize, hidden: usize) -> Self {
        ModelParams {
            vocab_size,
            hidden,
            w_in: vec![R::default(); vocab_size * hidden],
            w_r: vec![R::default(); hidden * hidden],
            w_out: vec![R::default(); vocab_size * hidden],
        }
    }

    /// Every entry uniform in `[-scale, scale]`.
    pub fn random<G: Rng + ?Sized>(vocab_size: usize, hidden: usize, scale: f64, rng: &mut G) -> Self {
        let mut p = Self::zeros(vocab_size, hidden);
        for w in p.w_in.iter_mut().chain(p.w_r.iter_mut()).chain(p.w_out.iter_mut()) {
            *w = R::from_f64(rng.gen_range(-scale..=scale));
        }
        p
    }

    pub fn from_parts(
        vocab_size: usize,
        hidden: usize,
        w_in: Vec<R>,
        w_r: Vec<R>,
        w_out: Vec<R>,
    ) -> Result<Self> {
        if w_in.len() != vocab_size * hidden
            || w_out.len() != vocab_size * hidden
            || w_r.len() != hidden * hidden
        {
            return Err(Error::Shape(format!(
                "matrices do not match V={} h={}",
                vocab_size, hidden
            )));
        }
        Ok(ModelParams {
            vocab_size,
            hidden,
            w_in,
            w_r,
            w_out,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.w_in.len() + self.w_r.len() + self.w_out.len()
    }

    #[inline]
    pub fn in_row(&self, id: usize) -> &[R] {
        &self.w_in[id * self.hidden..(id + 1) * self.hidden]
    }

    #[inline]
    pub fn out_row(&self, id: usize) -> &[R] {
        &self.w_out[id * self.hidden..(id + 1) * self.hidden]
    }

    pub fn is_finite(&self) -> bool {
        self.w_in
            .iter()
            .chain(&self.w_r)
            .chain(&self.w_out)
            .all(|w| w.to_f64().is_finite())
    }

    pub fn convert<S: Real>(&self) -> ModelParams<S> {
        let conv = |v: &[R]| v.iter().map(|w| S::from_f64(w.to_f64())).collect();
        ModelParams {
            vocab_size: self.vocab_size,
            hidden: self.hidden,
            w_in: conv(&self.w_in),
            w_r: conv(&self.w_r),
            w_out: conv(&self.w_out),
        }
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.vocab_size {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }
}

/// One recurrent step written into `out`. The one-hot input reduces the
/// input projection to a row gather.
pub fn step_hidden_into<R: Real>(
    prev: &[f64],
    input_id: usize,
    params: &ModelParams<R>,
    out: &mut [f64],
) -> Result<()> {
    params.check_id(input_id)?;
    let h = params.hidden;
    let row = params.in_row(input_id);
    for i in 0..h {
        let z = row[i].to_f64() + dot(&params.w_r[i * h..(i + 1) * h], prev);
        let s = sigmoid(z);
        if !s.is_finite() {
            return Err(Error::HiddenOverflow);
        }
        out[i] = s;
    }
    Ok(())
}

pub fn step_hidden<R: Real>(prev: &[f64], input_id: usize, params: &ModelParams<R>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; params.hidden];
    step_hidden_into(prev, input_id, params, &mut out)?;
    Ok(out)
}

/// Scores for the requested output rows only.
pub fn scores<R: Real>(state: &[f64], rows: &[u32], params: &ModelParams<R>) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&j| {
            params.check_id(j as usize)?;
            Ok(dot(params.out_row(j as usize), state))
        })
        .collect()
}

/// All `V` scores. Only the exact head and evaluation go through here.
pub fn full_scores_into<R: Real>(state: &[f64], params: &ModelParams<R>, out: &mut Vec<f64>) {
    out.clear();
    out.extend(params.w_out.chunks_exact(params.hidden).map(|row| dot(row, state)));
}

/// Max-shifted softmax in place; returns `log Σ exp(u)`.
pub fn softmax_in_place(u: &mut [f64]) -> f64 {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in u.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in u.iter_mut() {
        *x /= z;
    }
    m + z.ln()
}

pub fn full_softmax<R: Real>(state: &[f64], params: &ModelParams<R>) -> Vec<f64> {
    let mut u = Vec::with_capacity(params.vocab_size);
    full_scores_into(state, params, &mut u);
    softmax_in_place(&mut u);
    u
}

/// Hidden states of a block, lane-major. Slot 0 of each lane is the
/// carried-in state; slot `t + 1` is `s_t`.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    pub lanes: usize,
    pub width: usize,
    pub hidden: usize,
    states: Vec<f64>,
    inputs: Vec<u32>,
    resets: Vec<bool>,
}

impl ForwardTape {
    #[inline]
    pub fn state(&self, lane: usize, slot: usize) -> &[f64] {
        let off = (lane * (self.width + 1) + slot) * self.hidden;
        &self.states[off..off + self.hidden]
    }

    /// `s_t` for position `t`.
    #[inline]
    pub fn output_state(&self, lane: usize, t: usize) -> &[f64] {
        self.state(lane, t + 1)
    }

    /// Final state of each lane, to carry into the next block.
    pub fn final_states(&self) -> Vec<Vec<f64>> {
        (0..self.lanes).map(|b| self.state(b, self.width).to_vec()).collect()
    }

    #[inline]
    fn reset(&self, lane: usize, t: usize) -> bool {
        self.resets[lane * self.width + t]
    }
}

/// Runs every lane of `block` forward from `carried` (one state per lane).
pub fn forward<R: Real>(
    params: &ModelParams<R>,
    block: &BpttBlock,
    carried: &[Vec<f64>],
    policy: HiddenPolicy,
) -> Result<ForwardTape> {
    let h = params.hidden;
    if carried.len() != block.lanes || carried.iter().any(|s| s.len() != h) {
        return Err(Error::Shape("carried states do not match block lanes".into()));
    }
    let w = block.width;
    let mut tape = ForwardTape {
        lanes: block.lanes,
        width: w,
        hidden: h,
        states: vec![0.0; block.lanes * (w + 1) * h],
        inputs: block.inputs.clone(),
        resets: block.lane_reset.iter().map(|&r| policy.resets(r)).collect(),
    };
    let zero = vec![0.0; h];
    let mut next = vec![0.0; h];
    for lane in 0..block.lanes {
        let base = lane * (w + 1) * h;
        tape.states[base..base + h].copy_from_slice(&carried[lane]);
        for t in 0..w {
            let prev_off = base + t * h;
            let prev = if tape.reset(lane, t) {
                &zero[..]
            } else {
                &tape.states[prev_off..prev_off + h]
            };
            step_hidden_into(prev, block.input(lane, t) as usize, params, &mut next)?;
            tape.states[prev_off + h..prev_off + 2 * h].copy_from_slice(&next);
        }
    }
    Ok(tape)
}

/// Row-sparse gradient for a `V x h` matrix. Storage is proportional to
/// the number of touched rows plus a `V`-long slot index.
#[derive(Clone, Debug)]
pub struct RowGrads {
    width: usize,
    slot_of: Vec<u32>,
    rows: Vec<u32>,
    data: Vec<f64>,
}

const NO_SLOT: u32 = u32::MAX;

impl RowGrads {
    pub fn new(num_rows: usize, width: usize) -> Self {
        RowGrads {
            width,
            slot_of: vec![NO_SLOT; num_rows],
            rows: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Marks `row` as touched and returns its accumulator.
    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let mut slot = self.slot_of[row];
        if slot == NO_SLOT {
            slot = self.rows.len() as u32;
            self.slot_of[row] = slot;
            self.rows.push(row as u32);
            self.data.resize(self.data.len() + self.width, 0.0);
        }
        let off = slot as usize * self.width;
        &mut self.data[off..off + self.width]
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        match self.slot_of[row] {
            NO_SLOT => None,
            slot => {
                let off = slot as usize * self.width;
                Some(&self.data[off..off + self.width])
            }
        }
    }

    /// Touched rows in first-touch order.
    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows
            .iter()
            .zip(self.data.chunks_exact(self.width.max(1)))
            .map(|(&r, g)| (r as usize, g))
    }

    pub fn clear(&mut self) {
        for &r in &self.rows {
            self.slot_of[r as usize] = NO_SLOT;
        }
        self.rows.clear();
        self.data.clear();
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Gradient of the block objective over `Ω`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub w_in: RowGrads,
    pub w_r: Vec<f64>,
    pub w_out: RowGrads,
}

impl Gradients {
    pub fn new(vocab_size: usize, hidden: usize) -> Self {
        Gradients {
            w_in: RowGrads::new(vocab_size, hidden),
            w_r: vec![0.0; hidden * hidden],
            w_out: RowGrads::new(vocab_size, hidden),
        }
    }

    pub fn clear(&mut self) {
        self.w_in.clear();
        self.w_out.clear();
        self.w_r.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn norm(&self) -> f64 {
        self.w_in
            .values()
            .iter()
            .chain(&self.w_r)
            .chain(self.w_out.values())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales to global norm `threshold` when above it; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, threshold: f64) -> f64 {
        let norm = self.norm();
        if norm > threshold && norm > 0.0 {
            let scale = threshold / norm;
            self.w_in
                .values_mut()
                .iter_mut()
                .chain(self.w_r.iter_mut())
                .chain(self.w_out.values_mut().iter_mut())
                .for_each(|g| *g *= scale);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.w_in
            .values()
            .iter()
            .chain(&self.w_r)
            .chain(self.w_out.values())
            .all(|g| g.is_finite())
    }
}

/// `∂J/∂u` over the rows touched at each block position, lane-major.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads {
    offsets: Vec<usize>,
    rows: Vec<u32>,
    grads: Vec<f64>,
}

impl OutputGrads {
    pub fn new() -> Self {
        OutputGrads {
            offsets: vec![0],
            rows: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.offsets.truncate(1);
        self.rows.clear();
        self.grads.clear();
    }

    /// Appends the entries of the next position.
    pub fn push_position<I: IntoIterator<Item = (u32, f64)>>(&mut self, entries: I) {
        for (r, g) in entries {
            self.rows.push(r);
            self.grads.push(g);
        }
        self.offsets.push(self.rows.len());
    }

    pub fn num_positions(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn position(&self, idx: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let (a, b) = (self.offsets[idx], self.offsets[idx + 1]);
        self.rows[a..b].iter().copied().zip(self.grads[a..b].iter().copied())
    }
}

/// Truncated BPTT into `grads` (which is cleared first). No clipping.
pub fn bptt_backward_into<R: Real>(
    tape: &ForwardTape,
    output_grads: &OutputGrads,
    params: &ModelParams<R>,
    grads: &mut Gradients,
) -> Result<()> {
    let h = tape.hidden;
    let w = tape.width;
    if output_grads.num_positions() != tape.lanes * w {
        return Err(Error::Shape(format!(
            "{} output gradient positions for a {}x{} block",
            output_grads.num_positions(),
            tape.lanes,
            w
        )));
    }
    grads.clear();
    let mut carry = vec![0.0; h];
    let mut ds = vec![0.0; h];
    let mut dz = vec![0.0; h];
    for lane in 0..tape.lanes {
        carry.iter_mut().for_each(|c| *c = 0.0);
        for t in (0..w).rev() {
            let s = tape.output_state(lane, t);
            ds.copy_from_slice(&carry);
            for (row, g) in output_grads.position(lane * w + t) {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient { lane, position: t });
                }
                if g == 0.0 {
                    // still mark the row as touched
                    grads.w_out.row_mut(row as usize);
                    continue;
                }
                let theta = params.out_row(row as usize);
                for k in 0..h {
                    ds[k] += g * theta[k].to_f64();
                }
                let acc = grads.w_out.row_mut(row as usize);
                for k in 0..h {
                    acc[k] += g * s[k];
                }
            }
            for k in 0..h {
                dz[k] = ds[k] * s[k] * (1.0 - s[k]);
            }
            let acc = grads.w_in.row_mut(tape.inputs[lane * w + t] as usize);
            for k in 0..h {
                acc[k] += dz[k];
            }
            if tape.reset(lane, t) {
                carry.iter_mut().for_each(|c| *c = 0.0);
                continue;
            }
            let prev = tape.state(lane, t);
            for i in 0..h {
                let d = dz[i];
                let gr = &mut grads.w_r[i * h..(i + 1) * h];
                for j in 0..h {
                    gr[j] += d * prev[j];
                }
            }
            if t > 0 {
                for j in 0..h {
                    carry[j] = (0..h).map(|i| params.w_r[i * h + j].to_f64() * dz[i]).sum();
                }
            }
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient {
            lane: 0,
            position: 0,
        });
    }
    Ok(())
}

/// BPTT followed by global-norm clipping at `clip`.
pub fn bptt_backward<R: Real>(
    tape: &ForwardTape,
    output_grads: &OutputGrads,
    params: &ModelParams<R>,
    clip: f64,
) -> Result<Gradients> {
    let mut grads = Gradients::new(params.vocab_size(), params.hidden());
    bptt_backward_into(tape, output_grads, params, &mut grads)?;
    grads.clip_global_norm(clip);
    Ok(grads)
}

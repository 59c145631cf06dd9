//! Exact-softmax perplexity and per-sentence scoring.

use serde::{Deserialize, Serialize};

use crate::corpus::Specials;
use crate::error::{Error, Result};
use crate::rnn::{full_scores_into, step_hidden_into, HiddenPolicy, ModelParams, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Natural-log probability of every scored token.
    pub log_prob: f64,
    pub tokens: u64,
    pub perplexity: f64,
    /// `log2(perplexity)`, bits per token.
    pub entropy_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<f64>>,
}

impl EvalReport {
    fn from_totals(log_prob: f64, tokens: u64, sentences: Option<Vec<f64>>) -> Self {
        let nll = if tokens == 0 { 0.0 } else { -log_prob / tokens as f64 };
        EvalReport {
            log_prob,
            tokens,
            perplexity: nll.exp(),
            entropy_bits: nll / std::f64::consts::LN_2,
            sentences,
        }
    }
}

struct Pass {
    log_prob: f64,
    tokens: u64,
    sentences: Vec<f64>,
}

fn sequential_pass<R: Real>(
    params: &ModelParams<R>,
    ids: &[u32],
    specials: Specials,
    policy: HiddenPolicy,
) -> Result<Pass> {
    let v = params.vocab_size();
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
        return Err(Error::IdOutOfRange {
            id: bad as usize,
            vocab_size: v,
        });
    }
    let h = params.hidden();
    let zero = vec![0.0; h];
    let mut state = vec![0.0; h];
    let mut next = vec![0.0; h];
    let mut u = Vec::with_capacity(v);
    let mut pass = Pass {
        log_prob: 0.0,
        tokens: 0,
        sentences: Vec::new(),
    };
    let mut sentence = 0.0;
    for pair in ids.windows(2) {
        let (input, target) = (pair[0], pair[1]);
        let prev = if policy.resets(input == specials.start) {
            &zero
        } else {
            &state
        };
        step_hidden_into(prev, input as usize, params, &mut next)?;
        std::mem::swap(&mut state, &mut next);
        if target == specials.start {
            continue;
        }
        full_scores_into(&state, params, &mut u);
        let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + u.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let lp = u[target as usize] - lse;
        pass.log_prob += lp;
        pass.tokens += 1;
        sentence += lp;
        if target == specials.end {
            pass.sentences.push(sentence);
            sentence = 0.0;
        }
    }
    Ok(pass)
}

/// Perplexity of `ids` under the full softmax, scored left to right.
pub fn perplexity<R: Real>(
    params: &ModelParams<R>,
    ids: &[u32],
    specials: Specials,
    policy: HiddenPolicy,
) -> Result<EvalReport> {
    let pass = sequential_pass(params, ids, specials, policy)?;
    Ok(EvalReport::from_totals(pass.log_prob, pass.tokens, None))
}

/// [`perplexity`] with the per-sentence log-probabilities attached.
pub fn perplexity_with_sentences<R: Real>(
    params: &ModelParams<R>,
    ids: &[u32],
    specials: Specials,
    policy: HiddenPolicy,
) -> Result<EvalReport> {
    let pass = sequential_pass(params, ids, specials, policy)?;
    Ok(EvalReport::from_totals(pass.log_prob, pass.tokens, Some(pass.sentences)))
}

/// Natural-log probability of each complete sentence.
pub fn score_sentences<R: Real>(
    params: &ModelParams<R>,
    ids: &[u32],
    specials: Specials,
    policy: HiddenPolicy,
) -> Result<Vec<f64>> {
    Ok(sequential_pass(params, ids, specials, policy)?.sentences)
}

/// Evaluates `lanes` contiguous chunks independently, each cut at a
/// sentence start, and pools the totals.
pub fn perplexity_lanes<R: Real>(
    params: &ModelParams<R>,
    ids: &[u32],
    specials: Specials,
    policy: HiddenPolicy,
    lanes: usize,
) -> Result<EvalReport> {
    if lanes == 0 {
        return Err(Error::Config("lane count must be positive".into()));
    }
    let target_len = ids.len().div_ceil(lanes);
    let mut cuts = vec![0];
    let mut pos = target_len;
    while pos < ids.len() {
        match ids[pos..].iter().position(|&id| id == specials.start) {
            Some(off) => {
                cuts.push(pos + off);
                pos += off + target_len.max(1);
            }
            None => break,
        }
    }
    cuts.push(ids.len());
    let mut log_prob = 0.0;
    let mut tokens = 0;
    for w in cuts.windows(2) {
        let pass = sequential_pass(params, &ids[w[0]..w[1]], specials, policy)?;
        log_prob += pass.log_prob;
        tokens += pass.tokens;
    }
    Ok(EvalReport::from_totals(log_prob, tokens, None))
}

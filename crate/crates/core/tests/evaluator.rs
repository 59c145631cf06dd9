use blackout::corpus::Specials;
use blackout::eval::{perplexity, perplexity_lanes, perplexity_with_sentences};
use blackout::rnn::{HiddenPolicy, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straightforward scalar scoring, written independently of the crate's
/// forward pass.
fn naive_log_prob(p: &ModelParams<f64>, ids: &[u32], reset: bool) -> (f64, u64) {
    let h = p.hidden();
    let v = p.vocab_size();
    let mut s = vec![0.0; h];
    let mut total = 0.0;
    let mut n = 0;
    for w in ids.windows(2) {
        let (x, y) = (w[0] as usize, w[1] as usize);
        if reset && x == 0 {
            s = vec![0.0; h];
        }
        let mut next = vec![0.0; h];
        for i in 0..h {
            let mut z = p.w_in[x * h + i];
            for j in 0..h {
                z += p.w_r[i * h + j] * s[j];
            }
            next[i] = 1.0 / (1.0 + (-z).exp());
        }
        s = next;
        if y == 0 {
            continue;
        }
        let u: Vec<f64> = (0..v).map(|r| (0..h).map(|k| p.w_out[r * h + k] * s[k]).sum()).collect();
        let m = u.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + u.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
        total += u[y] - lse;
        n += 1;
    }
    (total, n)
}

fn random_stream(rng: &mut ChaCha8Rng, len: usize, v: u32) -> Vec<u32> {
    let mut ids = vec![0];
    while ids.len() < len {
        let n = rng.gen_range(1..8);
        for _ in 0..n {
            ids.push(rng.gen_range(3..v));
        }
        ids.push(1);
        ids.push(0);
    }
    ids.truncate(len);
    ids
}

#[test]
fn agrees_with_naive_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = ModelParams::<f64>::random(12, 4, 1.0, &mut rng);
    let ids = random_stream(&mut rng, 100, 12);
    for (policy, reset) in [(HiddenPolicy::ResetAtSentence, true), (HiddenPolicy::Continuous, false)] {
        let r = perplexity(&p, &ids, Specials::default(), policy).unwrap();
        let (lp, n) = naive_log_prob(&p, &ids, reset);
        assert_eq!(r.tokens, n);
        assert!(((r.log_prob - lp) / lp).abs() < 1e-9);
        let ppl = (-lp / n as f64).exp();
        assert!(((r.perplexity - ppl) / ppl).abs() < 1e-9);
    }
}

#[test]
fn report_is_self_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = ModelParams::<f32>::random(20, 5, 1.0, &mut rng);
    let ids = random_stream(&mut rng, 300, 20);
    let r = perplexity_with_sentences(&p, &ids, Specials::default(), HiddenPolicy::ResetAtSentence).unwrap();
    assert!(r.perplexity >= 1.0);
    assert!((r.perplexity - (-r.log_prob / r.tokens as f64).exp()).abs() < 1e-9 * r.perplexity);
    assert!((r.entropy_bits - r.perplexity.log2()).abs() < 1e-9);
    let complete: f64 = r.sentences.unwrap().iter().sum();
    assert!(complete <= 0.0 && complete >= r.log_prob - 1e-9 * r.log_prob.abs());
}

#[test]
fn lane_split_does_not_change_perplexity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = ModelParams::<f32>::random(30, 6, 1.0, &mut rng);
    let ids = random_stream(&mut rng, 2000, 30);
    let one = perplexity(&p, &ids, Specials::default(), HiddenPolicy::ResetAtSentence).unwrap();
    for lanes in [2, 4, 8, 16] {
        let many = perplexity_lanes(&p, &ids, Specials::default(), HiddenPolicy::ResetAtSentence, lanes).unwrap();
        assert_eq!(many.tokens, one.tokens);
        assert!(((many.perplexity - one.perplexity) / one.perplexity).abs() < 1e-6);
    }
}

#[test]
fn evaluation_is_a_pure_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = ModelParams::<f32>::random(15, 3, 1.0, &mut rng);
    let ids = random_stream(&mut rng, 400, 15);
    let a = perplexity(&p, &ids, Specials::default(), HiddenPolicy::ResetAtSentence).unwrap();
    let b = perplexity(&p, &ids, Specials::default(), HiddenPolicy::ResetAtSentence).unwrap();
    assert_eq!(a, b);
}

//! Power-raised unigram proposal and constant-time negative sampling.

use rand::Rng;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Walker/Vose alias table over `n` outcomes.
#[derive(Clone, Debug)]
pub struct AliasTable {
    accept: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Builds a table from probabilities that sum to one.
    pub fn new(probs: &[f64]) -> Self {
        let n = probs.len();
        let mut scaled: Vec<f64> = probs.iter().map(|&p| p * n as f64).collect();
        let mut accept = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();

        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);

        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            accept[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in large.into_iter().chain(small) {
            accept[i] = 1.0;
        }
        AliasTable { accept, alias }
    }

    pub fn len(&self) -> usize {
        self.accept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accept.is_empty()
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.gen_range(0..self.accept.len());
        if rng.gen::<f64>() < self.accept[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }

    /// Probability of each outcome implied by the table.
    pub fn implied_probs(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut out: Vec<f64> = self.accept.iter().map(|&a| a / n).collect();
        for (i, &a) in self.accept.iter().enumerate() {
            out[self.alias[i] as usize] += (1.0 - a) / n;
        }
        out
    }
}

/// `Q_α(w) ∝ count(w)^α` with an alias table for O(1) draws.
#[derive(Clone, Debug)]
pub struct ProposalDistribution {
    alpha: f64,
    probs: Vec<f64>,
    table: AliasTable,
    support: usize,
}

impl ProposalDistribution {
    /// Builds the proposal from raw counts; `0^0` is taken as 1.
    pub fn from_counts(counts: &[u64], alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        if counts.is_empty() || (alpha > 0.0 && counts.iter().all(|&c| c == 0)) {
            return Err(Error::DegenerateUnigram);
        }
        let weights: Vec<f64> = counts
            .iter()
            .map(|&c| if alpha == 0.0 { 1.0 } else { (c as f64).powf(alpha) })
            .collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self::from_probs_unchecked(alpha, probs))
    }

    pub fn build(vocab: &Vocabulary, alpha: f64) -> Result<Self> {
        Self::from_counts(vocab.counts(), alpha)
    }

    /// Uses `probs` as given; they must be non-negative and sum to one.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("proposal probabilities must be a distribution".into()));
        }
        Ok(Self::from_probs_unchecked(f64::NAN, probs))
    }

    fn from_probs_unchecked(alpha: f64, probs: Vec<f64>) -> Self {
        let table = AliasTable::new(&probs);
        let support = probs.iter().filter(|&&p| p > 0.0).count();
        ProposalDistribution {
            alpha,
            probs,
            table,
            support,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: usize) -> f64 {
        self.probs[id]
    }

    pub fn table(&self) -> &AliasTable {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// One unconditioned draw.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }

    /// Draws `k` ids i.i.d. from `Q_α`, redrawing whenever the target comes
    /// up, and records `q = 1/Q` for the target followed by every sample.
    pub fn draw<R: Rng + ?Sized>(&self, k: usize, target: usize, rng: &mut R) -> Result<SampleSet> {
        let mut set = SampleSet::default();
        self.draw_into(k, target, rng, &mut set)?;
        Ok(set)
    }

    /// Allocation-free variant of [`draw`](Self::draw).
    pub fn draw_into<R: Rng + ?Sized>(
        &self,
        k: usize,
        target: usize,
        rng: &mut R,
        set: &mut SampleSet,
    ) -> Result<()> {
        if target >= self.probs.len() {
            return Err(Error::IdOutOfRange {
                id: target,
                vocab_size: self.probs.len(),
            });
        }
        let q_target = self.probs[target];
        if q_target <= 0.0 {
            return Err(Error::TargetOutsideSupport(target));
        }
        if self.support <= 1 {
            return Err(Error::SingletonSupport);
        }
        set.target = target as u32;
        set.samples.clear();
        set.weights.clear();
        set.weights.push(1.0 / q_target);
        while set.samples.len() < k {
            let w = self.table.sample(rng);
            if w != target {
                set.samples.push(w as u32);
                set.weights.push(1.0 / self.probs[w]);
            }
        }
        Ok(())
    }
}

/// Target plus `K` negatives; `weights[0]` belongs to the target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    pub target: u32,
    pub samples: Vec<u32>,
    pub weights: Vec<f64>,
}

impl SampleSet {
    pub fn k(&self) -> usize {
        self.samples.len()
    }

    /// Target followed by the samples, aligned with `weights`.
    pub fn rows(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.target).chain(self.samples.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn unigram_and_uniform_limits() {
        let c = [4, 2, 1, 1];
        let q1 = ProposalDistribution::from_counts(&c, 1.0).unwrap();
        assert!(close(q1.probs(), &[0.5, 0.25, 0.125, 0.125], 1e-15));
        let q0 = ProposalDistribution::from_counts(&c, 0.0).unwrap();
        assert!(close(q0.probs(), &[0.25; 4], 1e-15));
    }

    #[test]
    fn square_root_unigram() {
        // 40-digit evaluation of sqrt(c) / Σ sqrt(c)
        let expected = [
            0.369_398_062_518_129_28,
            0.261_203_874_963_741_44,
            0.184_699_031_259_064_64,
            0.184_699_031_259_064_64,
        ];
        let q = ProposalDistribution::from_counts(&[4, 2, 1, 1], 0.5).unwrap();
        assert!(close(q.probs(), &expected, 1e-15));
    }

    #[test]
    fn zero_counts_keep_mass_below_one() {
        let q = ProposalDistribution::from_counts(&[0, 3, 1], 0.0).unwrap();
        assert!(q.prob(0) > 0.0);
        let q = ProposalDistribution::from_counts(&[0, 3, 1], 0.7).unwrap();
        assert_eq!(q.prob(0), 0.0);
    }

    #[test]
    fn rejects_bad_alpha_and_degenerate_counts() {
        assert!(matches!(
            ProposalDistribution::from_counts(&[1, 2], 1.5),
            Err(Error::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            ProposalDistribution::from_counts(&[0, 0], 1.0),
            Err(Error::DegenerateUnigram)
        ));
    }

    #[test]
    fn alias_table_reproduces_probs() {
        let probs = [0.5, 0.2, 0.15, 0.1, 0.05, 0.0];
        let t = AliasTable::new(&probs);
        assert!(close(&t.implied_probs(), &probs, 1e-12));
    }

    #[test]
    fn uniform_draw_weights_equal_vocab_size() {
        let q = ProposalDistribution::from_counts(&[5, 1, 1, 9], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = q.draw(2, 0, &mut rng).unwrap();
        assert_eq!(s.k(), 2);
        assert!(s.samples.iter().all(|&w| (1..4).contains(&w)));
        assert!(s.weights.iter().all(|&w| (w - 4.0).abs() < 1e-12));
    }

    #[test]
    fn forced_choice() {
        let q = ProposalDistribution::from_counts(&[1, 1], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(q.draw(1, 0, &mut rng).unwrap().samples, vec![1]);
        }
    }

    #[test]
    fn singleton_support_is_an_error() {
        let q = ProposalDistribution::from_counts(&[0, 7, 0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(q.draw(3, 1, &mut rng), Err(Error::SingletonSupport)));
        assert!(matches!(
            q.draw(3, 0, &mut rng),
            Err(Error::TargetOutsideSupport(0))
        ));
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let q = ProposalDistribution::from_counts(&[9, 4, 3, 2, 1], 0.6).unwrap();
        let a = q.draw(16, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = q.draw(16, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}

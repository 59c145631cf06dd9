//! Deterministic synthetic corpora.
//!
//! Sentences come from a sparse class-level Markov chain with Zipfian word
//! choice inside each class, which gives a skewed unigram and some
//! short-range structure for a recurrent model to pick up.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// Number of distinct lexical words, all of which occur in training.
    pub lexicon: usize,
    pub classes: usize,
    /// Successor classes per class in the Markov chain.
    pub successors: usize,
    pub zipf_exponent: f64,
    pub train_sentences: usize,
    /// Exact lexical token count of the training split (specials excluded).
    pub train_tokens: usize,
    pub valid_sentences: usize,
    pub test_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 10k training sentences, 71,350 tokens counting `</s>`, 3,720 word
    /// types counting `</s>`.
    fn default() -> Self {
        SyntheticSpec {
            lexicon: 3719,
            classes: 40,
            successors: 5,
            zipf_exponent: 1.1,
            train_sentences: 10_000,
            train_tokens: 61_350,
            valid_sentences: 1000,
            test_sentences: 1000,
            seed: 2016,
        }
    }
}

impl SyntheticSpec {
    /// A scaled-down corpus for quick runs.
    pub fn tiny(seed: u64) -> Self {
        SyntheticSpec {
            lexicon: 200,
            classes: 10,
            successors: 3,
            zipf_exponent: 1.1,
            train_sentences: 400,
            train_tokens: 2400,
            valid_sentences: 50,
            test_sentences: 50,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.lexicon < self.classes {
            return Err(Error::Config("need at least one word per class".into()));
        }
        if self.successors == 0 || self.successors > self.classes {
            return Err(Error::Config("successors must lie in 1..=classes".into()));
        }
        if self.train_sentences == 0 || self.train_tokens < self.train_sentences {
            return Err(Error::Config("every training sentence needs a word".into()));
        }
        if self.train_tokens < self.lexicon {
            return Err(Error::Config("too few training tokens to cover the lexicon".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<Sentence>,
    pub valid: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

struct Language {
    words: Vec<String>,
    /// Word ids of each class, most frequent first.
    members: Vec<Vec<usize>>,
    class_of: Vec<usize>,
    in_class: Vec<WeightedIndex<f64>>,
    start: WeightedIndex<f64>,
    next: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

impl Language {
    fn new(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let words: Vec<String> = (0..spec.lexicon).map(|i| format!("w{i:05}")).collect();
        let class_of: Vec<usize> = (0..spec.lexicon).map(|i| i % spec.classes).collect();
        let mut members = vec![Vec::new(); spec.classes];
        for (w, &c) in class_of.iter().enumerate() {
            members[c].push(w);
        }
        let in_class = members
            .iter()
            .map(|m| {
                let weights = (1..=m.len()).map(|r| (r as f64).powf(-spec.zipf_exponent));
                WeightedIndex::new(weights).expect("non-empty class")
            })
            .collect();
        let start = WeightedIndex::new((1..=spec.classes).map(|r| 1.0 / r as f64)).expect("classes");
        let next = (0..spec.classes)
            .map(|_| {
                let mut succ = Vec::with_capacity(spec.successors);
                while succ.len() < spec.successors {
                    let c = rng.gen_range(0..spec.classes);
                    if !succ.contains(&c) {
                        succ.push(c);
                    }
                }
                let w: Vec<f64> = (0..spec.successors).map(|_| rng.gen_range(0.2..1.0)).collect();
                (succ, WeightedIndex::new(w).expect("positive weights"))
            })
            .collect();
        Language {
            words,
            members,
            class_of,
            in_class,
            start,
            next,
        }
    }

    fn sentence(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut class = self.start.sample(rng);
        for _ in 0..len {
            out.push(self.members[class][self.in_class[class].sample(rng)]);
            let (succ, dist) = &self.next[class];
            class = succ[dist.sample(rng)];
        }
        out
    }

    fn to_text(&self, ids: &[usize]) -> Sentence {
        ids.iter().map(|&w| self.words[w].clone()).collect()
    }
}

fn sentence_length(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(2..=10)
}

/// Lengths for `n` sentences summing exactly to `total`, each at least 1.
fn exact_lengths(n: usize, total: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut lens: Vec<usize> = (0..n).map(|_| sentence_length(rng)).collect();
    let mut sum: usize = lens.iter().sum();
    while sum < total {
        lens[rng.gen_range(0..n)] += 1;
        sum += 1;
    }
    while sum > total {
        let i = rng.gen_range(0..n);
        if lens[i] > 1 {
            lens[i] -= 1;
            sum -= 1;
        }
    }
    lens
}

/// Generates train, validation and test splits.
///
/// The training split holds exactly `train_tokens` lexical tokens and every
/// lexicon word at least once; missing words replace a token whose word
/// occurs more than once, preferring one of the same class.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lang = Language::new(spec, &mut rng);

    let lens = exact_lengths(spec.train_sentences, spec.train_tokens, &mut rng);
    let mut train: Vec<Vec<usize>> = lens.iter().map(|&l| lang.sentence(l, &mut rng)).collect();
    let mut counts = vec![0usize; spec.lexicon];
    for s in &train {
        for &w in s {
            counts[w] += 1;
        }
    }
    let missing: Vec<usize> = (0..spec.lexicon).filter(|&w| counts[w] == 0).collect();
    for w in missing {
        let class = lang.class_of[w];
        let find = |same_class: bool| {
            train.iter().enumerate().find_map(|(si, s)| {
                s.iter()
                    .position(|&x| counts[x] > 1 && (!same_class || lang.class_of[x] == class))
                    .map(|ti| (si, ti))
            })
        };
        let slot = find(true).or_else(|| find(false));
        let (si, ti) = slot.ok_or_else(|| Error::Config("cannot cover the lexicon".into()))?;
        counts[train[si][ti]] -= 1;
        train[si][ti] = w;
        counts[w] += 1;
    }

    let mut split = |n: usize| -> Vec<Sentence> {
        (0..n)
            .map(|_| {
                let len = sentence_length(&mut rng);
                lang.to_text(&lang.sentence(len, &mut rng))
            })
            .collect()
    };
    let valid = split(spec.valid_sentences);
    let test = split(spec.test_sentences);
    Ok(SyntheticCorpus {
        train: train.iter().map(|s| lang.to_text(s)).collect(),
        valid,
        test,
    })
}

/// A vocabulary of `size` entries (specials included) with Zipfian counts.
pub fn zipf_vocabulary(size: usize, exponent: f64) -> Result<Vocabulary> {
    if size < 4 {
        return Err(Error::Config("vocabulary needs at least one lexical word".into()));
    }
    let top = 1_000_000f64;
    let entries = (0..size - 3)
        .map(|r| {
            let c = (top * ((r + 1) as f64).powf(-exponent)).ceil() as u64;
            (format!("w{r:06}"), c.max(1))
        })
        .collect();
    let sentences = (top / 10.0) as u64;
    Vocabulary::from_entries([sentences, sentences, 0], entries)
}

/// `len` ids drawn i.i.d. from the vocabulary's unigram, starting with
/// `<s>` and with a sentence break roughly every `sentence_len` tokens.
pub fn unigram_stream(vocab: &Vocabulary, len: usize, sentence_len: usize, seed: u64) -> Vec<u32> {
    let sp = vocab.specials();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexical: Vec<u64> = vocab.counts().iter().skip(3).copied().collect();
    let dist = WeightedIndex::new(&lexical).expect("lexical words with positive counts");
    let mut out = Vec::with_capacity(len);
    out.push(sp.start);
    let mut run = 0;
    while out.len() < len {
        if run == sentence_len {
            out.push(sp.end);
            if out.len() < len {
                out.push(sp.start);
            }
            run = 0;
        } else {
            out.push(dist.sample(&mut rng) as u32 + 3);
            run += 1;
        }
    }
    out
}

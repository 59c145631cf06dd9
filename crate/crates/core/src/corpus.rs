//! Vocabulary construction, sentence encoding and spliced BPTT batching.
//!
//! Sentences are encoded as `<s> w_1 .. w_n </s>` and concatenated into a
//! single id stream. The stream is cut into `B` contiguous lanes which are
//! walked `T` tokens at a time.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Number of reserved ids at the front of every vocabulary.
pub const NUM_SPECIALS: usize = 3;

/// A sentence as whitespace-separated tokens.
pub type Sentence = Vec<String>;

/// Ids of the reserved tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub start: u32,
    pub end: u32,
    pub unk: u32,
}

impl Default for Specials {
    fn default() -> Self {
        Specials {
            start: 0,
            end: 1,
            unk: 2,
        }
    }
}

/// Word/id map with occurrence counts.
///
/// Ids `0..3` are `<s>`, `</s>` and `<unk>`; the remaining ids are ordered by
/// descending count with lexicographic tie-breaking.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    id_of: HashMap<String, u32>,
    specials: Specials,
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, counts: Vec<u64>) -> Self {
        let id_of = words
            .iter()
            .enumerate()
            .map(|(id, w)| (w.clone(), id as u32))
            .collect();
        Vocabulary {
            words,
            counts,
            id_of,
            specials: Specials::default(),
        }
    }

    /// Builds a vocabulary from `(word, count)` pairs listed after the three
    /// specials, in id order.
    pub fn from_entries(specials_counts: [u64; 3], entries: Vec<(String, u64)>) -> Result<Self> {
        let mut words = vec![START_TOKEN.to_string(), END_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = specials_counts.to_vec();
        for (w, c) in entries {
            words.push(w);
            counts.push(c);
        }
        let vocab = Vocabulary::from_parts(words, counts);
        if vocab.id_of.len() != vocab.words.len() {
            return Err(Error::Config("duplicate vocabulary entry".into()));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Id of `token`, with out-of-vocabulary tokens mapped to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        self.id_of
            .get(token)
            .copied()
            .unwrap_or(self.specials.unk)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    /// Unigram distribution `count(w) / Σ count`.
    pub fn unigram(&self) -> Vec<f64> {
        let total = self.total_count() as f64;
        if total == 0.0 {
            return vec![0.0; self.len()];
        }
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Writes `token<TAB>count` lines; the line number is the id.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{}\t{}", word, count)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_tsv<R: Read>(input: R) -> Result<Self> {
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for (idx, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let (word, count) = line.split_once('\t').ok_or_else(|| Error::VocabFormat {
                line: lineno,
                reason: "missing tab separator".into(),
            })?;
            let count = count.trim().parse::<u64>().map_err(|e| Error::VocabFormat {
                line: lineno,
                reason: e.to_string(),
            })?;
            words.push(word.to_string());
            counts.push(count);
        }
        let expected = [START_TOKEN, END_TOKEN, UNK_TOKEN];
        if words.len() < NUM_SPECIALS || words[..NUM_SPECIALS] != expected {
            return Err(Error::VocabFormat {
                line: 1,
                reason: "special tokens must occupy the first three lines".into(),
            });
        }
        Ok(Vocabulary::from_parts(words, counts))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Vocabulary::read_tsv(fs::File::open(path)?)
    }
}

/// Counts tokens and keeps the most frequent `max_size - 3` of them.
///
/// `<s>` and `</s>` are counted once per sentence; dropped tokens are folded
/// into the `<unk>` count. `max_size` of `None` keeps every token.
pub fn build_vocab(sentences: &[Sentence], max_size: Option<usize>) -> Result<Vocabulary> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(max) = max_size {
        if max < NUM_SPECIALS + 1 {
            return Err(Error::Config(format!(
                "vocabulary size {} leaves no room beside the {} special tokens",
                max, NUM_SPECIALS
            )));
        }
    }

    let n_sentences = sentences.len() as u64;
    let mut unk = 0u64;
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for sentence in sentences {
        for token in sentence {
            match token.as_str() {
                START_TOKEN | END_TOKEN => {}
                UNK_TOKEN => unk += 1,
                t => *freq.entry(t).or_insert(0) += 1,
            }
        }
    }

    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep = max_size.map_or(ranked.len(), |m| (m - NUM_SPECIALS).min(ranked.len()));
    unk += ranked[keep..].iter().map(|&(_, c)| c).sum::<u64>();
    ranked.truncate(keep);

    let mut words = vec![START_TOKEN.to_string(), END_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut counts = vec![n_sentences, n_sentences, unk];
    for (w, c) in ranked {
        words.push(w.to_string());
        counts.push(c);
    }
    Ok(Vocabulary::from_parts(words, counts))
}

/// Encodes one sentence as `[<s>, w.., </s>]`.
pub fn encode_sentence(sentence: &[String], vocab: &Vocabulary) -> Vec<u32> {
    let sp = vocab.specials();
    let mut ids = Vec::with_capacity(sentence.len() + 2);
    ids.push(sp.start);
    ids.extend(sentence.iter().map(|t| vocab.id(t)));
    ids.push(sp.end);
    ids
}

/// Encodes and concatenates sentences into one id stream.
pub fn encode(sentences: &[Sentence], vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = Vec::new();
    for s in sentences {
        ids.extend(encode_sentence(s, vocab));
    }
    ids
}

/// Maps ids back to tokens, dropping sentence markers and splitting at `</s>`.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Vec<Sentence> {
    let sp = vocab.specials();
    let mut out = Vec::new();
    let mut current = Vec::new();
    for &id in ids {
        if id == sp.start {
            current.clear();
        } else if id == sp.end {
            out.push(std::mem::take(&mut current));
        } else {
            current.push(vocab.word(id).unwrap_or(UNK_TOKEN).to_string());
        }
    }
    out
}

/// Reads one sentence per line, whitespace-tokenized. Blank lines are empty
/// sentences.
pub fn read_sentences<R: Read>(input: R) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        out.push(line.split_whitespace().map(str::to_string).collect());
    }
    Ok(out)
}

pub fn load_sentences(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    read_sentences(fs::File::open(path)?)
}

pub fn write_sentences<W: Write>(sentences: &[Sentence], mut out: W) -> Result<()> {
    for s in sentences {
        writeln!(out, "{}", s.join(" "))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub bptt_len: usize,
}

impl BatchConfig {
    pub fn new(batch_size: usize, bptt_len: usize) -> Result<Self> {
        if batch_size == 0 || bptt_len == 0 {
            return Err(Error::Config(
                "batch size and BPTT length must be positive".into(),
            ));
        }
        Ok(BatchConfig {
            batch_size,
            bptt_len,
        })
    }
}

/// One `B x width` slice of the spliced stream, stored lane-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BpttBlock {
    pub lanes: usize,
    pub width: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// Input is `<s>`: the hidden state is reset before this position.
    pub lane_reset: Vec<bool>,
    /// Target is a real prediction (`<s>` is never predicted).
    pub scored: Vec<bool>,
}

impl BpttBlock {
    #[inline]
    pub fn index(&self, lane: usize, t: usize) -> usize {
        lane * self.width + t
    }

    pub fn input(&self, lane: usize, t: usize) -> u32 {
        self.inputs[self.index(lane, t)]
    }

    pub fn target(&self, lane: usize, t: usize) -> u32 {
        self.targets[self.index(lane, t)]
    }

    pub fn scored_count(&self) -> usize {
        self.scored.iter().filter(|&&s| s).count()
    }
}

/// Cursor over the BPTT blocks of a spliced stream.
///
/// Lanes are `len / B` tokens long (the tail is dropped). Every block is `T`
/// wide except possibly the last, which covers the remaining pairs.
#[derive(Clone, Debug)]
pub struct BlockIter<'a> {
    ids: &'a [u32],
    specials: Specials,
    lanes: usize,
    lane_len: usize,
    bptt_len: usize,
    pos: usize,
}

impl<'a> BlockIter<'a> {
    pub fn lane_len(&self) -> usize {
        self.lane_len
    }

    pub fn num_blocks(&self) -> usize {
        (self.lane_len - 1).div_ceil(self.bptt_len)
    }
}

impl Iterator for BlockIter<'_> {
    type Item = BpttBlock;

    fn next(&mut self) -> Option<BpttBlock> {
        let pairs = self.lane_len - 1;
        if self.pos >= pairs {
            return None;
        }
        let width = self.bptt_len.min(pairs - self.pos);
        let n = self.lanes * width;
        let mut block = BpttBlock {
            lanes: self.lanes,
            width,
            inputs: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            lane_reset: Vec::with_capacity(n),
            scored: Vec::with_capacity(n),
        };
        for lane in 0..self.lanes {
            let base = lane * self.lane_len + self.pos;
            for t in 0..width {
                let input = self.ids[base + t];
                let target = self.ids[base + t + 1];
                block.inputs.push(input);
                block.targets.push(target);
                block.lane_reset.push(input == self.specials.start);
                block.scored.push(target != self.specials.start);
            }
        }
        self.pos += width;
        Some(block)
    }
}

/// Splits `ids` into `B` lanes and iterates `T`-token blocks over them.
pub fn batch_blocks<'a>(
    ids: &'a [u32],
    cfg: BatchConfig,
    specials: Specials,
) -> Result<BlockIter<'a>> {
    let needed = cfg.batch_size * (cfg.bptt_len + 1);
    if ids.len() < needed {
        return Err(Error::InsufficientTokens {
            tokens: ids.len(),
            needed,
        });
    }
    Ok(BlockIter {
        ids,
        specials,
        lanes: cfg.batch_size,
        lane_len: ids.len() / cfg.batch_size,
        bptt_len: cfg.bptt_len,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(text: &str) -> Vec<Sentence> {
        read_sentences(text.as_bytes()).unwrap()
    }

    #[test]
    fn counts_and_orders_words() {
        let v = build_vocab(&sents("a a b"), None).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), 4);
        assert_eq!(&v.counts()[3..], &[2, 1]);
        // one sentence: <s> and </s> once each, no unknowns
        assert_eq!(&v.counts()[..3], &[1, 1, 0]);
        assert_eq!(v.total_count(), 5);
    }

    #[test]
    fn truncation_maps_rare_words_to_unk() {
        let v = build_vocab(&sents("a a b"), Some(NUM_SPECIALS + 1)).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.contains("a"));
        assert_eq!(v.id("b"), v.specials().unk);
        assert_eq!(v.counts()[2], 1);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(&sents("c b a\nb c a"), None).unwrap();
        assert_eq!(&v.words()[3..], &["a", "b", "c"]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(build_vocab(&[], None), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn tiny_max_size_is_rejected() {
        assert!(build_vocab(&sents("a"), Some(NUM_SPECIALS)).is_err());
    }

    #[test]
    fn encode_wraps_sentences() {
        let v = build_vocab(&sents("a cat"), None).unwrap();
        let sp = v.specials();
        let a = v.id("a");
        let cat = v.id("cat");
        assert_eq!(encode(&sents("a cat"), &v), vec![sp.start, a, cat, sp.end]);
        assert_eq!(encode(&sents("a zzz"), &v), vec![sp.start, a, sp.unk, sp.end]);
        assert_eq!(encode(&[vec![]], &v), vec![sp.start, sp.end]);
    }

    #[test]
    fn blocks_cover_single_lane() {
        let ids: Vec<u32> = (10..20).collect();
        let blocks: Vec<_> = batch_blocks(&ids, BatchConfig::new(1, 3).unwrap(), Specials::default())
            .unwrap()
            .collect();
        assert_eq!(blocks.len(), 3);
        let inputs: Vec<u32> = blocks.iter().flat_map(|b| b.inputs.clone()).collect();
        let targets: Vec<u32> = blocks.iter().flat_map(|b| b.targets.clone()).collect();
        assert_eq!(inputs, (10..19).collect::<Vec<_>>());
        assert_eq!(targets, (11..20).collect::<Vec<_>>());
    }

    #[test]
    fn lanes_truncate_tail() {
        let ids: Vec<u32> = (100..121).collect();
        let it = batch_blocks(&ids, BatchConfig::new(2, 3).unwrap(), Specials::default()).unwrap();
        assert_eq!(it.lane_len(), 10);
        let blocks: Vec<_> = it.collect();
        let lane1: Vec<u32> = blocks
            .iter()
            .flat_map(|b| (0..b.width).map(move |t| b.target(1, t)))
            .collect();
        assert_eq!(lane1, (111..120).collect::<Vec<_>>());
        assert!(blocks.iter().all(|b| !b.targets.contains(&120)));
    }

    #[test]
    fn reset_marks_sentence_starts() {
        let sp = Specials::default();
        // </s> <s> boundary inside the lane
        let ids = vec![sp.start, 5, sp.end, sp.start, 6, sp.end];
        let block = batch_blocks(&ids, BatchConfig::new(1, 5).unwrap(), sp)
            .unwrap()
            .next()
            .unwrap();
        assert_eq!(block.lane_reset, vec![true, false, false, true, false]);
        assert_eq!(block.scored, vec![true, true, false, true, true]);
    }

    #[test]
    fn short_stream_is_rejected() {
        let ids = vec![0u32; 7];
        let err = batch_blocks(&ids, BatchConfig::new(2, 3).unwrap(), Specials::default());
        assert!(matches!(err, Err(Error::InsufficientTokens { .. })));
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocab(&sents("x y y z\nz z"), None).unwrap();
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "<s>\t2\n</s>\t2\n<unk>\t0\nz\t3\ny\t2\nx\t1\n"
        );
        assert_eq!(Vocabulary::read_tsv(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn tsv_without_specials_is_rejected() {
        assert!(Vocabulary::read_tsv("a\t1\n".as_bytes()).is_err());
    }
}

//! Exact-softmax perplexity and per-sentence scores for a model.

use blackout::corpus::{self, Specials};
use blackout::eval;
use blackout::rnn::{HiddenPolicy, ModelParams};
use blackout::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<()> {
    let sentences = corpus::read_sentences("a b c\nb c a\nc a b d\n".as_bytes())?;
    let vocab = corpus::build_vocab(&sentences, None)?;
    let ids = corpus::encode(&sentences, &vocab);

    // all-zero weights give the uniform distribution
    let uniform = ModelParams::<f32>::zeros(vocab.len(), 4);
    let r = eval::perplexity(&uniform, &ids, Specials::default(), HiddenPolicy::ResetAtSentence)?;
    println!("uniform model: perplexity {:.3} (V = {})", r.perplexity, vocab.len());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let random = ModelParams::<f32>::random(vocab.len(), 4, 1.0, &mut rng);
    let r = eval::perplexity_with_sentences(&random, &ids, vocab.specials(), HiddenPolicy::ResetAtSentence)?;
    println!("{}", serde_json::to_string_pretty(&r).expect("serializable report"));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

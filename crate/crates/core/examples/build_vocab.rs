//! Vocabulary building, encoding and BPTT batching on a toy corpus.

use blackout::corpus::{self, batch_blocks, BatchConfig};
use blackout::Result;

pub fn run_example() -> Result<()> {
    let text = "the cat sat\nthe dog sat\na cat ran\nthe cat ran far\n";
    let sentences = corpus::read_sentences(text.as_bytes())?;
    let vocab = corpus::build_vocab(&sentences, Some(8))?;
    for (id, (w, c)) in vocab.words().iter().zip(vocab.counts()).enumerate() {
        println!("{id:>2} {w:<6} {c}");
    }

    let ids = corpus::encode(&sentences, &vocab);
    println!("encoded: {ids:?}");
    let back = corpus::decode(&ids, &vocab);
    println!("decoded: {back:?}");

    let cfg = BatchConfig::new(2, 4)?;
    for (n, block) in batch_blocks(&ids, cfg, vocab.specials())?.enumerate() {
        println!(
            "block {n}: inputs {:?} targets {:?} resets {:?}",
            block.inputs, block.targets, block.lane_reset
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

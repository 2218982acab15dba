//! Generate the two-grammar synthetic corpus and show a few pairs with the
//! rule that produced them.
//!
//! cargo run --example synthetic_corpus -- [seed] [pairs] [mix]

use lms2s::data::{generate_synthetic_heterogeneous, synthetic_vocabulary, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let n: usize = args.next().map_or(Ok(8), |s| s.parse())?;
    let mix: f64 = args.next().map_or(Ok(0.5), |s| s.parse())?;

    let set = generate_synthetic_heterogeneous(seed, n, mix, Split::Train)?;
    let vocab = synthetic_vocabulary();
    for (pair, grammar) in set.corpus.pairs.iter().zip(&set.grammars) {
        println!(
            "{:<10} {:<30} -> {}",
            format!("{grammar:?}"),
            vocab.decode(&pair.source).join(" "),
            vocab.decode(&pair.target).join(" ")
        );
    }
    Ok(())
}

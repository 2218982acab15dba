//! Corpus BLEU-4, teacher-forced token accuracy, exact match and Spearman
//! correlation on small hand-made sequences.
//!
//! cargo run --example metrics

use lms2s::metrics::{corpus_bleu, exact_match, spearman, token_accuracy};

fn main() {
    let references = vec![vec![10, 11, 12, 13, 14], vec![20, 21, 22, 23]];
    let outputs = vec![vec![10, 11, 12, 13, 14], vec![20, 21, 29, 23]];
    println!("bleu4        {:.4}", corpus_bleu(&outputs, &references));
    println!("exact match  {:.4}", exact_match(&outputs, &references));
    // Teacher forcing shares positions with the reference, so a wrong token
    // costs exactly one position.
    println!("token acc    {:.4}", token_accuracy(&outputs, &references));

    let silhouettes = [0.21, 0.35, 0.48, 0.55, 0.61];
    let accuracies = [0.70, 0.74, 0.73, 0.80, 0.82];
    match spearman(&silhouettes, &accuracies) {
        Some(rho) => println!("spearman     {rho:.4}"),
        None => println!("spearman     undefined"),
    }
}

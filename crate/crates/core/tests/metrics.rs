mod common;

use common::{bleu_cases, token_accuracy_case, token_accuracy_loop};
use lms2s::metrics::{corpus_bleu, exact_match, ranks, spearman, token_accuracy};
use proptest::prelude::*;

#[test]
fn bleu_matches_hand_values() {
    for case in bleu_cases() {
        let got = corpus_bleu(&case.hypotheses, &case.references);
        assert!(
            (got - case.expected).abs() < 1e-12,
            "{}: {got} vs {}",
            case.name,
            case.expected
        );
    }
}

#[test]
fn empty_hypotheses_score_zero_bleu() {
    assert_eq!(corpus_bleu(&[vec![]], &[vec![4, 5, 6, 7]]), 0.0);
}

#[test]
fn token_accuracy_matches_position_loop() {
    for seed in 0..200 {
        let (p, r) = token_accuracy_case(seed);
        assert_eq!(token_accuracy(&p, &r), token_accuracy_loop(&p, &r), "seed {seed}");
    }
}

#[test]
fn exact_match_counts_whole_sequences() {
    let outs = vec![vec![4, 5], vec![4], vec![]];
    let refs = vec![vec![4, 5], vec![4, 5], vec![6]];
    assert!((exact_match(&outs, &refs) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn ranks_average_ties() {
    assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
}

#[test]
fn spearman_of_constant_side_is_undefined() {
    assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
}

proptest! {
    #[test]
    fn spearman_is_one_for_monotone_maps(xs in prop::collection::vec(-100.0f64..100.0, 2..20)) {
        let mut distinct = xs.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assume!(distinct.len() >= 2);
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0).collect();
        prop_assert!((spearman(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        prop_assert!((spearman(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_lies_in_unit_interval(seed in any::<u64>()) {
        let (p, r) = token_accuracy_case(seed);
        let b = corpus_bleu(&p, &r);
        prop_assert!((0.0..=1.0).contains(&b));
    }
}

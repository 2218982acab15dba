//! Evaluation metrics.

use std::collections::HashMap;

use crate::data::PAD;

pub const BLEU_ORDER: usize = 4;

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with uniform weights over 1..=4-grams, clipped n-gram
/// precision, and the brevity penalty. No smoothing: any zero precision
/// gives a score of 0.
pub fn corpus_bleu(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> f64 {
    assert_eq!(hypotheses.len(), references.len());
    let mut matched = [0usize; BLEU_ORDER];
    let mut total = [0usize; BLEU_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            matched[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..BLEU_ORDER {
        if matched[n] == 0 || total[n] == 0 {
            return 0.0;
        }
        log_p += (matched[n] as f64 / total[n] as f64).ln() / BLEU_ORDER as f64;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * log_p.exp()
}

/// Fraction of non-PAD reference positions where the prediction agrees.
///
/// `predictions[i][t]` is the model's choice at position `t` given the
/// reference prefix (teacher forcing), so both sequences share positions.
pub fn token_accuracy(predictions: &[Vec<usize>], references: &[Vec<usize>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (p, r) in predictions.iter().zip(references) {
        for (t, &tok) in r.iter().enumerate() {
            if tok == PAD {
                continue;
            }
            total += 1;
            if p.get(t) == Some(&tok) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

pub fn exact_match(outputs: &[Vec<usize>], references: &[Vec<usize>]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let hits = outputs.iter().zip(references).filter(|(o, r)| o == r).count();
    hits as f64 / outputs.len() as f64
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks). `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    pearson(&ranks(x), &ranks(y))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

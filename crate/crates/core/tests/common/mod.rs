//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use lms2s::autodiff::{Tape, Var};
use lms2s::config::PipelineConfig;
use lms2s::data::PAD;
use lms2s::gradcheck::{grad_check, grad_check_params, CheckGroup, GradCheckReport};
use lms2s::model::{Classifier, Decoder, EncoderOutput, Enhancer};
use lms2s::nn::{LstmCell, Parameterized};
use lms2s::rng::Rng;
use lms2s::tensor::{Tensor, TensorError};

pub const GRAD_H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Small model and corpus settings that keep a full pipeline under a second.
pub fn tiny_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        hidden: 6,
        latent: 5,
        embed: 4,
        epochs: 2,
        train_size: 40,
        valid_size: 12,
        seed,
        ..PipelineConfig::default()
    };
    cfg.sac.max_steps = 30;
    cfg.sac.episode_len = 10;
    cfg.sac.learning_starts = 10;
    cfg.sac.batch = 8;
    cfg.sac.hidden = 8;
    cfg
}

/// Mean Silhouette straight from the definition, recomputing every distance.
/// `None` when fewer than two clusters are non-empty.
pub fn brute_silhouette(points: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..points.len() {
        let own: Vec<usize> = (0..points.len())
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        for &c in present.iter().filter(|&&c| c != labels[i]) {
            let other: Vec<usize> = (0..points.len()).filter(|&j| labels[j] == c).collect();
            let d = other.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / other.len() as f64;
            b = b.min(d);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Some(total / points.len() as f64)
}

/// Position-by-position agreement over non-PAD reference tokens.
pub fn token_accuracy_loop(predictions: &[Vec<usize>], references: &[Vec<usize>]) -> f64 {
    let mut hit = 0;
    let mut total = 0;
    for k in 0..references.len() {
        for t in 0..references[k].len() {
            if references[k][t] == PAD {
                continue;
            }
            total += 1;
            if t < predictions[k].len() && predictions[k][t] == references[k][t] {
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

pub fn matmul_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

/// Dot-product attention for one query over `len` memory rows of width `d`.
pub fn attention_loop(query: &[f64], memory: &[f64], len: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = (0..len)
        .map(|i| (0..d).map(|j| query[j] * memory[i * d + j]).sum())
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let context = (0..d)
        .map(|j| (0..len).map(|i| weights[i] * memory[i * d + j]).sum())
        .collect();
    (context, weights)
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::normal(shape, 1.0, rng).with_grad()
}

/// Values whose magnitude stays in `[lo, hi]`, random sign.
fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform(lo, hi);
            if rng.uniform(0.0, 1.0) < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap().with_grad()
}

fn random_weights(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

/// Reduces `out` to a scalar through fixed random weights, so every entry
/// contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, out: Var, w: &[f64]) -> Result<Var, TensorError> {
    let z = tape.mul_const(out, w.to_vec())?;
    Ok(tape.sum(z))
}

pub const OPS: [&str; 29] = [
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "minimum",
    "add_bias",
    "scale",
    "add_scalar",
    "scale_by",
    "mul_const",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "ln",
    "square",
    "clamp",
    "softmax",
    "log_softmax",
    "nll_loss",
    "concat_cols",
    "concat_rows",
    "slice_cols",
    "slice_rows",
    "gather_rows",
    "sum",
    "mean",
    "sum_cols",
];

pub const COMPOSITES: [&str; 5] = ["lstm_cell", "attention", "enhancer", "classifier", "decode_step"];

/// Finite-difference check of one tape operation on random inputs.
pub fn op_report(op: &str, seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let r = 1 + rng.below(3);
    let c = 1 + rng.below(4);
    let k = 1 + rng.below(3);
    let w = random_weights(&mut rng, 64);
    let ws = |n: usize| w[..n].to_vec();
    let single = |t: Tensor| vec![CheckGroup::new(op, vec![t])];

    type F = Box<dyn Fn(&mut Tape, &[Vec<Var>]) -> Result<Var, TensorError>>;
    let unary = |f: fn(&mut Tape, Var) -> Var, n: usize| -> F {
        let w = ws(n);
        Box::new(move |t: &mut Tape, v: &[Vec<Var>]| {
            let y = f(t, v[0][0]);
            weighted_sum(t, y, &w)
        })
    };
    let (groups, f): (Vec<CheckGroup>, F) = match op {
        "matmul" => {
            let w = ws(r * c);
            (
                vec![CheckGroup::new(
                    op,
                    vec![normal(&mut rng, &[r, k]), normal(&mut rng, &[k, c])],
                )],
                Box::new(move |t, v| {
                    let y = t.matmul(v[0][0], v[0][1])?;
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "transpose" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.transpose(a), r * c)),
        "add" | "sub" | "mul" | "minimum" => {
            let a = normal(&mut rng, &[r, c]);
            let gap = away_from_zero(&mut rng, &[r, c], 0.1, 1.0);
            let b_data: Vec<f64> = a.data().iter().zip(gap.data()).map(|(x, g)| x + g).collect();
            let b = Tensor::new(vec![r, c], b_data).unwrap().with_grad();
            let w = ws(r * c);
            let name = op.to_string();
            (
                vec![CheckGroup::new(op, vec![a, b])],
                Box::new(move |t, v| {
                    let (a, b) = (v[0][0], v[0][1]);
                    let y = match name.as_str() {
                        "add" => t.add(a, b)?,
                        "sub" => t.sub(a, b)?,
                        "mul" => t.mul(a, b)?,
                        _ => t.minimum(a, b)?,
                    };
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "add_bias" => {
            let w = ws(r * c);
            (
                vec![CheckGroup::new(
                    op,
                    vec![normal(&mut rng, &[r, c]), normal(&mut rng, &[c])],
                )],
                Box::new(move |t, v| {
                    let y = t.add_bias(v[0][0], v[0][1])?;
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "scale" => {
            let s = rng.uniform(-2.0, 2.0);
            let w = ws(r * c);
            (
                single(normal(&mut rng, &[r, c])),
                Box::new(move |t, v| {
                    let y = t.scale(v[0][0], s);
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "add_scalar" => {
            let s = rng.uniform(-2.0, 2.0);
            let w = ws(r * c);
            (
                single(normal(&mut rng, &[r, c])),
                Box::new(move |t, v| {
                    let y = t.add_scalar(v[0][0], s);
                    let y = t.square(y);
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "scale_by" => {
            let w = ws(r * c);
            (
                vec![CheckGroup::new(
                    op,
                    vec![normal(&mut rng, &[r, c]), normal(&mut rng, &[1, 1])],
                )],
                Box::new(move |t, v| {
                    let y = t.scale_by(v[0][0], v[0][1])?;
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "mul_const" => {
            let mask = random_weights(&mut rng, r * c);
            let w = ws(r * c);
            (
                single(normal(&mut rng, &[r, c])),
                Box::new(move |t, v| {
                    let y = t.mul_const(v[0][0], mask.clone())?;
                    let y = t.square(y);
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "sigmoid" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.sigmoid(a), r * c)),
        "tanh" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.tanh(a), r * c)),
        "relu" => (
            single(away_from_zero(&mut rng, &[r, c], 0.05, 2.0)),
            unary(|t, a| t.relu(a), r * c),
        ),
        "exp" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.exp(a), r * c)),
        "ln" => {
            let data = (0..r * c).map(|_| rng.uniform(0.3, 3.0)).collect();
            let x = Tensor::new(vec![r, c], data).unwrap().with_grad();
            (single(x), unary(|t, a| t.ln(a), r * c))
        }
        "square" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.square(a), r * c)),
        "clamp" => {
            // Magnitudes avoid the bounds at +-0.5 and zero.
            let data = (0..r * c)
                .map(|_| {
                    let m = if rng.uniform(0.0, 1.0) < 0.5 {
                        rng.uniform(0.05, 0.45)
                    } else {
                        rng.uniform(0.55, 1.5)
                    };
                    if rng.uniform(0.0, 1.0) < 0.5 {
                        -m
                    } else {
                        m
                    }
                })
                .collect();
            let x = Tensor::new(vec![r, c], data).unwrap().with_grad();
            (single(x), unary(|t, a| t.clamp(a, -0.5, 0.5), r * c))
        }
        "softmax" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.softmax(a), r * c)),
        "log_softmax" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.log_softmax(a), r * c)),
        "nll_loss" => {
            let targets: Vec<usize> = (0..r).map(|_| rng.below(c)).collect();
            let weights: Vec<f64> = (0..c).map(|_| rng.uniform(0.2, 2.0)).collect();
            (
                single(normal(&mut rng, &[r, c])),
                Box::new(move |t, v| {
                    let lp = t.log_softmax(v[0][0]);
                    t.nll_loss(lp, &targets, &weights)
                }),
            )
        }
        "concat_cols" | "concat_rows" => {
            let by_cols = op == "concat_cols";
            let (s1, s2) = if by_cols { ([r, c], [r, k]) } else { ([r, c], [k, c]) };
            let w = ws(r * c + if by_cols { r * k } else { k * c });
            (
                vec![CheckGroup::new(op, vec![normal(&mut rng, &s1), normal(&mut rng, &s2)])],
                Box::new(move |t, v| {
                    let y = if by_cols {
                        t.concat_cols(&[v[0][0], v[0][1]])?
                    } else {
                        t.concat_rows(&[v[0][0], v[0][1]])?
                    };
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "slice_cols" => {
            let start = rng.below(c);
            let len = 1 + rng.below(c - start);
            let w = ws(r * len);
            (
                single(normal(&mut rng, &[r, c])),
                Box::new(move |t, v| {
                    let y = t.slice_cols(v[0][0], start, len)?;
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "slice_rows" => {
            let start = rng.below(r);
            let len = 1 + rng.below(r - start);
            let w = ws(len * c);
            (
                single(normal(&mut rng, &[r, c])),
                Box::new(move |t, v| {
                    let y = t.slice_rows(v[0][0], start, len)?;
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "gather_rows" => {
            // Repeated ids exercise gradient accumulation into one row.
            let ids: Vec<usize> = (0..k + 2).map(|_| rng.below(r)).collect();
            let w = ws(ids.len() * c);
            (
                single(normal(&mut rng, &[r, c])),
                Box::new(move |t, v| {
                    let y = t.gather_rows(v[0][0], &ids)?;
                    weighted_sum(t, y, &w)
                }),
            )
        }
        "sum" => (
            single(normal(&mut rng, &[r, c])),
            Box::new(|t, v| {
                let y = t.square(v[0][0]);
                Ok(t.sum(y))
            }),
        ),
        "mean" => (
            single(normal(&mut rng, &[r, c])),
            Box::new(|t, v| {
                let y = t.square(v[0][0]);
                Ok(t.mean(y))
            }),
        ),
        "sum_cols" => (single(normal(&mut rng, &[r, c])), unary(|t, a| t.sum_cols(a), r)),
        other => panic!("no gradient case for `{other}`"),
    };
    grad_check(&groups, f, GRAD_H, GRAD_TOL).expect("finite forward pass")
}

fn jitter<P: Parameterized>(p: &mut P, rng: &mut Rng) {
    p.visit_mut(&mut |t| {
        t.data_mut().iter_mut().for_each(|x| *x += 0.5 * rng.normal());
    });
}

fn constant(tape: &mut Tape, rng: &mut Rng, rows: usize, cols: usize) -> Var {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    tape.constant(rows, cols, data).unwrap()
}

/// Finite-difference check of every parameter of one layer or model piece,
/// driven through the layer's own binding code.
pub fn composite_report(name: &str, seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let input_seed = rng.next_u64();
    let w = random_weights(&mut rng, 64);
    match name {
        "lstm_cell" => {
            let mut cell = LstmCell::new(3, 2, &mut rng);
            jitter(&mut cell, &mut rng);
            grad_check_params(
                &cell,
                |p, tape| {
                    let mut r = Rng::new(input_seed);
                    let b = p.bind(tape);
                    let (x, h, c) = (
                        constant(tape, &mut r, 1, 3),
                        constant(tape, &mut r, 1, 2),
                        constant(tape, &mut r, 1, 2),
                    );
                    let (h2, c2) = b.step(tape, x, h, c)?;
                    let hc = tape.concat_cols(&[h2, c2])?;
                    let loss = weighted_sum(tape, hc, &w[..4])?;
                    let mut vars = Vec::new();
                    b.vars(&mut vars);
                    Ok((loss, vars))
                },
                GRAD_H,
                GRAD_TOL,
            )
        }
        "attention" => {
            let (vocab, embed, width, latent, len) = (5, 2, 4, 3, 4);
            let mut dec = Decoder::new(vocab, embed, width, latent, &mut rng);
            jitter(&mut dec, &mut rng);
            grad_check_params(
                &dec,
                |p, tape| {
                    let mut r = Rng::new(input_seed);
                    let b = p.bind(tape);
                    let enc = fake_encoding(tape, &mut r, len, width);
                    let mem = b.memory(tape, &enc)?;
                    let q = constant(tape, &mut r, 1, latent);
                    let (ctx, weights) = b.attend(tape, q, &mem)?;
                    let both = tape.concat_cols(&[ctx, weights])?;
                    let loss = weighted_sum(tape, both, &w[..latent + len])?;
                    Ok((loss, b.vars()))
                },
                GRAD_H,
                GRAD_TOL,
            )
        }
        "enhancer" => {
            let enh = Enhancer::new(4, 3, &mut rng);
            grad_check_params(
                &enh,
                |p, tape| {
                    let mut r = Rng::new(input_seed);
                    let b = p.bind(tape);
                    let h = constant(tape, &mut r, 2, 4);
                    let z = b.enhance(tape, h)?;
                    let loss = weighted_sum(tape, z, &w[..6])?;
                    Ok((loss, b.vars()))
                },
                GRAD_H,
                GRAD_TOL,
            )
        }
        "classifier" => {
            let mut clf = Classifier::new(3, 3, &mut rng).unwrap();
            clf.set_frozen(false);
            grad_check_params(
                &clf,
                |p, tape| {
                    let mut r = Rng::new(input_seed);
                    let b = p.bind(tape);
                    let x = constant(tape, &mut r, 4, 3);
                    let probs = b.probs(tape, x)?;
                    let loss = weighted_sum(tape, probs, &w[..12])?;
                    Ok((loss, b.vars()))
                },
                GRAD_H,
                GRAD_TOL,
            )
        }
        "decode_step" => {
            let (vocab, embed, width, latent, len) = (6, 3, 4, 3, 3);
            let mut dec = Decoder::new(vocab, embed, width, latent, &mut rng);
            jitter(&mut dec, &mut rng);
            let prev = rng.below(vocab);
            let target = rng.below(vocab);
            grad_check_params(
                &dec,
                |p, tape| {
                    let mut r = Rng::new(input_seed);
                    let b = p.bind(tape);
                    let enc = fake_encoding(tape, &mut r, len, width);
                    let r_e = constant(tape, &mut r, 1, latent);
                    let mem = b.memory(tape, &enc)?;
                    let mut state = b.initial_state(tape, r_e)?;
                    state.prev_token = prev;
                    let (logits, next) = b.step(tape, &mem, state, &mut None)?;
                    let lp = tape.log_softmax(logits);
                    let nll = tape.nll_loss(lp, &[target], &[1.0; 6])?;
                    let hc = tape.concat_cols(&[next.hidden, next.cell])?;
                    let state_term = weighted_sum(tape, hc, &w[..2 * latent])?;
                    let loss = tape.add(nll, state_term)?;
                    Ok((loss, b.vars()))
                },
                GRAD_H,
                GRAD_TOL,
            )
        }
        other => panic!("no composite named `{other}`"),
    }
    .expect("finite forward pass")
}

fn fake_encoding(tape: &mut Tape, rng: &mut Rng, len: usize, width: usize) -> EncoderOutput {
    EncoderOutput {
        step_outputs: constant(tape, rng, len, width),
        final_hidden: constant(tape, rng, 1, width),
        final_cell: constant(tape, rng, 1, width),
        len,
    }
}

pub struct BleuCase {
    pub name: &'static str,
    pub hypotheses: Vec<Vec<usize>>,
    pub references: Vec<Vec<usize>>,
    pub expected: f64,
}

/// Hand-derived corpus BLEU-4 values (uniform weights, clipped counts,
/// brevity penalty).
pub fn bleu_cases() -> Vec<BleuCase> {
    vec![
        BleuCase {
            name: "identical",
            hypotheses: vec![vec![10, 11, 12, 13, 14]],
            references: vec![vec![10, 11, 12, 13, 14]],
            expected: 1.0,
        },
        BleuCase {
            name: "no shared token",
            hypotheses: vec![vec![10, 11, 12, 13]],
            references: vec![vec![20, 21, 22, 23]],
            expected: 0.0,
        },
        // Precisions 5/5, 4/4, 3/3, 2/2; hypothesis 5 vs reference 6 tokens.
        BleuCase {
            name: "short hypothesis",
            hypotheses: vec![vec![10, 11, 12, 13, 14]],
            references: vec![vec![10, 11, 12, 13, 14, 15]],
            expected: (1.0f64 - 6.0 / 5.0).exp(),
        },
        // One substituted token: 5/6, 3/5, 2/4, 1/3.
        BleuCase {
            name: "one substitution",
            hypotheses: vec![vec![10, 11, 12, 13, 14, 15]],
            references: vec![vec![10, 11, 12, 13, 99, 15]],
            expected: (5.0f64 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0).powf(0.25),
        },
        // Counts pool over the corpus; the repeated token is clipped:
        // matched 4+4, 3+3, 2+2, 1+1 over 4+5, 3+4, 2+3, 1+2, lengths 9 vs 9.
        BleuCase {
            name: "clipped corpus",
            hypotheses: vec![vec![10, 11, 12, 13], vec![20, 20, 20, 20, 20]],
            references: vec![vec![10, 11, 12, 13], vec![20, 20, 20, 20, 21]],
            expected: (8.0f64 / 9.0 * 6.0 / 7.0 * 4.0 / 5.0 * 2.0 / 3.0).powf(0.25),
        },
    ]
}

/// Random prediction/reference batches with occasional PAD and length
/// mismatches.
pub fn token_accuracy_case(seed: u64) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut rng = Rng::new(seed);
    let n = 1 + rng.below(6);
    let mut preds = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..n {
        let len = 1 + rng.below(8);
        let r: Vec<usize> = (0..len).map(|_| rng.below(6)).collect();
        let plen = len + rng.below(3) - rng.below(3).min(len - 1);
        let p: Vec<usize> = (0..plen)
            .map(|t| {
                if t < len && rng.uniform(0.0, 1.0) < 0.5 {
                    r[t]
                } else {
                    rng.below(6)
                }
            })
            .collect();
        refs.push(r);
        preds.push(p);
    }
    (preds, refs)
}

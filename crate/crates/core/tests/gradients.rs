mod common;

use common::{attention_loop, composite_report, matmul_loop, op_report, COMPOSITES, OPS};
use lms2s::autodiff::Tape;
use lms2s::model::Decoder;
use lms2s::rng::Rng;
use proptest::prelude::*;

#[test]
fn every_op_matches_central_differences() {
    for op in OPS {
        for seed in 0..5 {
            let report = op_report(op, seed);
            assert!(report.passed(), "{op} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn every_composite_matches_central_differences() {
    for name in COMPOSITES {
        for seed in 0..3 {
            let report = composite_report(name, seed);
            assert!(report.passed(), "{name} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn composite_reports_cover_every_trainable_tensor() {
    let report = composite_report("decode_step", 0);
    let names: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "embedding.table",
            "lstm.weight",
            "lstm.bias",
            "attn.weight",
            "attn.bias",
            "out.weight",
            "out.bias"
        ]
    );
}

#[test]
fn attention_matches_loop_oracle() {
    let mut rng = Rng::new(3);
    let (len, width, latent) = (5, 4, 3);
    let dec = Decoder::new(7, 2, width, latent, &mut rng);
    let mut tape = Tape::new();
    let b = dec.bind(&mut tape);
    let steps: Vec<f64> = (0..len * width).map(|_| rng.normal()).collect();
    let step_outputs = tape.constant(len, width, steps).unwrap();
    let fh = tape.constant(1, width, vec![0.0; width]).unwrap();
    let enc = lms2s::model::EncoderOutput {
        step_outputs,
        final_hidden: fh,
        final_cell: fh,
        len,
    };
    let mem = b.memory(&mut tape, &enc).unwrap();
    let query: Vec<f64> = (0..latent).map(|_| rng.normal()).collect();
    let q = tape.constant(1, latent, query.clone()).unwrap();
    let (ctx, weights) = b.attend(&mut tape, q, &mem).unwrap();
    let (want_ctx, want_w) = attention_loop(&query, tape.value(mem.proj), len, latent);
    for (a, b) in tape.value(ctx).iter().zip(&want_ctx) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in tape.value(weights).iter().zip(&want_w) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let mut tape = Tape::new();
        let va = tape.constant(m, k, a.clone()).unwrap();
        let vb = tape.constant(k, n, b.clone()).unwrap();
        let out = tape.matmul(va, vb).unwrap();
        for (x, y) in tape.value(out).iter().zip(matmul_loop(&a, &b, m, k, n)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..4, cols in 1usize..6, scale in 0.1f64..50.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| scale * rng.normal()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(rows, cols, data).unwrap();
        let p = tape.softmax(x);
        let lp = tape.log_softmax(x);
        for r in 0..rows {
            let row = &tape.value(p)[r * cols..(r + 1) * cols];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let lrow = &tape.value(lp)[r * cols..(r + 1) * cols];
            prop_assert!((lrow.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

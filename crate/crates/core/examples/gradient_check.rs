//! Verify taped gradients against central differences, both for a
//! hand-written expression and for every parameter of an LSTM cell.
//!
//! cargo run --example gradient_check -- [seed]

use lms2s::autodiff::Tape;
use lms2s::gradcheck::{grad_check, grad_check_params, CheckGroup};
use lms2s::nn::LstmCell;
use lms2s::rng::Rng;
use lms2s::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let mut rng = Rng::new(seed);

    // softmax(x W + b) scored against fixed targets.
    let groups = vec![
        CheckGroup::new("input", vec![Tensor::normal(&[3, 4], 1.0, &mut rng)]),
        CheckGroup::new(
            "layer",
            vec![
                Tensor::normal(&[4, 5], 0.5, &mut rng).with_grad(),
                Tensor::normal(&[5], 0.5, &mut rng).with_grad(),
            ],
        ),
    ];
    let report = grad_check(
        &groups,
        |t, v| {
            let z = t.matmul(v[0][0], v[1][0])?;
            let z = t.add_bias(z, v[1][1])?;
            let lp = t.log_softmax(z);
            t.nll_loss(lp, &[0, 3, 4], &[1.0; 5])
        },
        1e-5,
        1e-4,
    )?;
    for g in &report.groups {
        println!(
            "{:<10} max rel error {:.2e} {}",
            g.name,
            g.max_rel_error,
            if g.passed { "ok" } else { "FAIL" }
        );
    }

    // Every tensor of an LSTM cell, through its own step function.
    let cell = LstmCell::new(3, 4, &mut rng);
    let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let report = grad_check_params(
        &cell,
        |p, tape: &mut Tape| {
            let b = p.bind(tape);
            let xv = tape.constant(1, 3, x.clone())?;
            let h = tape.constant(1, 4, vec![0.1; 4])?;
            let c = tape.constant(1, 4, vec![-0.2; 4])?;
            let (h2, c2) = b.step(tape, xv, h, c)?;
            let s = tape.add(h2, c2)?;
            let s = tape.square(s);
            let loss = tape.sum(s);
            let mut vars = Vec::new();
            b.vars(&mut vars);
            Ok((loss, vars))
        },
        1e-5,
        1e-4,
    )?;
    for g in &report.groups {
        println!(
            "lstm.{:<8} max rel error {:.2e} {}",
            g.name,
            g.max_rel_error,
            if g.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}

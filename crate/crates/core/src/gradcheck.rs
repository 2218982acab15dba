//! Finite-difference verification of taped gradients.

use crate::autodiff::{Tape, Var};
use crate::nn::Parameterized;
use crate::tensor::{Tensor, TensorError};

/// A named set of tensors checked together.
#[derive(Clone, Debug)]
pub struct CheckGroup {
    pub name: String,
    pub tensors: Vec<Tensor>,
}

impl CheckGroup {
    pub fn new(name: impl Into<String>, tensors: Vec<Tensor>) -> Self {
        Self {
            name: name.into(),
            tensors,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.name.as_str())
            .collect()
    }
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the taped gradient of the scalar `f` against central differences.
///
/// `f` receives the tape and one `Var` per tensor, grouped like `groups`.
/// Tensors with `requires_grad() == false` are treated as constants and a
/// group with no trainable tensor is left out of the report.
pub fn grad_check<F>(groups: &[CheckGroup], f: F, h: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Vec<Var>]) -> Result<Var, TensorError>,
{
    let eval = |groups: &[CheckGroup]| -> Result<(Tape, Vec<Vec<Var>>, Var), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Vec<Var>> = groups
            .iter()
            .map(|g| g.tensors.iter().map(|t| tape.param(t)).collect())
            .collect();
        let out = f(&mut tape, &vars)?;
        tape.check_finite()?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(groups)?;
    let grads = tape.backward(out)?;

    let mut work = groups.to_vec();
    let mut report = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        if !group.tensors.iter().any(Tensor::requires_grad) {
            continue;
        }
        let mut worst = 0.0f64;
        for (ti, tensor) in group.tensors.iter().enumerate() {
            if !tensor.requires_grad() {
                continue;
            }
            let zeros = vec![0.0; tensor.numel()];
            let analytic = grads.get(vars[gi][ti]).unwrap_or(&zeros).to_vec();
            for (j, &a) in analytic.iter().enumerate() {
                let x0 = tensor.data()[j];
                work[gi].tensors[ti].data_mut()[j] = x0 + h;
                let (tp, _, op) = eval(&work)?;
                let fp = tp.scalar(op);
                work[gi].tensors[ti].data_mut()[j] = x0 - h;
                let (tm, _, om) = eval(&work)?;
                let fm = tm.scalar(om);
                work[gi].tensors[ti].data_mut()[j] = x0;
                let numeric = (fp - fm) / (2.0 * h);
                worst = worst.max(relative_error(a, numeric));
            }
        }
        report.push(GroupError {
            name: group.name.clone(),
            max_rel_error: worst,
            passed: worst < tol,
        });
    }
    Ok(GradCheckReport { groups: report, tol })
}

/// Checks every trainable tensor of a layer or model through its own binding
/// code. `f` builds the scalar loss and returns it with the bound vars in
/// visit order; the report has one group per named tensor.
pub fn grad_check_params<P, F>(params: &P, f: F, h: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    P: Parameterized + Clone,
    F: Fn(&P, &mut Tape) -> Result<(Var, Vec<Var>), TensorError>,
{
    let eval = |p: &P| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let (out, _) = f(p, &mut tape)?;
        tape.check_finite()?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let (out, vars) = f(params, &mut tape)?;
    tape.check_finite()?;
    let grads = tape.backward(out)?;

    let named = params.named_tensors("");
    if named.len() != vars.len() {
        return Err(TensorError::Contract(format!(
            "{} bound vars for {} tensors",
            vars.len(),
            named.len()
        )));
    }
    let mut work = params.clone();
    let mut report = Vec::new();
    for (k, (name, tensor)) in named.iter().enumerate() {
        if !tensor.requires_grad() {
            continue;
        }
        let zeros = vec![0.0; tensor.numel()];
        let analytic = grads.get(vars[k]).unwrap_or(&zeros).to_vec();
        let mut worst = 0.0f64;
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = tensor.data()[j];
            set_entry(&mut work, k, j, x0 + h);
            let fp = eval(&work)?;
            set_entry(&mut work, k, j, x0 - h);
            let fm = eval(&work)?;
            set_entry(&mut work, k, j, x0);
            worst = worst.max(relative_error(a, (fp - fm) / (2.0 * h)));
        }
        report.push(GroupError {
            name: name.clone(),
            max_rel_error: worst,
            passed: worst < tol,
        });
    }
    Ok(GradCheckReport { groups: report, tol })
}

fn set_entry<P: Parameterized>(p: &mut P, tensor: usize, index: usize, value: f64) {
    let mut k = 0;
    p.visit_mut(&mut |t| {
        if k == tensor {
            t.data_mut()[index] = value;
        }
        k += 1;
    });
}

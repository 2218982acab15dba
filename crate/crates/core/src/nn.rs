//! Layers built from taped primitives, and the parameter plumbing shared by
//! every model component.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::autodiff::{Gradients, Tape, Var};
use crate::rng::Rng;
use crate::tensor::{Precision, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Components that own parameter tensors.
///
/// `visit` and `visit_mut` must walk tensors in the same order, and each
/// component's bound form must list its `Var`s in that order too.
pub trait Parameterized {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t| out.push((name, t)));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.visit_mut(&mut |t| t.set_requires_grad(!frozen));
    }

    fn is_frozen(&self) -> bool {
        let mut frozen = true;
        self.visit("", &mut |_, t| frozen &= !t.requires_grad());
        frozen
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |t| t.zero_grad());
    }

    fn scale_grads(&mut self, c: f64) {
        self.visit_mut(&mut |t| t.scale_grad(c));
    }

    fn round_to(&mut self, precision: Precision) {
        self.visit_mut(&mut |t| t.round_to(precision));
    }

    /// Hash over shapes and exact bit patterns of every tensor.
    fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.visit("", &mut |name, t| {
            h.write(name.as_bytes());
            for &d in t.shape() {
                h.write_usize(d);
            }
            for v in t.data() {
                h.write_u64(v.to_bits());
            }
        });
        h.finish()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Adds the tape gradients of `vars` into the matching tensors of `p`.
///
/// Tensors that do not require gradients are skipped.
pub fn accumulate_grads<P: Parameterized + ?Sized>(p: &mut P, vars: &[Var], grads: &Gradients) {
    let mut i = 0;
    p.visit_mut(&mut |t| {
        let v = vars[i];
        i += 1;
        if t.requires_grad() {
            if let Some(g) = grads.get(v) {
                t.accumulate_grad(g);
            }
        }
    });
    debug_assert_eq!(i, vars.len(), "bound vars out of sync with visit order");
}

/// Optional inverted dropout applied during training.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut Rng,
}

pub fn dropout(tape: &mut Tape, x: Var, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
    match drop {
        Some(d) if d.p > 0.0 => {
            let (r, c) = tape.dims(x);
            let mask = d.rng.dropout_mask(r * c, d.p);
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Xavier-uniform weight, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Tensor::xavier_uniform(inputs, outputs, rng).with_grad(),
            bias: Tensor::zeros(&[outputs]).with_grad(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLinear {
        BoundLinear {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
        }
    }
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_bias(y, self.bias)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        out.extend([self.weight, self.bias]);
    }
}

impl Parameterized for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// `vocab x dim`
    pub table: Tensor,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            table: Tensor::xavier_uniform(vocab, dim, rng).with_grad(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }
}

impl Parameterized for Embedding {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "table"), &self.table);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.table);
    }
}

/// LSTM cell with fused gate weights laid out `[i | f | g | o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// `(input + hidden) x 4*hidden`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub weight: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmCell {
    /// Xavier-uniform weights, zero bias except the forget gate at +1.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let weight = Tensor::xavier_uniform(input + hidden, 4 * hidden, rng).with_grad();
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            weight,
            bias: bias.with_grad(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.numel() / 4
    }

    pub fn input(&self) -> usize {
        self.weight.shape()[0] - self.hidden()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLstm {
        BoundLstm {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
            hidden: self.hidden(),
        }
    }
}

impl BoundLstm {
    /// One recurrence step on `1 x input` / `1 x hidden` rows; returns `(h', c')`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let xh = tape.concat_cols(&[x, h])?;
        let z = tape.matmul(xh, self.weight)?;
        let z = tape.add_bias(z, self.bias)?;
        let zi = tape.slice_cols(z, 0, hd)?;
        let zf = tape.slice_cols(z, hd, hd)?;
        let zg = tape.slice_cols(z, 2 * hd, hd)?;
        let zo = tape.slice_cols(z, 3 * hd, hd)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        out.extend([self.weight, self.bias]);
    }
}

impl Parameterized for LstmCell {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Feed-forward stack with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        let layers = sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<BoundLinear> {
        self.layers.iter().map(|l| l.bind(tape)).collect()
    }

    pub fn forward(tape: &mut Tape, bound: &[BoundLinear], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in bound.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i + 1 < bound.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn bound_vars(bound: &[BoundLinear]) -> Vec<Var> {
        let mut out = Vec::new();
        bound.iter().for_each(|b| b.vars(&mut out));
        out
    }
}

impl Parameterized for Mlp {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("l{i}")), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstm_forget_bias_is_one() {
        let mut rng = Rng::new(0);
        let cell = LstmCell::new(3, 4, &mut rng);
        let b = cell.bias.data();
        assert!(b[..4].iter().all(|&v| v == 0.0));
        assert!(b[4..8].iter().all(|&v| v == 1.0));
        assert!(b[8..].iter().all(|&v| v == 0.0));
        assert_eq!((cell.input(), cell.hidden()), (3, 4));
    }

    #[test]
    fn zero_lstm_keeps_zero_state() {
        let mut rng = Rng::new(0);
        let mut cell = LstmCell::new(3, 4, &mut rng);
        cell.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let mut tape = Tape::new();
        let b = cell.bind(&mut tape);
        let x = tape.constant(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
        let h = tape.constant(1, 4, vec![0.0; 4]).unwrap();
        let (h1, c1) = b.step(&mut tape, x, h, h).unwrap();
        assert!(tape.value(h1).iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulate_follows_visit_order() {
        let mut rng = Rng::new(2);
        let mut mlp = Mlp::new(&[2, 3, 1], &mut rng);
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape);
        let x = tape.constant(1, 2, vec![1.0, -1.0]).unwrap();
        let y = Mlp::forward(&mut tape, &bound, x).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        accumulate_grads(&mut mlp, &Mlp::bound_vars(&bound), &grads);
        // d out / d last bias is exactly one.
        assert_eq!(mlp.layers[1].bias.grad().unwrap(), &[1.0]);
        assert_eq!(mlp.layers[0].weight.grad().unwrap().len(), 6);
    }

    #[test]
    fn digest_tracks_bits() {
        let mut rng = Rng::new(4);
        let mut l = Linear::new(2, 2, &mut rng);
        let d0 = l.digest();
        l.bias.data_mut()[0] = -0.0;
        assert_ne!(d0, l.digest(), "sign of zero is a different bit pattern");
    }
}

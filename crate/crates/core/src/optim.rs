//! Adam optimizer.

use crate::nn::Parameterized;
use crate::tensor::Precision;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub precision: Precision,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            precision: Precision::F64,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated grads, then clears them.
    ///
    /// Tensors that do not require gradients are never written.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (lr, b1, b2, eps, precision) = (self.lr, self.beta1, self.beta2, self.eps, self.precision);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        params.visit_mut(&mut |t| {
            if ms.len() <= idx {
                ms.push(vec![0.0; t.numel()]);
                vs.push(vec![0.0; t.numel()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            idx += 1;
            if !t.requires_grad() {
                return;
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { return };
            let data = t.data_mut();
            for j in 0..data.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] = precision.round(data[j] - lr * mhat / (vhat.sqrt() + eps));
            }
            t.zero_grad();
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::rng::Rng;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut rng = Rng::new(0);
        let mut l = Linear::new(1, 1, &mut rng);
        let w0 = l.weight.data()[0];
        l.weight.accumulate_grad(&[3.0]);
        l.bias.accumulate_grad(&[-0.5]);
        let mut opt = Adam::new(0.01);
        opt.step(&mut l);
        assert!((l.weight.data()[0] - (w0 - 0.01)).abs() < 1e-9);
        assert!((l.bias.data()[0] - 0.01).abs() < 1e-9);
        assert!(l.weight.grad().is_none());
    }

    #[test]
    fn frozen_tensors_are_untouched() {
        let mut rng = Rng::new(0);
        let mut l = Linear::new(2, 2, &mut rng);
        l.set_frozen(true);
        let before = l.clone();
        let mut opt = Adam::new(0.1);
        opt.step(&mut l);
        assert!(l.weight.bit_eq(&before.weight) && l.bias.bit_eq(&before.bias));
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut rng = Rng::new(5);
        let mut l = Linear::new(3, 2, &mut rng);
        let before = l.clone();
        l.weight.accumulate_grad(&[1.0; 6]);
        let mut opt = Adam::new(0.0);
        opt.step(&mut l);
        assert!(l.weight.bit_eq(&before.weight));
    }
}

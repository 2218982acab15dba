//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every value on the tape is a row-major matrix; vectors are `1 x n` rows
//! and scalars are `1 x 1`. Ops append a node and return a [`Var`] handle.
//! [`Tape::backward`] walks the nodes in reverse insertion order, which is a
//! reverse topological order because inputs always precede their consumers.

use crate::tensor::{matmul_into, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Nll {
        logp: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        total: f64,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::MulConst(..) => "mul_const",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Minimum(..) => "minimum",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Nll { .. } => "nll_loss",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumCols(..) => "sum_cols",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node shape")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            left: vec![self.nodes[a.0].rows, self.nodes[a.0].cols],
            right: vec![self.nodes[b.0].rows, self.nodes[b.0].cols],
        }
    }

    /// Leaf holding a copy of `t`; participates in gradients iff `t.requires_grad()`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.matrix_dims();
        self.push(r, c, t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(TensorError::Shape {
                op: "constant",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    /// Gradient-free copy of an existing node's value.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (r, c, val) = (n.rows, n.cols, n.value.clone());
        self.push(r, c, val, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(n, m, out, Op::Transpose(a), rg)
    }

    fn zip_same(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err(op.name(), a, b));
        }
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Minimum(a, b), a, b, f64::min)
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(bias) != (1, n) {
            return Err(self.shape_err("add_bias", a, bias));
        }
        let b = self.value(bias).to_vec();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            row.iter_mut().zip(&b).for_each(|(o, &bv)| *o += bv);
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(m, n, out, Op::AddBias(a, bias), rg))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.dims(s) != (1, 1) {
            return Err(self.shape_err("scale_by", a, s));
        }
        let c = self.scalar(s);
        let (r, cols) = self.dims(a);
        let out = self.value(a).iter().map(|&x| c * x).collect();
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(r, cols, out, Op::ScaleBy(a, s), rg))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if mask.len() != r * c {
            return Err(TensorError::Shape {
                op: "mul_const",
                left: vec![r, c],
                right: vec![mask.len()],
            });
        }
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let rg = self.rg(a);
        Ok(self.push(r, c, out, Op::MulConst(a, mask), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(r, c, out, Op::Softmax(a), rg)
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(a);
        self.push(r, c, out, Op::LogSoftmax(a), rg)
    }

    /// Weighted negative log-likelihood over rows of `logp`.
    ///
    /// Row `n` contributes `-w[t_n] * logp[n, t_n]`; the result is divided by
    /// the sum of the active weights. When every weight is zero the loss is
    /// zero and so is its gradient.
    pub fn nll_loss(&mut self, logp: Var, targets: &[usize], class_weights: &[f64]) -> Result<Var> {
        let (n, v) = self.dims(logp);
        if targets.len() != n {
            return Err(TensorError::Shape {
                op: "nll_loss",
                left: vec![n, v],
                right: vec![targets.len()],
            });
        }
        if class_weights.len() != v {
            return Err(TensorError::Shape {
                op: "nll_loss",
                left: vec![n, v],
                right: vec![class_weights.len()],
            });
        }
        let lp = self.value(logp);
        let mut weights = Vec::with_capacity(n);
        let mut total = 0.0;
        let mut acc = 0.0;
        for (row, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(TensorError::Index {
                    op: "nll_loss",
                    index: t,
                    size: v,
                });
            }
            let w = class_weights[t];
            weights.push(w);
            total += w;
            if w != 0.0 {
                acc += -w * lp[row * v + t];
            }
        }
        let loss = if total > 0.0 { acc / total } else { 0.0 };
        let rg = self.rg(logp);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::Nll {
                logp,
                targets: targets.to_vec(),
                weights,
                total,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).0 != rows) {
            return Err(self.shape_err("concat_cols", parts[0], bad));
        }
        let cols: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.dims(parts[0]).1;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).1 != cols) {
            return Err(self.shape_err("concat_rows", parts[0], bad));
        }
        let rows: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                size: c,
            });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(r, len, out, Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                size: r,
            });
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(len, c, out, Op::SliceRows(a, start), rg))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    size: r,
                });
            }
            out.extend_from_slice(&src[id * c..(id + 1) * c]);
        }
        let rg = self.rg(table);
        Ok(self.push(ids.len(), c, out, Op::GatherRows(table, ids.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(1, 1, vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(1, 1, vec![s], Op::Mean(a), rg)
    }

    /// Row sums, `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).chunks(c.max(1)).map(|row| row.iter().sum()).collect();
        let rg = self.rg(a);
        self.push(r, 1, out, Op::SumCols(a), rg)
    }

    /// First node (in execution order) holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.value.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    op: n.op.name(),
                    node: i,
                });
            }
        }
        Ok(())
    }

    /// Propagates `d loss / d node` back through the tape.
    ///
    /// The tape is marked consumed; a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::Contract("tape already consumed by backward".into()));
        }
        if self.dims(loss) != (1, 1) {
            let (r, c) = self.dims(loss);
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let nodes = &self.nodes;
        // Accumulator for input `v`, allocated on first use. Returns None for
        // inputs that do not need gradients.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] += dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a_rp = av[r * k + p];
                            let dst = &mut gb[p * n..(p + 1) * n];
                            dst.iter_mut().zip(grow).for_each(|(d, &gv)| *d += a_rp * gv);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].rows, nodes[a.0].cols);
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    gb.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * bv[j];
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for j in 0..g.len() {
                        gb[j] += g[j] * av[j];
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        if av[j] <= bv[j] {
                            ga[j] += g[j];
                        }
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for j in 0..g.len() {
                        if av[j] > bv[j] {
                            gb[j] += g[j];
                        }
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                let n = nodes[bias.0].cols;
                if let Some(gb) = acc!(*bias) {
                    for row in g.chunks(n.max(1)) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, &gv)| *d += c * gv);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
            }
            Op::ScaleBy(a, s) => {
                let c = nodes[s.0].value[0];
                let av = &nodes[a.0].value;
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, &gv)| *d += c * gv);
                }
                if let Some(gs) = acc!(*s) {
                    gs[0] += dot(g, av);
                }
            }
            Op::MulConst(a, mask) => {
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * mask[j];
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * out[j] * (1.0 - out[j]);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - out[j] * out[j]);
                    }
                }
            }
            Op::Relu(a) => {
                let av = &nodes[a.0].value;
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        if av[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * out[j];
                    }
                }
            }
            Op::Ln(a) => {
                let av = &nodes[a.0].value;
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] / av[j];
                    }
                }
            }
            Op::Square(a) => {
                let av = &nodes[a.0].value;
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += 2.0 * av[j] * g[j];
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = &nodes[a.0].value;
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        if av[j] >= *lo && av[j] <= *hi {
                            ga[j] += g[j];
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let c = node.cols.max(1);
                if let Some(ga) = acc!(*a) {
                    for ((dst, y), gr) in ga.chunks_mut(c).zip(out.chunks(c)).zip(g.chunks(c)) {
                        let s = dot(gr, y);
                        for j in 0..c {
                            dst[j] += y[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let c = node.cols.max(1);
                if let Some(ga) = acc!(*a) {
                    for ((dst, y), gr) in ga.chunks_mut(c).zip(out.chunks(c)).zip(g.chunks(c)) {
                        let s: f64 = gr.iter().sum();
                        for j in 0..c {
                            dst[j] += gr[j] - y[j].exp() * s;
                        }
                    }
                }
            }
            Op::Nll {
                logp,
                targets,
                weights,
                total,
            } => {
                let v = nodes[logp.0].cols;
                if let Some(ga) = acc!(*logp) {
                    if *total > 0.0 {
                        for (row, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                            ga[row * v + t] += -w / total * g[0];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].cols;
                    if let Some(gp) = acc!(p) {
                        for r in 0..node.rows {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            add_into(&mut gp[r * pc..(r + 1) * pc], src);
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = acc!(p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let c = nodes[a.0].cols;
                let len = node.cols;
                if let Some(ga) = acc!(*a) {
                    for r in 0..node.rows {
                        add_into(&mut ga[r * c + start..r * c + start + len], &g[r * len..(r + 1) * len]);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let c = node.cols;
                if let Some(ga) = acc!(*a) {
                    add_into(&mut ga[start * c..start * c + g.len()], g);
                }
            }
            Op::GatherRows(table, ids) => {
                let c = node.cols;
                if let Some(gt) = acc!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.len() as f64;
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::SumCols(a) => {
                let c = nodes[a.0].cols.max(1);
                if let Some(ga) = acc!(*a) {
                    for (row, &gv) in ga.chunks_mut(c).zip(g) {
                        row.iter_mut().for_each(|d| *d += gv);
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        tape.param(&Tensor::new(vec![rows, cols], data).unwrap().with_grad())
    }

    #[test]
    fn matmul_hand_case() {
        let mut t = Tape::new();
        let a = t.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = t.constant(2, 1, vec![0.0, 1.0]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.dims(c), (2, 1));
        assert_eq!(t.value(c), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = t.constant(2, 3, vec![0.0; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut t = Tape::new();
        let a = t.constant(1, 3, vec![0.0; 3]).unwrap();
        let s = t.softmax(a);
        for &v in t.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = t.constant(1, 2, vec![1000.0, 0.0]).unwrap();
        let s = t.softmax(b);
        assert!((t.value(s)[0] - 1.0).abs() < 1e-12);
        assert!(t.value(s)[1] >= 0.0 && t.value(s)[1] < 1e-300);
        assert!(t.value(s).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nll_examples() {
        let mut t = Tape::new();
        let lp = leaf(&mut t, 1, 2, vec![0.0, f64::NEG_INFINITY]);
        let l = t.nll_loss(lp, &[0], &[1.0, 1.0]).unwrap();
        assert_eq!(t.scalar(l), 0.0);

        let mut t = Tape::new();
        let lp = leaf(&mut t, 1, 3, vec![-2.3, -0.5, -1.0]);
        let l = t.nll_loss(lp, &[0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((t.scalar(l) - 2.3).abs() < 1e-15);
    }

    #[test]
    fn nll_all_padding_is_zero_with_zero_grad() {
        let mut t = Tape::new();
        let lp = leaf(&mut t, 2, 3, vec![-1.0, -2.0, -0.5, -0.3, -0.7, -4.0]);
        let l = t.nll_loss(lp, &[0, 0], &[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let g = t.backward(l).unwrap();
        assert!(g.get(lp).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nll_target_out_of_range() {
        let mut t = Tape::new();
        let lp = leaf(&mut t, 1, 2, vec![-0.1, -2.0]);
        assert!(matches!(
            t.nll_loss(lp, &[2], &[1.0, 1.0]),
            Err(TensorError::Index { .. })
        ));
    }

    #[test]
    fn sum_grad_is_all_ones() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 3, 4, (0..12).map(f64::from).collect());
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 12]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 1, 1, vec![0.0]);
        let y = t.sigmoid(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 1, 2, vec![1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(TensorError::Contract(_))));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(TensorError::Contract(_))));
    }

    #[test]
    fn frozen_leaf_gets_no_grad() {
        let mut t = Tape::new();
        let w = t.param(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let x = leaf(&mut t, 1, 2, vec![3.0, 4.0]);
        let p = t.mul(w, x).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn check_finite_names_op() {
        let mut t = Tape::new();
        let x = t.constant(1, 1, vec![-1.0]).unwrap();
        let _ = t.ln(x);
        assert!(matches!(t.check_finite(), Err(TensorError::NonFinite { op: "ln", .. })));
    }
}

//! Recorded-operation graph with reverse-mode differentiation.
//!
//! A `Graph` is a tape: every operation computes its output eagerly and
//! records the operands plus a local backward rule. `backward` replays the
//! tape in reverse, accumulating vector-Jacobian products. Graphs are
//! rebuilt for every forward pass and confined to one thread; tensors held
//! by the graph are never mutated.

use crate::error::{Result, SageError};

use super::tensor::Tensor;

/// Handle to a value on the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Variance floor added before the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `[T x D]` plus a length-`D` vector broadcast over rows.
    AddRows(Var, Var),
    /// Tensor plus a scalar tensor broadcast over every element.
    AddScalar(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    /// Row `t` of a `[T x D]` matrix scaled by entry `t` of a length-`T` vector.
    ScaleRows(Var, Var),
    SoftmaxVec(Var),
    SoftmaxRows(Var),
    Conv1d { x: Var, kernel: Var, dilation: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Relu(Var),
    Tanh(Var),
    ConcatCols(Var, Var),
    SliceCols { x: Var, start: usize, len: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Tape of recorded operations. Nodes are in topological order by
/// construction: an operand always precedes its consumer.
pub struct Graph {
    nodes: Vec<Node>,
    softmax_grad_scale: f64,
}

/// Gradients from one backward pass, keyed by `Var`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `v`; zeros when no path reached it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[v.0]],
        }
    }

    /// Gradient for `v` if any path reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), softmax_grad_scale: 1.0 }
    }

    /// Corrupts the softmax backward rule by `scale`. Exists so tests can
    /// verify the gradient checker actually detects a wrong derivative.
    #[doc(hidden)]
    pub fn perturb_softmax_backward(&mut self, scale: f64) {
        self.softmax_grad_scale = scale;
    }

    /// Registers an input tensor. Its `requires_grad` flag decides whether
    /// `backward` reports a gradient for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(Op::Leaf, t, needs)
    }

    /// Registers a constant (never differentiated).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Smallest absolute value fed into any recorded `relu`, or infinity
    /// when the tape has none. Central differences are only trustworthy
    /// when this clears the probe step: a kink inside the stencil leaves
    /// an error that no tolerance on the analytic side can absorb.
    pub(crate) fn relu_input_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for &v in self.nodes[x.0].value.data() {
                    margin = margin.min(v.abs());
                }
            }
        }
        margin
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Operations ──────────────────────────────────────────────────────

    /// Standard matrix product `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(SageError::Shape(format!(
                "matmul: incompatible shapes {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul(a, b), Tensor::unchecked(vec![m, n], out), needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(SageError::Shape(format!("transpose: expected 2-D, got {:?}", t.shape())));
        }
        let (r, c) = (t.rows(), t.cols());
        let out = transpose_raw(t.data(), r, c);
        let needs = self.needs(x);
        Ok(self.push(Op::Transpose(x), Tensor::unchecked(vec![c, r], out), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(SageError::Shape(format!(
                "{name}: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, Tensor::unchecked(shape, out), needs))
    }

    /// `[T x D]` matrix plus a length-`D` row vector, broadcast over rows.
    pub fn add_rows(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.rank() != 2 || tb.rank() != 1 || tx.cols() != tb.numel() {
            return Err(SageError::Shape(format!(
                "add_rows: matrix {:?} vs bias {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let cols = tx.cols();
        let out: Vec<f64> =
            tx.data().iter().enumerate().map(|(i, &v)| v + tb.data()[i % cols]).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddRows(x, bias), Tensor::unchecked(shape, out), needs))
    }

    /// Tensor plus a scalar tensor, broadcast over every element.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if !ts.is_scalar() {
            return Err(SageError::Shape(format!(
                "add_scalar: second operand must be scalar, got {:?}",
                ts.shape()
            )));
        }
        let sv = ts.item();
        let out: Vec<f64> = tx.data().iter().map(|&v| v + sv).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(Op::AddScalar(x, s), Tensor::unchecked(shape, out), needs))
    }

    /// Tensor minus a scalar tensor (centered values for moment computations).
    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let neg = self.scale_const(s, -1.0)?;
        self.add_scalar(x, neg)
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|&v| v * c).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::ScaleConst(x, c), Tensor::unchecked(shape, out), needs))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|&v| v + c).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::AddConst(x), Tensor::unchecked(shape, out), needs))
    }

    /// Row `t` of `[T x D]` scaled by entry `t` of a length-`T` vector:
    /// the diag(alpha) . X product, computed row by row.
    pub fn scale_rows(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let (tx, ta) = (self.value(x), self.value(alpha));
        if tx.rank() != 2 || ta.rank() != 1 || tx.rows() != ta.numel() {
            return Err(SageError::Shape(format!(
                "scale_rows: matrix {:?} vs weights {:?}",
                tx.shape(),
                ta.shape()
            )));
        }
        let cols = tx.cols();
        let out: Vec<f64> =
            tx.data().iter().enumerate().map(|(i, &v)| v * ta.data()[i / cols]).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x) || self.needs(alpha);
        Ok(self.push(Op::ScaleRows(x, alpha), Tensor::unchecked(shape, out), needs))
    }

    /// Max-subtracted softmax over a 1-D tensor.
    pub fn softmax_vec(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 {
            return Err(SageError::Shape(format!(
                "softmax_vec: expected 1-D, got {:?}",
                tx.shape()
            )));
        }
        if tx.numel() == 0 {
            return Err(SageError::Domain("softmax of empty input".into()));
        }
        let out = softmax_slice(tx.data());
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::SoftmaxVec(x), Tensor::unchecked(shape, out), needs))
    }

    /// Row-wise max-subtracted softmax over a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(SageError::Shape(format!(
                "softmax_rows: expected 2-D, got {:?}",
                tx.shape()
            )));
        }
        let cols = tx.cols();
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(cols) {
            out.extend(softmax_slice(row));
        }
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::SoftmaxRows(x), Tensor::unchecked(shape, out), needs))
    }

    /// Length-preserving dilated 1-D convolution.
    ///
    /// `x` is `[T x C_in]`, `kernel` is `[K x C_in x C_out]` with odd `K`;
    /// symmetric zero padding of `(K-1)/2 * dilation` keeps the output at
    /// `T` rows.
    pub fn conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        if tk.rank() != 3 {
            return Err(SageError::Shape(format!(
                "conv1d: kernel must be [K x C_in x C_out], got {:?}",
                tk.shape()
            )));
        }
        let (k, c_in, c_out) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
        if k % 2 == 0 {
            return Err(SageError::Config(format!(
                "conv1d: kernel size {k} is even; symmetric padding requires odd sizes"
            )));
        }
        if dilation == 0 {
            return Err(SageError::Config("conv1d: dilation must be >= 1".into()));
        }
        if tx.rank() != 2 || tx.cols() != c_in {
            return Err(SageError::Shape(format!(
                "conv1d: input {:?} does not match kernel channels {c_in}",
                tx.shape()
            )));
        }
        let t_len = tx.rows();
        let half = (k - 1) / 2;
        let mut out = vec![0.0; t_len * c_out];
        for t in 0..t_len {
            for tap in 0..k {
                let offset = (tap as isize - half as isize) * dilation as isize;
                let s = t as isize + offset;
                if s < 0 || s >= t_len as isize {
                    continue;
                }
                let s = s as usize;
                for ci in 0..c_in {
                    let xv = tx.data()[s * c_in + ci];
                    if xv == 0.0 {
                        continue;
                    }
                    let kbase = (tap * c_in + ci) * c_out;
                    let obase = t * c_out;
                    for co in 0..c_out {
                        out[obase + co] += xv * tk.data()[kbase + co];
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            Op::Conv1d { x, kernel, dilation },
            Tensor::unchecked(vec![t_len, c_out], out),
            needs,
        ))
    }

    /// Per-row normalization to zero mean and unit variance (epsilon
    /// `LAYER_NORM_EPS` inside the square root), then `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.rank() != 2 {
            return Err(SageError::Shape(format!(
                "layer_norm: expected 2-D input, got {:?}",
                tx.shape()
            )));
        }
        let d = tx.cols();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(SageError::Shape(format!(
                "layer_norm: gamma {:?} / beta {:?} do not match width {d}",
                tg.shape(),
                tb.shape()
            )));
        }
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out.push(tg.data()[j] * (v - mean) * inv + tb.data()[j]);
            }
        }
        let shape = tx.shape().to_vec();
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Op::LayerNorm { x, gamma, beta }, Tensor::unchecked(shape, out), needs))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Relu(x), Tensor::unchecked(shape, out), needs))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|&v| v.tanh()).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Tanh(x), Tensor::unchecked(shape, out), needs))
    }

    /// Row-wise concatenation: `[T x Da]` and `[T x Db]` -> `[T x (Da+Db)]`,
    /// columns of `a` first.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(SageError::Shape("concat_cols: both inputs must be 2-D".into()));
        }
        if ta.rows() != tb.rows() {
            return Err(SageError::Alignment(format!(
                "concat_cols: row counts differ ({} vs {})",
                ta.rows(),
                tb.rows()
            )));
        }
        let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols(a, b), Tensor::unchecked(vec![rows, ca + cb], out), needs))
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || len == 0 || start + len > tx.cols() {
            return Err(SageError::Shape(format!(
                "slice_cols: [{start}, {}) out of bounds for {:?}",
                start + len,
                tx.shape()
            )));
        }
        let (rows, cols) = (tx.rows(), tx.cols());
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&tx.data()[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(Op::SliceCols { x, start, len }, Tensor::unchecked(vec![rows, len], out), needs))
    }

    /// Gathers the given rows of a 2-D tensor; backward scatter-adds.
    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(SageError::Shape("select_rows: expected 2-D input".into()));
        }
        if rows.is_empty() {
            return Err(SageError::Domain("select_rows: empty index list".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= tx.rows()) {
            return Err(SageError::Shape(format!(
                "select_rows: row {bad} out of bounds for {:?}",
                tx.shape()
            )));
        }
        let cols = tx.cols();
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            out.extend_from_slice(&tx.data()[r * cols..(r + 1) * cols]);
        }
        let n = rows.len();
        let needs = self.needs(x);
        Ok(self.push(Op::SelectRows { x, rows }, Tensor::unchecked(vec![n, cols], out), needs))
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != tx.numel() || shape.iter().any(|&d| d == 0) {
            return Err(SageError::Shape(format!(
                "reshape: cannot view {:?} as {shape:?}",
                tx.shape()
            )));
        }
        let data = tx.data().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape(x), Tensor::unchecked(shape, data), needs))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.data().iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Op::Sum(x), Tensor::scalar(s), needs))
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let m = tx.data().iter().sum::<f64>() / tx.numel() as f64;
        let needs = self.needs(x);
        Ok(self.push(Op::Mean(x), Tensor::scalar(m), needs))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-mode gradients of a scalar `loss` with respect to every
    /// recorded value. Leaves that no path reaches get zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(SageError::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(up) = grads[idx].take() else { continue };
            self.backward_op(idx, &up, &mut grads);
            grads[idx] = Some(up);
        }

        let lens = self.nodes.iter().map(|n| n.value.numel()).collect();
        Ok(Gradients { grads, lens })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (gi, &c) in g.iter_mut().zip(contrib) {
                    *gi += c;
                }
            }
            None => grads[v.0] = Some(contrib.to_vec()),
        }
    }

    fn backward_op(&self, idx: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}

            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    // dA = dOut . B^T
                    let bt = transpose_raw(tb.data(), k, n);
                    let da = matmul_raw(up, &bt, m, n, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = A^T . dOut
                    let at = transpose_raw(ta.data(), m, k);
                    let db = matmul_raw(&at, up, k, m, n);
                    self.accumulate(grads, *b, &db);
                }
            }

            Op::Transpose(x) => {
                let t = &node.value;
                let dx = transpose_raw(up, t.rows(), t.cols());
                self.accumulate(grads, *x, &dx);
            }

            Op::Add(a, b) => {
                self.accumulate(grads, *a, up);
                self.accumulate(grads, *b, up);
            }

            Op::Sub(a, b) => {
                self.accumulate(grads, *a, up);
                let neg: Vec<f64> = up.iter().map(|&v| -v).collect();
                self.accumulate(grads, *b, &neg);
            }

            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da: Vec<f64> =
                        up.iter().zip(self.value(*b).data()).map(|(&u, &bv)| u * bv).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> =
                        up.iter().zip(self.value(*a).data()).map(|(&u, &av)| u * av).collect();
                    self.accumulate(grads, *b, &db);
                }
            }

            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let da: Vec<f64> =
                        up.iter().zip(tb.data()).map(|(&u, &bv)| u / bv).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = up
                        .iter()
                        .zip(ta.data().iter().zip(tb.data()))
                        .map(|(&u, (&av, &bv))| -u * av / (bv * bv))
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }

            Op::AddRows(x, bias) => {
                self.accumulate(grads, *x, up);
                if self.needs(*bias) {
                    let d = self.value(*bias).numel();
                    let mut db = vec![0.0; d];
                    for (i, &u) in up.iter().enumerate() {
                        db[i % d] += u;
                    }
                    self.accumulate(grads, *bias, &db);
                }
            }

            Op::AddScalar(x, s) => {
                self.accumulate(grads, *x, up);
                if self.needs(*s) {
                    self.accumulate(grads, *s, &[up.iter().sum()]);
                }
            }

            Op::ScaleConst(x, c) => {
                let dx: Vec<f64> = up.iter().map(|&u| u * c).collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::AddConst(x) => {
                self.accumulate(grads, *x, up);
            }

            Op::ScaleRows(x, alpha) => {
                let (tx, ta) = (self.value(*x), self.value(*alpha));
                let cols = tx.cols();
                if self.needs(*x) {
                    let dx: Vec<f64> = up
                        .iter()
                        .enumerate()
                        .map(|(i, &u)| u * ta.data()[i / cols])
                        .collect();
                    self.accumulate(grads, *x, &dx);
                }
                if self.needs(*alpha) {
                    let mut da = vec![0.0; ta.numel()];
                    for (i, &u) in up.iter().enumerate() {
                        da[i / cols] += u * tx.data()[i];
                    }
                    self.accumulate(grads, *alpha, &da);
                }
            }

            Op::SoftmaxVec(x) => {
                let y = node.value.data();
                let dot: f64 = up.iter().zip(y).map(|(&u, &yi)| u * yi).sum();
                let dx: Vec<f64> = up
                    .iter()
                    .zip(y)
                    .map(|(&u, &yi)| self.softmax_grad_scale * yi * (u - dot))
                    .collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for (row_y, (row_up, row_dx)) in y
                    .chunks(cols)
                    .zip(up.chunks(cols).zip(dx.chunks_mut(cols)))
                {
                    let dot: f64 = row_up.iter().zip(row_y).map(|(&u, &yi)| u * yi).sum();
                    for ((d, &u), &yi) in row_dx.iter_mut().zip(row_up).zip(row_y) {
                        *d = self.softmax_grad_scale * yi * (u - dot);
                    }
                }
                self.accumulate(grads, *x, &dx);
            }

            Op::Conv1d { x, kernel, dilation } => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                let (k, c_in, c_out) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
                let t_len = tx.rows();
                let half = (k - 1) / 2;
                let mut dx = vec![0.0; tx.numel()];
                let mut dk = vec![0.0; tk.numel()];
                for t in 0..t_len {
                    for tap in 0..k {
                        let offset = (tap as isize - half as isize) * *dilation as isize;
                        let s = t as isize + offset;
                        if s < 0 || s >= t_len as isize {
                            continue;
                        }
                        let s = s as usize;
                        for ci in 0..c_in {
                            let kbase = (tap * c_in + ci) * c_out;
                            let xv = tx.data()[s * c_in + ci];
                            let mut acc = 0.0;
                            for co in 0..c_out {
                                let u = up[t * c_out + co];
                                acc += u * tk.data()[kbase + co];
                                dk[kbase + co] += u * xv;
                            }
                            dx[s * c_in + ci] += acc;
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *kernel, &dk);
            }

            Op::LayerNorm { x, gamma, beta } => {
                let (tx, tg) = (self.value(*x), self.value(*gamma));
                let d = tx.cols();
                let dn = d as f64;
                let mut dx = vec![0.0; tx.numel()];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for (r, row) in tx.data().chunks(d).enumerate() {
                    let mean = row.iter().sum::<f64>() / dn;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dn;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let up_row = &up[r * d..(r + 1) * d];
                    // dxhat, and its projections onto the mean/variance paths
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    let mut xhat = vec![0.0; d];
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * inv;
                        dxhat[j] = up_row[j] * tg.data()[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xhat[j];
                        dg[j] += up_row[j] * xhat[j];
                        db[j] += up_row[j];
                    }
                    for j in 0..d {
                        dx[r * d + j] = inv
                            * (dxhat[j] - sum_dxhat / dn - xhat[j] * sum_dxhat_xhat / dn);
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gamma, &dg);
                self.accumulate(grads, *beta, &db);
            }

            Op::Relu(x) => {
                let tx = self.value(*x);
                let dx: Vec<f64> = up
                    .iter()
                    .zip(tx.data())
                    .map(|(&u, &v)| if v > 0.0 { u } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::Tanh(x) => {
                let y = node.value.data();
                let dx: Vec<f64> =
                    up.iter().zip(y).map(|(&u, &yi)| u * (1.0 - yi * yi)).collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::ConcatCols(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    let mut da = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        da.extend_from_slice(&up[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        db.extend_from_slice(&up[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    self.accumulate(grads, *b, &db);
                }
            }

            Op::SliceCols { x, start, len } => {
                let tx = self.value(*x);
                let (rows, cols) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; tx.numel()];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&up[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, &dx);
            }

            Op::SelectRows { x, rows } => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let mut dx = vec![0.0; tx.numel()];
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..cols {
                        dx[r * cols + c] += up[i * cols + c];
                    }
                }
                self.accumulate(grads, *x, &dx);
            }

            Op::Reshape(x) => {
                self.accumulate(grads, *x, up);
            }

            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, &vec![up[0]; n]);
            }

            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, &vec![up[0] / n as f64; n]);
            }
        }
    }
}

// ── Raw kernels ─────────────────────────────────────────────────────────

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

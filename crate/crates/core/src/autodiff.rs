//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! requires them. Gradients accumulate across calls until [`Tape::zero_grad`].

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, masked_softmax_values, AdditiveMask, Matrix};

/// Clamp applied to probabilities before taking a logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    /// tanh approximation of GELU
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Activation(Var, Activation),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    SegmentMean {
        x: Var,
        seg: Vec<usize>,
        counts: Vec<usize>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    CrossEntropy {
        input: Var,
        target: usize,
        /// softmax(logits), or the raw probabilities when `from_probs`
        probs: Vec<f64>,
        from_probs: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Deliberate backward-pass defects used as negative controls for gradient checking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackwardFault {
    /// Multiply every activation derivative by the given factor.
    ScaleActivation(f64),
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<BackwardFault>,
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::Shape { op, lhs, rhs }
}

fn accumulate(slot: &mut Option<Matrix>, contribution: Matrix) {
    match slot {
        Some(existing) => existing.add_assign(&contribution),
        None => *slot = Some(contribution),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let out = matmul_nn(va, vb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::new(va.rows(), va.cols(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `x + bias` with a `1×c` bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(shape_err("add_row_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(vb.data()) {
                *o += *b;
            }
        }
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let out = self.value(x).map(|v| act.apply(v));
        self.push(out, Op::Activation(x, act), &[x])
    }

    /// `activation(x·w + bias)`.
    pub fn dense(&mut self, x: Var, w: Var, bias: Var, act: Activation) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let z = self.add_row_bias(xw, bias)?;
        Ok(if act == Activation::Linear {
            z
        } else {
            self.activation(z, act)
        })
    }

    /// Row-wise softmax of `scores + Σ masks`; see [`masked_softmax_values`].
    pub fn masked_softmax(&mut self, scores: Var, masks: &[&AdditiveMask]) -> Result<Var> {
        let out = masked_softmax_values(self.value(scores), masks)?;
        Ok(self.push(out, Op::Softmax(scores), &[scores]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let h = vx.cols();
        if vg.shape() != (1, h) || vb.shape() != (1, h) {
            return Err(shape_err("layer_norm", vx.shape(), vg.shape()));
        }
        let mut normalized = Matrix::zeros(vx.rows(), h);
        let mut out = Matrix::zeros(vx.rows(), h);
        let mut inv_std = Vec::with_capacity(vx.rows());
        for i in 0..vx.rows() {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..h {
                let xhat = (row[j] - mean) * inv;
                normalized.set(i, j, xhat);
                out.set(i, j, vg.get(0, j) * xhat + vb.get(0, j));
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn mean_pool_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() == 0 {
            return Err(Error::Empty("mean_pool_rows"));
        }
        let mut out = Matrix::zeros(1, vx.cols());
        for i in 0..vx.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(vx.row(i)) {
                *o += *v;
            }
        }
        out.scale_in_place(1.0 / vx.rows() as f64);
        Ok(self.push(out, Op::MeanRows(x), &[x]))
    }

    /// Column-wise max; ties resolve to the first row.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() == 0 {
            return Err(Error::Empty("max_pool_rows"));
        }
        let mut out = Matrix::zeros(1, vx.cols());
        let mut argmax = vec![0usize; vx.cols()];
        for j in 0..vx.cols() {
            let mut best = vx.get(0, j);
            for i in 1..vx.rows() {
                if vx.get(i, j) > best {
                    best = vx.get(i, j);
                    argmax[j] = i;
                }
            }
            out.set(0, j, best);
        }
        Ok(self.push(out, Op::MaxRows(x, argmax), &[x]))
    }

    /// Row `i` of the output is the mean of rows `{j : seg[j] = i}`.
    pub fn segment_mean_pool(&mut self, x: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let vx = self.value(x);
        if seg.len() != vx.rows() {
            return Err(shape_err("segment_mean_pool", vx.shape(), (seg.len(), 1)));
        }
        let mut counts = vec![0usize; segments];
        let mut out = Matrix::zeros(segments, vx.cols());
        for (j, &s) in seg.iter().enumerate() {
            if s >= segments {
                return Err(Error::Index {
                    what: "segment",
                    index: s,
                    len: segments,
                });
            }
            counts[s] += 1;
            for (o, v) in out.row_mut(s).iter_mut().zip(vx.row(j)) {
                *o += *v;
            }
        }
        for (s, &count) in counts.iter().enumerate() {
            if count == 0 {
                return Err(Error::Empty("segment_mean_pool segment"));
            }
            for o in out.row_mut(s) {
                *o /= count as f64;
            }
        }
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                seg: seg.to_vec(),
                counts,
            },
            &[x],
        ))
    }

    /// Output row `i` is input row `indices[i]`.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let mut out = Matrix::zeros(indices.len(), vx.cols());
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= vx.rows() {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: idx,
                    len: vx.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(vx.row(idx));
        }
        Ok(self.push(out, Op::GatherRows(x, indices.to_vec()), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::Empty("concat_cols")),
        };
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]).shape(), v.shape()));
            }
            total += v.cols();
        }
        let mut out = Matrix::zeros(rows, total);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let row = self.nodes[p.0].value.row(i);
                out.row_mut(i)[offset..offset + row.len()].copy_from_slice(row);
                offset += row.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::Empty("concat_rows")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]).shape(), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Matrix::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let vx = self.value(x);
        if start > end || end > vx.cols() {
            return Err(Error::Index {
                what: "slice_cols",
                index: end,
                len: vx.cols(),
            });
        }
        let mut out = Matrix::zeros(vx.rows(), end - start);
        for i in 0..vx.rows() {
            out.row_mut(i).copy_from_slice(&vx.row(i)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::from_rows(&[[self.value(x).sum()]]);
        self.push(out, Op::Sum(x), &[x])
    }

    /// Sum of several scalars.
    pub fn add_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let mut iter = parts.iter();
        let mut acc = *iter.next().ok_or(Error::Empty("add_scalars"))?;
        for &p in iter {
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    /// Cross-entropy of a `1×k` row against `target`. With `input_is_probs`
    /// the row is taken as a probability vector and `−ln max(p, 1e-12)` is
    /// returned; otherwise the row holds logits.
    pub fn cross_entropy(&mut self, input: Var, target: usize, input_is_probs: bool) -> Result<Var> {
        let v = self.value(input);
        if v.rows() != 1 || v.cols() == 0 {
            return Err(shape_err("cross_entropy", v.shape(), (1, v.cols().max(1))));
        }
        if target >= v.cols() {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: target,
                len: v.cols(),
            });
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("cross_entropy input"));
        }
        let (loss, probs) = if input_is_probs {
            let total = v.sum();
            if v.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "cross_entropy expects a probability vector, sum = {total}"
                )));
            }
            let p = v.get(0, target).max(PROB_CLAMP);
            (-p.ln(), v.data().to_vec())
        } else {
            let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = v.data().iter().map(|x| (x - max).exp()).sum();
            let log_z = max + total.ln();
            let probs = v.data().iter().map(|x| (x - log_z).exp()).collect();
            (log_z - v.get(0, target), probs)
        };
        let out = Matrix::from_rows(&[[loss]]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                input,
                target,
                probs,
                from_probs: input_is_probs,
            },
            &[input],
        ))
    }

    /// Accumulates `∂loss/∂node` into every node that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(shape_err("backward", self.shape(loss), (1, 1)));
        }
        let mut adj: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let act_scale = match self.fault {
            Some(BackwardFault::ScaleActivation(f)) => f,
            None => 1.0,
        };

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if needs(a) {
                        accumulate(&mut adj[a.0], matmul_nt(&g, &self.nodes[b.0].value));
                    }
                    if needs(b) {
                        accumulate(&mut adj[b.0], matmul_tn(&self.nodes[a.0].value, &g));
                    }
                }
                Op::Transpose(a) => accumulate(&mut adj[a.0], g.transpose()),
                Op::Add(a, b) => {
                    if needs(a) {
                        accumulate(&mut adj[a.0], g.clone());
                    }
                    if needs(b) {
                        accumulate(&mut adj[b.0], g.clone());
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if needs(a) {
                        let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj[a.0], Matrix::new(g.rows(), g.cols(), d)?);
                    }
                    if needs(b) {
                        let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj[b.0], Matrix::new(g.rows(), g.cols(), d)?);
                    }
                }
                Op::AddRowBias(x, bias) => {
                    if needs(bias) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (o, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                                *o += *v;
                            }
                        }
                        accumulate(&mut adj[bias.0], db);
                    }
                    if needs(x) {
                        accumulate(&mut adj[x.0], g.clone());
                    }
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut adj[x.0], g.map(|v| v * f));
                }
                Op::Activation(x, act) => {
                    let (vx, vy) = (&self.nodes[x.0].value, &node.value);
                    let d = g
                        .data()
                        .iter()
                        .zip(vx.data().iter().zip(vy.data()))
                        .map(|(gv, (&xv, &yv))| gv * act.derivative(xv, yv) * act_scale)
                        .collect();
                    accumulate(&mut adj[x.0], Matrix::new(g.rows(), g.cols(), d)?);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for j in 0..y.cols() {
                            dx.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut adj[x.0], dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let vg = &self.nodes[gamma.0].value;
                    let (rows, h) = g.shape();
                    if needs(gamma) {
                        let mut dg = Matrix::zeros(1, h);
                        for i in 0..rows {
                            for j in 0..h {
                                dg.data_mut()[j] += g.get(i, j) * normalized.get(i, j);
                            }
                        }
                        accumulate(&mut adj[gamma.0], dg);
                    }
                    if needs(beta) {
                        let mut db = Matrix::zeros(1, h);
                        for i in 0..rows {
                            for (o, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                                *o += *v;
                            }
                        }
                        accumulate(&mut adj[beta.0], db);
                    }
                    if needs(x) {
                        let mut dx = Matrix::zeros(rows, h);
                        let n = h as f64;
                        for i in 0..rows {
                            let dxhat: Vec<f64> = (0..h).map(|j| g.get(i, j) * vg.get(0, j)).collect();
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dx: f64 =
                                dxhat.iter().zip(normalized.row(i)).map(|(a, b)| a * b).sum();
                            for j in 0..h {
                                let xhat = normalized.get(i, j);
                                dx.set(
                                    i,
                                    j,
                                    inv_std[i] / n * (n * dxhat[j] - sum_d - xhat * sum_dx),
                                );
                            }
                        }
                        accumulate(&mut adj[x.0], dx);
                    }
                }
                Op::MeanRows(x) => {
                    let rows = self.nodes[x.0].value.rows();
                    let mut dx = Matrix::zeros(rows, g.cols());
                    for i in 0..rows {
                        for (o, v) in dx.row_mut(i).iter_mut().zip(g.data()) {
                            *o = v / rows as f64;
                        }
                    }
                    accumulate(&mut adj[x.0], dx);
                }
                Op::MaxRows(x, argmax) => {
                    let rows = self.nodes[x.0].value.rows();
                    let mut dx = Matrix::zeros(rows, g.cols());
                    for (j, &i) in argmax.iter().enumerate() {
                        dx.set(i, j, g.get(0, j));
                    }
                    accumulate(&mut adj[x.0], dx);
                }
                Op::SegmentMean { x, seg, counts } => {
                    let mut dx = Matrix::zeros(seg.len(), g.cols());
                    for (j, &s) in seg.iter().enumerate() {
                        let c = counts[s] as f64;
                        for (o, v) in dx.row_mut(j).iter_mut().zip(g.row(s)) {
                            *o = v / c;
                        }
                    }
                    accumulate(&mut adj[x.0], dx);
                }
                Op::GatherRows(x, indices) => {
                    let mut dx = Matrix::zeros(self.nodes[x.0].value.rows(), g.cols());
                    for (i, &idx) in indices.iter().enumerate() {
                        for (o, v) in dx.row_mut(idx).iter_mut().zip(g.row(i)) {
                            *o += *v;
                        }
                    }
                    accumulate(&mut adj[x.0], dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.nodes[p.0].value.cols();
                        if needs(p) {
                            let mut dp = Matrix::zeros(g.rows(), cols);
                            for i in 0..g.rows() {
                                dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                            }
                            accumulate(&mut adj[p.0], dp);
                        }
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        if needs(p) {
                            let start = offset * g.cols();
                            let d = g.data()[start..start + rows * g.cols()].to_vec();
                            accumulate(&mut adj[p.0], Matrix::new(rows, g.cols(), d)?);
                        }
                        offset += rows;
                    }
                }
                Op::SliceCols(x, start) => {
                    let vx = &self.nodes[x.0].value;
                    let mut dx = Matrix::zeros(vx.rows(), vx.cols());
                    for i in 0..g.rows() {
                        dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj[x.0], dx);
                }
                Op::Sum(x) => {
                    let (r, c) = self.nodes[x.0].value.shape();
                    accumulate(&mut adj[x.0], Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::CrossEntropy {
                    input,
                    target,
                    probs,
                    from_probs,
                } => {
                    let k = probs.len();
                    let mut d = Matrix::zeros(1, k);
                    let gv = g.get(0, 0);
                    if *from_probs {
                        let p = probs[*target];
                        if p > PROB_CLAMP {
                            d.set(0, *target, -gv / p);
                        }
                    } else {
                        for (j, &p) in probs.iter().enumerate() {
                            let indicator = if j == *target { 1.0 } else { 0.0 };
                            d.set(0, j, gv * (p - indicator));
                        }
                    }
                    accumulate(&mut adj[input.0], d);
                }
            }
            adj[idx] = Some(g);
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if let (true, Some(a)) = (node.requires_grad, a) {
                accumulate(&mut node.grad, a);
            }
        }
        Ok(())
    }
}

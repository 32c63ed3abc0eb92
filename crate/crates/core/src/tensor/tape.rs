use rand::Rng;

use super::{matmul_raw, sigmoid_scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// Second operand is either the same shape or a `1 × n` row broadcast.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Swish(Var),
    Glu(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Vec<f64>),
    Unfold {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    DepthwiseConv {
        x: Var,
        kernel: Var,
    },
    MaskRows(Var, usize),
    Precomputed {
        x: Var,
        grad: Tensor,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            MatMul(a, b) | Add(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Relu(a) | Sigmoid(a) | Swish(a) | Glu(a)
            | Softmax(a, _) | Transpose(a) | SliceCols(a, _) | SliceRows(a, _)
            | Gather(a, _) | Sum(a) | Mean(a) | Dropout(a, _) | MaskRows(a, _) => vec![*a],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            ConcatCols(vs) => vs.clone(),
            Unfold { x, .. } => vec![*x],
            DepthwiseConv { x, kernel } => vec![*x, *kernel],
            Precomputed { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of tensor operations.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children. Gradients are kept only for leaves; [`Tape::backward`] adds into
/// them, so calling it twice without [`Tape::zero_grads`] doubles them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn expect_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if !t.is_matrix() {
        return Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.rows(), t.cols()))
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_matrix("matmul", self.value(a))?;
        let (k2, n) = expect_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {m}×{k} · {k2}×{n}"),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// Elementwise sum. `b` may also be a `1 × n` row added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = expect_matrix("add", self.value(a))?;
        let (bm, bn) = expect_matrix("add", self.value(b))?;
        if bn != n || (bm != m && bm != 1) {
            return Err(Error::shape("add", format!("{m}×{n} + {bm}×{bn}")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out: Vec<f64> = if bm == m {
            av.iter().zip(bv).map(|(x, y)| x + y).collect()
        } else {
            av.iter().enumerate().map(|(i, x)| x + bv[i % n]).collect()
        };
        Ok(self.push(Tensor::matrix(m, n, out), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        if sa != self.value(b).shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} ⊙ {:?}", sa, self.value(b).shape()),
            ));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let (m, n) = self.shape(a);
        Ok(self.push(Tensor::matrix(m, n, out), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid_scalar);
        self.push(t, Op::Sigmoid(a))
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * sigmoid_scalar(x));
        self.push(t, Op::Swish(a))
    }

    /// Gated linear unit over column halves: `left ⊙ sigmoid(right)`.
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let (m, n) = expect_matrix("glu", self.value(a))?;
        if n % 2 != 0 {
            return Err(Error::shape("glu", format!("odd width {n}")));
        }
        let h = n / 2;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * h);
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            for c in 0..h {
                out.push(row[c] * sigmoid_scalar(row[h + c]));
            }
        }
        Ok(self.push(Tensor::matrix(m, h, out), Op::Glu(a)))
    }

    /// Softmax along `axis` (1: within each row, 0: within each column),
    /// with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = expect_matrix("softmax", self.value(a))?;
        if axis > 1 {
            return Err(Error::shape("softmax", format!("axis {axis} out of range")));
        }
        let out = softmax_raw(self.value(a).data(), m, n, axis);
        Ok(self.push(Tensor::matrix(m, n, out), Op::Softmax(a, axis)))
    }

    /// Layer normalization over the last axis with `gain`/`bias` of shape `1 × n`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = expect_matrix("layer_norm", self.value(x))?;
        if self.shape(gain) != (1, n) || self.shape(bias) != (1, n) {
            return Err(Error::shape(
                "layer_norm",
                format!("gain/bias must be 1×{n}"),
            ));
        }
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * gv[c] + bv[c];
            }
        }
        Ok(self.push(
            Tensor::matrix(m, n, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        expect_matrix("transpose", self.value(a))?;
        let t = self.value(a).transpose();
        Ok(self.push(t, Op::Transpose(a)))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let m = self.shape(*first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = expect_matrix("concat_cols", self.value(p))?;
            if pm != m {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = expect_matrix("slice_cols", self.value(a))?;
        if start >= end || end > n {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {n}")));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&x[r * n + start..r * n + end]);
        }
        Ok(self.push(Tensor::matrix(m, end - start, out), Op::SliceCols(a, start)))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, _) = expect_matrix("slice_rows", self.value(a))?;
        if start >= end || end > m {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {m}")));
        }
        let t = self.value(a).slice_rows(start, end);
        Ok(self.push(t, Op::SliceRows(a, start)))
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = expect_matrix("embedding_lookup", self.value(table))?;
        if ids.is_empty() {
            return Err(Error::shape("embedding_lookup", "no ids"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= m) {
            return Err(Error::shape(
                "embedding_lookup",
                format!("id {bad} out of range for {m} rows"),
            ));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor::matrix(ids.len(), n, out),
            Op::Gather(table, ids.to_vec()),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Inverted dropout. Returns `a` unchanged when `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Var {
        if !train || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let (m, n) = self.shape(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, k)| x * k)
            .collect();
        self.push(Tensor::matrix(m, n, out), Op::Dropout(a, mask))
    }

    /// Frame unfolding for strided 1-D convolution over rows: output row `r`
    /// is the concatenation of input rows `r·stride − pad + j` for
    /// `j in 0..kernel` (zeros outside the input). Output has
    /// `⌊(T + 2·pad − kernel) / stride⌋ + 1` rows.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (t, d) = expect_matrix("unfold", self.value(x))?;
        if kernel == 0 || stride == 0 || t + 2 * pad < kernel {
            return Err(Error::shape(
                "unfold",
                format!("kernel {kernel}, stride {stride}, pad {pad} on {t} rows"),
            ));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let xv = self.value(x).data();
        let mut out = vec![0.0; t_out * kernel * d];
        for r in 0..t_out {
            for j in 0..kernel {
                let src = (r * stride + j) as isize - pad as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                let src = src as usize;
                let dst = r * kernel * d + j * d;
                out[dst..dst + d].copy_from_slice(&xv[src * d..(src + 1) * d]);
            }
        }
        Ok(self.push(
            Tensor::matrix(t_out, kernel * d, out),
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            },
        ))
    }

    /// Per-channel "same" convolution along rows. `kernel` is `k × d` with odd `k`;
    /// `y[t, c] = Σ_j kernel[j, c] · x[t + j − (k−1)/2, c]`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (t, d) = expect_matrix("depthwise_conv1d", self.value(x))?;
        let (k, kd) = expect_matrix("depthwise_conv1d", self.value(kernel))?;
        if kd != d {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("kernel width {kd} != channels {d}"),
            ));
        }
        if k % 2 == 0 {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("kernel length {k} must be odd"),
            ));
        }
        let pad = (k - 1) / 2;
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            for j in 0..k {
                let src = (r + j) as isize - pad as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                let src = src as usize;
                for c in 0..d {
                    out[r * d + c] += kv[j * d + c] * xv[src * d + c];
                }
            }
        }
        Ok(self.push(
            Tensor::matrix(t, d, out),
            Op::DepthwiseConv { x, kernel },
        ))
    }

    /// Zeroes every row at index `valid` and beyond.
    pub fn mask_rows(&mut self, a: Var, valid: usize) -> Var {
        let (m, n) = self.shape(a);
        if valid >= m {
            return a;
        }
        let mut out = self.value(a).data().to_vec();
        out[valid * n..].iter_mut().for_each(|v| *v = 0.0);
        self.push(Tensor::matrix(m, n, out), Op::MaskRows(a, valid))
    }

    /// Records a scalar `value = f(x)` whose gradient `∂f/∂x` was computed
    /// outside the tape.
    pub fn precomputed_scalar(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.value(x).shape() {
            return Err(Error::shape(
                "precomputed_scalar",
                "gradient shape differs from input",
            ));
        }
        Ok(self.push(Tensor::scalar(value), Op::Precomputed { x, grad }))
    }

    /// `x W + b` with `W: in × out` and `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Reverse pass from a scalar node. Gradients are added into every
    /// reachable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b),
                    slot @ None => {
                        let (m, n) = (node.value.rows(), node.value.cols());
                        *slot = Some(Tensor::matrix(m, n, g));
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let (m, n) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let k = av.cols();
                if self.wants(*a) {
                    // dA = G Bᵀ
                    let bt = bv.transpose();
                    let da = matmul_raw(g, bt.data(), m, n, k);
                    self.acc(adj, *a, |dst| add_into(dst, &da));
                }
                if self.wants(*b) {
                    // dB = Aᵀ G
                    let at = av.transpose();
                    let db = matmul_raw(at.data(), g, k, m, n);
                    self.acc(adj, *b, |dst| add_into(dst, &db));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.acc(adj, *a, |dst| add_into(dst, g));
                }
                if self.wants(*b) {
                    let broadcast = self.value(*b).rows() != m;
                    self.acc(adj, *b, |dst| {
                        if broadcast {
                            for (idx, gv) in g.iter().enumerate() {
                                dst[idx % n] += gv;
                            }
                        } else {
                            add_into(dst, g);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    self.acc(adj, *a, |dst| {
                        for ((d, gv), bx) in dst.iter_mut().zip(g).zip(bv) {
                            *d += gv * bx;
                        }
                    });
                }
                if self.wants(*b) {
                    self.acc(adj, *b, |dst| {
                        for ((d, gv), ax) in dst.iter_mut().zip(g).zip(av) {
                            *d += gv * ax;
                        }
                    });
                }
            }
            Op::Scale(a, s) => self.acc(adj, *a, |dst| {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += s * gv;
                }
            }),
            Op::AddScalar(a) => self.acc(adj, *a, |dst| add_into(dst, g)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc(adj, *a, |dst| {
                    for ((d, gv), xv) in dst.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                })
            }
            Op::Sigmoid(a) => self.acc(adj, *a, |dst| {
                for ((d, gv), s) in dst.iter_mut().zip(g).zip(y) {
                    *d += gv * s * (1.0 - s);
                }
            }),
            Op::Swish(a) => {
                let x = self.value(*a).data();
                self.acc(adj, *a, |dst| {
                    for ((d, gv), xv) in dst.iter_mut().zip(g).zip(x) {
                        let s = sigmoid_scalar(*xv);
                        *d += gv * s * (1.0 + xv * (1.0 - s));
                    }
                })
            }
            Op::Glu(a) => {
                let x = self.value(*a).data();
                let w = 2 * n;
                self.acc(adj, *a, |dst| {
                    for r in 0..m {
                        for c in 0..n {
                            let left = x[r * w + c];
                            let s = sigmoid_scalar(x[r * w + n + c]);
                            let gv = g[r * n + c];
                            dst[r * w + c] += gv * s;
                            dst[r * w + n + c] += gv * left * s * (1.0 - s);
                        }
                    }
                })
            }
            Op::Softmax(a, axis) => self.acc(adj, *a, |dst| {
                if *axis == 1 {
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            dst[r * n + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                } else {
                    for c in 0..n {
                        let dot: f64 = (0..m).map(|r| y[r * n + c] * g[r * n + c]).sum();
                        for r in 0..m {
                            dst[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
                        }
                    }
                }
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                if self.wants(*x) {
                    self.acc(adj, *x, |dst| {
                        for r in 0..m {
                            let mut mean_gg = 0.0;
                            let mut mean_ggx = 0.0;
                            for c in 0..n {
                                let gg = g[r * n + c] * gv[c];
                                mean_gg += gg;
                                mean_ggx += gg * xhat[r * n + c];
                            }
                            mean_gg /= n as f64;
                            mean_ggx /= n as f64;
                            for c in 0..n {
                                let gg = g[r * n + c] * gv[c];
                                dst[r * n + c] +=
                                    rstd[r] * (gg - mean_gg - xhat[r * n + c] * mean_ggx);
                            }
                        }
                    });
                }
                if self.wants(*gain) {
                    self.acc(adj, *gain, |dst| {
                        for (idx, gvv) in g.iter().enumerate() {
                            dst[idx % n] += gvv * xhat[idx];
                        }
                    });
                }
                if self.wants(*bias) {
                    self.acc(adj, *bias, |dst| {
                        for (idx, gvv) in g.iter().enumerate() {
                            dst[idx % n] += gvv;
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::matrix(m, n, g.to_vec()).transpose();
                self.acc(adj, *a, |dst| add_into(dst, gt.data()));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        self.acc(adj, p, |dst| {
                            for r in 0..m {
                                for c in 0..w {
                                    dst[r * w + c] += g[r * n + offset + c];
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let w = self.value(*a).cols();
                self.acc(adj, *a, |dst| {
                    for r in 0..m {
                        for c in 0..n {
                            dst[r * w + start + c] += g[r * n + c];
                        }
                    }
                })
            }
            Op::SliceRows(a, start) => self.acc(adj, *a, |dst| {
                add_into(&mut dst[start * n..(start + m) * n], g);
            }),
            Op::Gather(table, ids) => self.acc(adj, *table, |dst| {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut dst[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }),
            Op::Sum(a) => self.acc(adj, *a, |dst| dst.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let scale = g[0] / self.value(*a).len() as f64;
                self.acc(adj, *a, |dst| dst.iter_mut().for_each(|d| *d += scale))
            }
            Op::Dropout(a, mask) => self.acc(adj, *a, |dst| {
                for ((d, gv), k) in dst.iter_mut().zip(g).zip(mask) {
                    *d += gv * k;
                }
            }),
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            } => {
                let (t, d) = self.shape(*x);
                self.acc(adj, *x, |dst| {
                    for r in 0..m {
                        for j in 0..*kernel {
                            let src = (r * stride + j) as isize - *pad as isize;
                            if src < 0 || src as usize >= t {
                                continue;
                            }
                            let src = src as usize;
                            let off = r * kernel * d + j * d;
                            add_into(&mut dst[src * d..(src + 1) * d], &g[off..off + d]);
                        }
                    }
                })
            }
            Op::DepthwiseConv { x, kernel } => {
                let xv = self.value(*x).data();
                let kv = self.value(*kernel).data();
                let k = self.value(*kernel).rows();
                let pad = (k - 1) / 2;
                let (t, d) = (m, n);
                if self.wants(*x) {
                    self.acc(adj, *x, |dst| {
                        for r in 0..t {
                            for j in 0..k {
                                let src = (r + j) as isize - pad as isize;
                                if src < 0 || src as usize >= t {
                                    continue;
                                }
                                let src = src as usize;
                                for c in 0..d {
                                    dst[src * d + c] += kv[j * d + c] * g[r * d + c];
                                }
                            }
                        }
                    });
                }
                if self.wants(*kernel) {
                    self.acc(adj, *kernel, |dst| {
                        for r in 0..t {
                            for j in 0..k {
                                let src = (r + j) as isize - pad as isize;
                                if src < 0 || src as usize >= t {
                                    continue;
                                }
                                let src = src as usize;
                                for c in 0..d {
                                    dst[j * d + c] += xv[src * d + c] * g[r * d + c];
                                }
                            }
                        }
                    });
                }
            }
            Op::MaskRows(a, valid) => self.acc(adj, *a, |dst| {
                add_into(&mut dst[..valid * n], &g[..valid * n]);
            }),
            Op::Precomputed { x, grad } => self.acc(adj, *x, |dst| {
                for (d, gv) in dst.iter_mut().zip(grad.data()) {
                    *d += g[0] * gv;
                }
            }),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, adj: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let slot = &mut adj[v.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }
}

/// Variance epsilon inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-12;

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_raw(x: &[f64], m: usize, n: usize, axis: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if axis == 1 {
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..n {
                let e = (row[c] - mx).exp();
                out[r * n + c] = e;
                z += e;
            }
            out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v /= z);
        }
    } else {
        for c in 0..n {
            let mx = (0..m).map(|r| x[r * n + c]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for r in 0..m {
                let e = (x[r * n + c] - mx).exp();
                out[r * n + c] = e;
                z += e;
            }
            for r in 0..m {
                out[r * n + c] /= z;
            }
        }
    }
    out
}

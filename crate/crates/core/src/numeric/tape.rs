use std::sync::Arc;

use super::{Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Gelu,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Tanh,
    Neg,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Binary { kind: BinKind, a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    Unary { kind: UnaryKind, a: Var },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    MaskedFill { a: Var, mask: Arc<[bool]> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather { table: Var, rows: Arc<[usize]> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Sum { a: Var },
    Mean { a: Var },
    Transpose { a: Var },
    Reshape { a: Var },
    CrossEntropy { logits: Var, targets: Arc<[usize]>, probs: Vec<f64> },
    Bce { pred: Var, target: Arc<[f64]>, lo: f64, hi: f64 },
    LogMeanExp { a: Var, weights: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Binary { kind, .. } => match kind {
                BinKind::Add => "add",
                BinKind::Sub => "sub",
                BinKind::Mul => "mul",
            },
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Gelu => "gelu",
                UnaryKind::Relu => "relu",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Exp => "exp",
                UnaryKind::Log => "log",
                UnaryKind::Tanh => "tanh",
                UnaryKind::Neg => "neg",
            },
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::MaskedFill { .. } => "masked_fill",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Bce { .. } => "bce",
            Op::LogMeanExp { .. } => "log_mean_exp",
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Every op appends a node; [`Tape::backward`] walks the
/// nodes in reverse and accumulates gradients into leaves.
///
/// A tape is confined to the thread that builds it.
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    nan_check: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = beta*c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
/// A transposed operand is stored in its untransposed row-major layout.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: slice lengths match the dimensions and strides checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out`, zero along broadcast dimensions.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let mut strides = vec![0; nd];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + nd - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Tape {
    /// New tape; non-finite screening follows `debug_assertions`.
    pub fn new() -> Self {
        Self::with_nan_check(cfg!(debug_assertions))
    }

    pub fn with_nan_check(nan_check: bool) -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            nan_check,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(t), requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf_shared(&mut self, t: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if self.nan_check {
            if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    op: op.name().into(),
                    index: i,
                });
            }
        }
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Unary { a, .. }
            | Op::Softmax { a }
            | Op::LogSoftmax { a }
            | Op::MaskedFill { a, .. }
            | Op::SliceRows { a, .. }
            | Op::SliceCols { a, .. }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::Transpose { a }
            | Op::Reshape { a }
            | Op::LogMeanExp { a, .. } => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Bce { pred, .. } => vec![*pred],
        }
    }

    fn mismatch(op: &str, a: &[usize], b: &[usize]) -> TensorError {
        TensorError::ShapeMismatch {
            op: op.into(),
            left: a.to_vec(),
            right: b.to_vec(),
        }
    }

    fn matmul_impl(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ar, ac) = match av.shape() {
            [r, c] => (*r, *c),
            s => return Err(Self::mismatch("matmul", s, bv.shape())),
        };
        let (br, bc) = match bv.shape() {
            [r, c] => (*r, *c),
            s => return Err(Self::mismatch("matmul", av.shape(), s)),
        };
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Self::mismatch("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), ta, bv.data(), tb, &mut out, 0.0);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, ta, tb })
    }

    /// `a · b` for matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false, true)
    }

    /// `aᵀ · b` without materializing the transpose.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true, false)
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let out = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(av.shape().to_vec(), data)
        } else {
            let shape = broadcast_shape(av.shape(), bv.shape())
                .ok_or_else(|| Self::mismatch(Op::Binary { kind, a, b }.name(), av.shape(), bv.shape()))?;
            let sa = aligned_strides(av.shape(), &shape);
            let sb = aligned_strides(bv.shape(), &shape);
            let mut data = vec![0.0; shape.iter().product()];
            let (ad, bd) = (av.data(), bv.data());
            for_each_broadcast(&shape, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
            Tensor::from_parts(shape, data)
        };
        self.push(out, Op::Binary { kind, a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x + c).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, Op::AddScalar { a })
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let f = |x: f64| match kind {
            UnaryKind::Gelu => gelu(x),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Neg => -x,
        };
        let data = av.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, Op::Unary { kind, a })
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Neg, a)
    }

    /// Softmax along the last dimension. With a mask, entries whose mask
    /// value is `false` are excluded and receive probability zero; a row
    /// with no allowed entry is a contract error.
    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var, TensorError> {
        let av = self.value(a);
        let cols = last_dim(av.shape());
        if let Some(m) = allowed {
            if m.len() != av.len() {
                return Err(Self::mismatch("softmax", av.shape(), &[m.len()]));
            }
        }
        let mut out = vec![0.0; av.len()];
        for (r, (row, orow)) in av.data().chunks(cols.max(1)).zip(out.chunks_mut(cols.max(1))).enumerate() {
            let mrow = allowed.map(|m| &m[r * cols..(r + 1) * cols]);
            let ok = |j: usize| mrow.map_or(true, |m| m[j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if ok(j) && x > max {
                    max = x;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(TensorError::Contract(format!("softmax row {r} is fully masked")));
            }
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                if ok(j) {
                    let e = (x - max).exp();
                    orow[j] = e;
                    sum += e;
                }
            }
            let inv = 1.0 / sum;
            for (j, o) in orow.iter_mut().enumerate() {
                if ok(j) {
                    *o *= inv;
                }
            }
        }
        let out = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(out, Op::Softmax { a })
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let cols = last_dim(av.shape()).max(1);
        let mut out = vec![0.0; av.len()];
        for (row, orow) in av.data().chunks(cols).zip(out.chunks_mut(cols)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (o, x) in orow.iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let out = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(out, Op::LogSoftmax { a })
    }

    /// Replaces entries where `mask` is true with `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Result<Var, TensorError> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(Self::mismatch("masked_fill", av.shape(), &[mask.len()]));
        }
        let data = av
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, Op::MaskedFill { a, mask: mask.into() })
    }

    /// Row-wise layer normalization followed by the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let cols = last_dim(xv.shape());
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.len() != cols || bv.len() != cols {
            return Err(Self::mismatch("layer_norm", xv.shape(), gv.shape()));
        }
        let rows = xv.len() / cols.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        let (g, b) = (gv.data(), bv.data());
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..cols {
                let h = (row[j] - mean) * rs;
                xhat[r * cols + j] = h;
                out[r * cols + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Gathers rows of a `[n, d]` table; this is the embedding lookup.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let (n, d) = tv.dims2()?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(TensorError::Contract(format!("row index {r} out of range for {n} rows")));
            }
            out.extend_from_slice(&tv.data()[r * d..(r + 1) * d]);
        }
        let out = Tensor::from_parts(vec![rows.len(), d], out);
        self.push(out, Op::Gather { table, rows: rows.into() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let cols = self.value(*first).dims2()?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            let (r, c) = v.dims2()?;
            if c != cols {
                return Err(Self::mismatch("concat_rows", self.value(*first).shape(), v.shape()));
            }
            rows += r;
            out.extend_from_slice(v.data());
        }
        let out = Tensor::from_parts(vec![rows, cols], out);
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let rows = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Self::mismatch("concat_cols", self.value(*first).shape(), self.value(p).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::from_parts(vec![rows, total], out);
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (r, c) = av.dims2()?;
        if start + len > r {
            return Err(TensorError::Contract(format!(
                "row slice {start}..{} out of range for {r} rows",
                start + len
            )));
        }
        let out = Tensor::from_parts(vec![len, c], av.data()[start * c..(start + len) * c].to_vec());
        self.push(out, Op::SliceRows { a, start })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (r, c) = av.dims2()?;
        if start + len > c {
            return Err(TensorError::Contract(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&av.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::from_parts(vec![r, len], out);
        self.push(out, Op::SliceCols { a, start })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::from_parts(vec![], vec![s]), Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(TensorError::Contract("mean of an empty tensor".into()));
        }
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Tensor::from_parts(vec![], vec![s]), Op::Mean { a })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (r, c) = match av.shape() {
            [r, c] => (*r, *c),
            s => return Err(TensorError::Contract(format!("transpose needs a matrix, got {s:?}"))),
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose { a })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let av = self.value(a);
        let t = av.clone().reshape(shape)?;
        self.push(t, Op::Reshape { a })
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        let (n, v) = lv.dims2()?;
        if targets.len() != n {
            return Err(Self::mismatch("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if n == 0 {
            return Err(TensorError::Contract("cross_entropy over zero rows".into()));
        }
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(TensorError::Contract(format!("target {t} out of range for {v} classes")));
            }
            let row = &lv.data()[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (x - max).exp();
                sum += *p;
            }
            probs[i * v..(i + 1) * v].iter_mut().for_each(|p| *p /= sum);
            loss += max + sum.ln() - row[t];
        }
        let out = Tensor::from_parts(vec![], vec![loss / n as f64]);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.into(),
                probs,
            },
        )
    }

    /// Mean binary cross-entropy with predictions clamped to `[1e-7, 1-1e-7]`.
    pub fn bce(&mut self, pred: Var, target: &[f64]) -> Result<Var, TensorError> {
        const LO: f64 = 1e-7;
        let pv = self.value(pred);
        if pv.len() != target.len() {
            return Err(Self::mismatch("bce", pv.shape(), &[target.len()]));
        }
        if target.is_empty() {
            return Err(TensorError::Contract("bce over zero entries".into()));
        }
        let hi = 1.0 - LO;
        let mut loss = 0.0;
        for (&p, &c) in pv.data().iter().zip(target) {
            let p = p.clamp(LO, hi);
            loss -= c * p.ln() + (1.0 - c) * (1.0 - p).ln();
        }
        let out = Tensor::from_parts(vec![], vec![loss / target.len() as f64]);
        self.push(
            out,
            Op::Bce {
                pred,
                target: target.into(),
                lo: LO,
                hi,
            },
        )
    }

    /// `ln(mean(exp(a)))` over all entries, computed stably.
    pub fn log_mean_exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(TensorError::Contract("log_mean_exp of an empty tensor".into()));
        }
        let max = av.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = av.data().iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        let v = max + (sum / av.len() as f64).ln();
        self.push(Tensor::from_parts(vec![], vec![v]), Op::LogMeanExp { a, weights })
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 || !lv.shape().iter().all(|&d| d == 1) {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };
        let wants = |v: Var| nodes[v.0].requires_grad;
        let out = &nodes[id].value;
        // Borrow (allocating zeros on first touch) the adjoint buffer of `v`.
        fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                let (ar, ac) = av.dims2().unwrap();
                let (br, bc) = bv.dims2().unwrap();
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let n = if *tb { br } else { bc };
                if wants(*a) {
                    let ga = slot(adj, nodes, *a);
                    if *ta {
                        // A stored [k,m]: dA = op(B) · dCᵀ
                        gemm(k, n, m, bv.data(), *tb, g, true, ga, 1.0);
                    } else {
                        // dA = dC · op(B)ᵀ
                        gemm(m, n, k, g, false, bv.data(), !*tb, ga, 1.0);
                    }
                }
                if wants(*b) {
                    let gb = slot(adj, nodes, *b);
                    if *tb {
                        // B stored [n,k]: dB = dCᵀ · op(A)
                        gemm(n, m, k, g, true, av.data(), *ta, gb, 1.0);
                    } else {
                        // dB = op(A)ᵀ · dC
                        gemm(k, m, n, av.data(), !*ta, g, false, gb, 1.0);
                    }
                }
            }
            Op::Binary { kind, a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let same = av.shape() == bv.shape();
                let (sa, sb) = if same {
                    (vec![], vec![])
                } else {
                    (
                        aligned_strides(av.shape(), out.shape()),
                        aligned_strides(bv.shape(), out.shape()),
                    )
                };
                for (which, target) in [(0, *a), (1, *b)] {
                    if !wants(target) {
                        continue;
                    }
                    let ad = av.data();
                    let bd = bv.data();
                    let gt = slot(adj, nodes, target);
                    let coef = |ia: usize, ib: usize| match (kind, which) {
                        (BinKind::Add, _) => 1.0,
                        (BinKind::Sub, 0) => 1.0,
                        (BinKind::Sub, _) => -1.0,
                        (BinKind::Mul, 0) => bd[ib],
                        (BinKind::Mul, _) => ad[ia],
                    };
                    if same {
                        for i in 0..g.len() {
                            gt[i] += g[i] * coef(i, i);
                        }
                    } else {
                        for_each_broadcast(out.shape(), &sa, &sb, |o, ia, ib| {
                            let dst = if which == 0 { ia } else { ib };
                            gt[dst] += g[o] * coef(ia, ib);
                        });
                    }
                }
            }
            Op::Scale { a, c } => {
                if wants(*a) {
                    let ga = slot(adj, nodes, *a);
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                if wants(*a) {
                    let ga = slot(adj, nodes, *a);
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Unary { kind, a } => {
                if wants(*a) {
                    let x = val(*a).data();
                    let y = out.data();
                    let ga = slot(adj, nodes, *a);
                    for i in 0..g.len() {
                        let d = match kind {
                            UnaryKind::Gelu => gelu_grad(x[i]),
                            UnaryKind::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::Exp => y[i],
                            UnaryKind::Log => 1.0 / x[i],
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Neg => -1.0,
                        };
                        ga[i] += g[i] * d;
                    }
                }
            }
            Op::Softmax { a } => {
                if wants(*a) {
                    let cols = last_dim(out.shape()).max(1);
                    let y = out.data();
                    let ga = slot(adj, nodes, *a);
                    for r in 0..y.len() / cols {
                        let ys = &y[r * cols..(r + 1) * cols];
                        let gs = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            ga[r * cols + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { a } => {
                if wants(*a) {
                    let cols = last_dim(out.shape()).max(1);
                    let y = out.data();
                    let ga = slot(adj, nodes, *a);
                    for r in 0..y.len() / cols {
                        let gs = &g[r * cols..(r + 1) * cols];
                        let total: f64 = gs.iter().sum();
                        for j in 0..cols {
                            ga[r * cols + j] += gs[j] - y[r * cols + j].exp() * total;
                        }
                    }
                }
            }
            Op::MaskedFill { a, mask } => {
                if wants(*a) {
                    let ga = slot(adj, nodes, *a);
                    for i in 0..g.len() {
                        if !mask[i] {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = last_dim(out.shape()).max(1);
                let rows = xhat.len() / cols;
                let gam = val(*gamma).data();
                if wants(*x) {
                    let gx = slot(adj, nodes, *x);
                    for r in 0..rows {
                        let base = r * cols;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..cols {
                            let d = g[base + j] * gam[j];
                            mean_d += d;
                            mean_dx += d * xhat[base + j];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for j in 0..cols {
                            let d = g[base + j] * gam[j];
                            gx[base + j] += rstd[r] * (d - mean_d - xhat[base + j] * mean_dx);
                        }
                    }
                }
                if wants(*gamma) {
                    let gg = slot(adj, nodes, *gamma);
                    for r in 0..rows {
                        for j in 0..cols {
                            gg[j] += g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                }
                if wants(*beta) {
                    let gb = slot(adj, nodes, *beta);
                    for r in 0..rows {
                        for j in 0..cols {
                            gb[j] += g[r * cols + j];
                        }
                    }
                }
            }
            Op::Gather { table, rows } => {
                if wants(*table) {
                    let d = val(*table).dims2().unwrap().1;
                    let gt = slot(adj, nodes, *table);
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..d {
                            gt[r * d + j] += g[i * d + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        let gp = slot(adj, nodes, p);
                        gp.iter_mut().zip(&g[off..off + n]).for_each(|(x, y)| *x += y);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.dims2().unwrap().1;
                let rows = out.dims2().unwrap().0;
                let mut off = 0;
                for &p in parts {
                    let w = val(p).dims2().unwrap().1;
                    if wants(p) {
                        let gp = slot(adj, nodes, p);
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows { a, start } => {
                if wants(*a) {
                    let c = val(*a).dims2().unwrap().1;
                    let ga = slot(adj, nodes, *a);
                    for (x, y) in ga[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if wants(*a) {
                    let c = val(*a).dims2().unwrap().1;
                    let (r, len) = out.dims2().unwrap();
                    let ga = slot(adj, nodes, *a);
                    for i in 0..r {
                        for j in 0..len {
                            ga[i * c + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if wants(*a) {
                    let ga = slot(adj, nodes, *a);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean { a } => {
                if wants(*a) {
                    let ga = slot(adj, nodes, *a);
                    let s = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::Transpose { a } => {
                if wants(*a) {
                    let (r, c) = val(*a).dims2().unwrap();
                    let ga = slot(adj, nodes, *a);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if wants(*logits) {
                    let v = val(*logits).dims2().unwrap().1;
                    let n = targets.len();
                    let s = g[0] / n as f64;
                    let gl = slot(adj, nodes, *logits);
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            gl[i * v + j] += s * probs[i * v + j];
                        }
                        gl[i * v + t] -= s;
                    }
                }
            }
            Op::Bce { pred, target, lo, hi } => {
                if wants(*pred) {
                    let p = val(*pred).data();
                    let n = target.len() as f64;
                    let gp = slot(adj, nodes, *pred);
                    for i in 0..p.len() {
                        if p[i] < *lo || p[i] > *hi {
                            continue;
                        }
                        let c = target[i];
                        gp[i] += g[0] * (-c / p[i] + (1.0 - c) / (1.0 - p[i])) / n;
                    }
                }
            }
            Op::LogMeanExp { a, weights } => {
                if wants(*a) {
                    let ga = slot(adj, nodes, *a);
                    ga.iter_mut().zip(weights).for_each(|(x, w)| *x += g[0] * w);
                }
            }
        }
    }
}

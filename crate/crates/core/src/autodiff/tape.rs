use super::tensor::Tensor;
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::linalg;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Exp,
    Log,
    Sqrt,
    Square,
    Abs,
    Relu,
    Softplus,
}

/// How the operands of a binary op map onto the output.
#[derive(Debug)]
enum Broadcast {
    Same,
    /// Right operand is a single value.
    RightScalar,
    LeftScalar,
    /// Per-output source indices for both operands.
    Indexed(Vec<usize>, Vec<usize>),
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    Detach,
    Binary { kind: BinaryKind, a: Var, b: Var, bcast: Broadcast },
    Unary { kind: UnaryKind, x: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    SumAll { x: Var },
    SumAxis { x: Var, outer: usize, len: usize, inner: usize },
    MaxAxis { x: Var, argmax: Vec<usize> },
    MaxAll { x: Var, argmax: usize },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    LogSumExp { x: Var },
    Concat { parts: Vec<(Var, usize)>, outer: usize, inner: usize },
    IndexSelect { x: Var, idx: Vec<usize>, row: usize },
    Reshape { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    BatchNorm { x: Var, inv_std: Vec<f64> },
    MvnLogpdf { x: Var, mu: Var, c: Var, chol: Vec<f64>, alpha: Vec<f64>, d: usize, r: usize },
    InvWishart { c: Var, grad_c: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics reported by [`Tape::batch_norm`] so callers can update
/// their running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` is unreachable.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }
}

/// A single-use recording of a forward computation.
///
/// Nodes are appended in evaluation order, so a node's parents always have
/// smaller indices and the tape is acyclic by construction. `backward` does
/// not mutate the tape; calling it twice yields identical gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

/// For each output position, the flat index into an operand of shape `src`
/// broadcast to `out`.
fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let offset = n - src.len();
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let total: usize = out.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    for _ in 0..total {
        idx.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for d in (0..n).rev() {
            counter[d] += 1;
            if counter[d] < out[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    idx
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_softmax(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn row_logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// A differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Param, true)
    }

    /// Same forward value as `x`; blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.push(v, Op::Detach, false)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let (va, vb) = (self.vals(a), self.vals(b));
        let (shape, values, bcast) = if sa == sb {
            let v = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            (sa, v, Broadcast::Same)
        } else if vb.len() == 1 && broadcast_shape(&sa, &sb).as_deref() == Some(&sa[..]) {
            let y = vb[0];
            (sa, va.iter().map(|&x| f(x, y)).collect(), Broadcast::RightScalar)
        } else if va.len() == 1 && broadcast_shape(&sa, &sb).as_deref() == Some(&sb[..]) {
            let x = va[0];
            (sb, vb.iter().map(|&y| f(x, y)).collect(), Broadcast::LeftScalar)
        } else {
            let out = broadcast_shape(&sa, &sb).ok_or_else(|| {
                Error::dim("elementwise", format!("cannot broadcast {sa:?} with {sb:?}"))
            })?;
            let ia = broadcast_index(&sa, &out);
            let ib = broadcast_index(&sb, &out);
            let v = ia.iter().zip(&ib).map(|(&i, &j)| f(va[i], vb[j])).collect();
            (out, v, Broadcast::Indexed(ia, ib))
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, values), Op::Binary { kind, a, b, bcast }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let v = self.value(x);
        match kind {
            UnaryKind::Log if v.values().iter().any(|&e| !(e > 0.0)) => {
                return Err(Error::domain("log", "non-positive input"));
            }
            UnaryKind::Sqrt if v.values().iter().any(|&e| !(e > 0.0)) => {
                return Err(Error::domain("sqrt", "non-positive input"));
            }
            _ => {}
        }
        let out = v.map(|e| match kind {
            UnaryKind::Neg => -e,
            UnaryKind::Exp => e.exp(),
            UnaryKind::Log => e.ln(),
            UnaryKind::Sqrt => e.sqrt(),
            UnaryKind::Square => e * e,
            UnaryKind::Abs => e.abs(),
            UnaryKind::Relu => e.max(0.0),
            UnaryKind::Softplus => softplus(e),
        });
        let ng = self.ng(x);
        Ok(self.push(out, Op::Unary { kind, x }, ng))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }

    /// `c · x`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|e| e * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale { x, c }, ng)
    }

    /// `x + c`.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|e| e + c);
        let ng = self.ng(x);
        self.push(out, Op::AddScalar { x }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.vals(a), self.vals(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in orow.iter_mut().zip(&vb[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, m, k, n }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("{s:?} is not a matrix")));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.vals(x);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = v[i * cols + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![cols, rows], out), Op::Transpose { x, rows, cols }, ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = outer_inner(&shape, axis);
        let v = self.vals(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += v[base + i];
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::SumAxis { x, outer, len, inner }, ng))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::dim("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    /// Max over `axis`, removing it. Gradient goes to the first maximizer.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("max_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = outer_inner(&shape, axis);
        let v = self.vals(x);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let src = (o * len + l) * inner + i;
                    let dst = o * inner + i;
                    if v[src] > out[dst] || l == 0 {
                        out[dst] = v[src];
                        argmax[dst] = src;
                    }
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::MaxAxis { x, argmax }, ng))
    }

    /// Max over every entry (row-major order); gradient to the first maximizer.
    pub fn max_all(&mut self, x: Var) -> Var {
        let v = self.vals(x);
        let mut best = 0;
        for (i, &e) in v.iter().enumerate() {
            if e > v[best] {
                best = i;
            }
        }
        let m = v[best];
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::MaxAll { x, argmax: best }, ng)
    }

    pub fn argmax_of(&self, v: Var) -> Option<usize> {
        match &self.nodes[v.0].op {
            Op::MaxAll { argmax, .. } => Some(*argmax),
            _ => None,
        }
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut out = vec![0.0; t.len()];
        for (row, o) in t.values().chunks(c).zip(out.chunks_mut(c)) {
            row_softmax(row, o);
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, out), Op::Softmax { x }, ng)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.values().chunks(c) {
            let lse = row_logsumexp(row);
            out.extend(row.iter().map(|v| v - lse));
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax { x }, ng)
    }

    /// Log-sum-exp over the trailing axis, removing it.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let out: Vec<f64> = t.values().chunks(c).map(row_logsumexp).collect();
        let mut shape = t.shape().to_vec();
        shape.pop();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, out), Op::LogSumExp { x }, ng)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            lens.push(s[axis]);
            total += s[axis];
        }
        let (outer, _, inner) = outer_inner(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let v = self.vals(p);
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.ng(p));
        let parts = parts.iter().copied().zip(lens).collect();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { parts, outer, inner }, ng))
    }

    /// Gather along the leading axis; indices may repeat.
    pub fn index_select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rows = t.rows();
        if t.shape().is_empty() || idx.is_empty() {
            return Err(Error::dim("index_select", "needs a non-scalar input and indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("index_select", format!("index {bad} out of {rows} rows")));
        }
        let row = t.len() / rows;
        let out = t.select_rows(idx);
        let ng = self.ng(x);
        Ok(self.push(out, Op::IndexSelect { x, idx: idx.to_vec(), row }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape { x }, ng))
    }

    /// Inverted dropout: in training mode each entry survives with
    /// probability `keep` and is scaled by `1/keep`; otherwise the identity.
    pub fn dropout(&mut self, x: Var, keep: f64, train: bool, rng: &mut RngStream) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::domain("dropout", format!("keep probability {keep}")));
        }
        if !train || keep == 1.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let mask: Vec<f64> =
            (0..n).map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 }).collect();
        let t = self.value(x);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.values().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        let ng = self.ng(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    /// Normalizes each column of an `m×c` input by its batch mean and
    /// (biased) variance. No affine transform; compose one if needed.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("batch_norm", format!("{s:?} is not a matrix")));
        }
        let (m, c) = (s[0], s[1]);
        let v = self.vals(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for row in v.chunks(c) {
            for (mu, &e) in mean.iter_mut().zip(row) {
                *mu += e;
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= m as f64);
        for row in v.chunks(c) {
            for j in 0..c {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|s2| *s2 /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|s2| 1.0 / (s2 + eps).sqrt()).collect();
        let out: Vec<f64> = v
            .chunks(c)
            .flat_map(|row| (0..c).map(|j| (row[j] - mean[j]) * inv_std[j]).collect::<Vec<_>>())
            .collect();
        let ng = self.ng(x);
        let node = self.push(Tensor::from_parts(vec![m, c], out), Op::BatchNorm { x, inv_std }, ng);
        Ok((node, BatchStats { mean, var }))
    }

    /// Row-wise multivariate normal log-density with covariance `C Cᵀ + I`.
    ///
    /// `x` is `m×d`, `mu` has `d` entries and `c` is `d×r`. Evaluated through
    /// the Cholesky factor of the covariance; returns a length-`m` vector.
    pub fn mvn_logpdf_factor(&mut self, x: Var, mu: Var, c: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sc = self.shape(c).to_vec();
        let d = sc.first().copied().unwrap_or(0);
        if sx.len() != 2 || sx[1] != d || sc.len() != 2 || self.value(mu).len() != d {
            return Err(Error::dim(
                "mvn_logpdf",
                format!("x {sx:?}, mu {:?}, factor {sc:?}", self.shape(mu)),
            ));
        }
        let (m, r) = (sx[0], sc[1]);
        let sigma = linalg::factor_covariance(self.vals(c), d, r);
        let chol = linalg::cholesky(&sigma, d)?;
        let logdet = linalg::chol_logdet(&chol, d);
        let (vx, vm) = (self.vals(x), self.vals(mu));
        let mut out = Vec::with_capacity(m);
        let mut alpha = Vec::with_capacity(m * d);
        let mut w = vec![0.0; d];
        let log2pi = (2.0 * std::f64::consts::PI).ln();
        for row in vx.chunks(d) {
            for j in 0..d {
                w[j] = row[j] - vm[j];
            }
            linalg::forward_solve(&chol, d, &mut w);
            let quad: f64 = w.iter().map(|e| e * e).sum();
            out.push(-0.5 * (d as f64 * log2pi + logdet + quad));
            linalg::backward_solve(&chol, d, &mut w);
            alpha.extend_from_slice(&w);
        }
        let ng = self.ng(x) || self.ng(mu) || self.ng(c);
        Ok(self.push(Tensor::vector(out), Op::MvnLogpdf { x, mu, c, chol, alpha, d, r }, ng))
    }

    /// Inverse-Wishart log-density of `Σ = C Cᵀ + I` with `nu` degrees of
    /// freedom and scale `psi` (`d×d`), as a function of the factor `c`.
    pub fn inv_wishart_logpdf_factor(&mut self, c: Var, nu: f64, psi: &[f64]) -> Result<Var> {
        let sc = self.shape(c).to_vec();
        if sc.len() != 2 || psi.len() != sc[0] * sc[0] {
            return Err(Error::dim("inv_wishart_logpdf", format!("factor {sc:?}")));
        }
        let (d, r) = (sc[0], sc[1]);
        let cv = self.vals(c).to_vec();
        let sigma = linalg::factor_covariance(&cv, d, r);
        let (value, grad_sigma) =
            crate::distributions::inverse_wishart_logpdf_with_grad(&sigma, d, nu, psi)?;
        // dΣ/dC for Σ = CCᵀ + I with symmetric G: dC = 2 G C.
        let mut grad_c = vec![0.0; d * r];
        for i in 0..d {
            for k in 0..r {
                grad_c[i * r + k] = 2.0 * (0..d).map(|j| grad_sigma[i * d + j] * cv[j * r + k]).sum::<f64>();
            }
        }
        let ng = self.ng(c);
        Ok(self.push(Tensor::scalar(value), Op::InvWishart { c, grad_c }, ng))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.values();
        // Accumulator for a parent; `None` when the parent needs no gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].needs_grad {
                    let len = self.nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Constant | Op::Param | Op::Detach => {}
            Op::Binary { kind, a, b, bcast } => {
                let (va, vb) = (self.vals(*a), self.vals(*b));
                let (ia, ib): (Box<dyn Fn(usize) -> usize>, Box<dyn Fn(usize) -> usize>) =
                    match bcast {
                        Broadcast::Same => (Box::new(|k| k), Box::new(|k| k)),
                        Broadcast::RightScalar => (Box::new(|k| k), Box::new(|_| 0)),
                        Broadcast::LeftScalar => (Box::new(|_| 0), Box::new(|k| k)),
                        Broadcast::Indexed(x, y) => (Box::new(move |k| x[k]), Box::new(move |k| y[k])),
                    };
                if let Some(ga) = acc!(*a) {
                    for (k, &gk) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => gk,
                            BinaryKind::Mul => gk * vb[ib(k)],
                            BinaryKind::Div => gk / vb[ib(k)],
                        };
                        ga[ia(k)] += d;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for (k, &gk) in g.iter().enumerate() {
                        let j = ib(k);
                        let d = match kind {
                            BinaryKind::Add => gk,
                            BinaryKind::Sub => -gk,
                            BinaryKind::Mul => gk * va[ia(k)],
                            BinaryKind::Div => -gk * va[ia(k)] / (vb[j] * vb[j]),
                        };
                        gb[j] += d;
                    }
                }
            }
            Op::Unary { kind, x } => {
                let vx = self.vals(*x);
                if let Some(gx) = acc!(*x) {
                    for k in 0..g.len() {
                        gx[k] += g[k]
                            * match kind {
                                UnaryKind::Neg => -1.0,
                                UnaryKind::Exp => out[k],
                                UnaryKind::Log => 1.0 / vx[k],
                                UnaryKind::Sqrt => 0.5 / out[k],
                                UnaryKind::Square => 2.0 * vx[k],
                                UnaryKind::Abs => {
                                    if vx[k] > 0.0 {
                                        1.0
                                    } else if vx[k] < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryKind::Relu => {
                                    if vx[k] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryKind::Softplus => sigmoid(vx[k]),
                            };
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.vals(*a), self.vals(*b));
                if let Some(ga) = acc!(*a) {
                    // ga += g Bᵀ
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &vb[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = acc!(*b) {
                    // gb += Aᵀ g
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = va[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::Transpose { x, rows, cols } => {
                if let Some(gx) = acc!(*x) {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            gx[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::SumAxis { x, outer, len, inner } => {
                if let Some(gx) = acc!(*x) {
                    for o in 0..*outer {
                        for l in 0..*len {
                            for i in 0..*inner {
                                gx[(o * len + l) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::MaxAxis { x, argmax } => {
                if let Some(gx) = acc!(*x) {
                    for (k, &src) in argmax.iter().enumerate() {
                        gx[src] += g[k];
                    }
                }
            }
            Op::MaxAll { x, argmax } => {
                if let Some(gx) = acc!(*x) {
                    gx[*argmax] += g[0];
                }
            }
            Op::Softmax { x } => {
                if let Some(gx) = acc!(*x) {
                    let c = node.value.cols();
                    for ((y, gr), gxr) in out.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gxr[j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { x } => {
                if let Some(gx) = acc!(*x) {
                    let c = node.value.cols();
                    for ((y, gr), gxr) in out.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let s: f64 = gr.iter().sum();
                        for j in 0..c {
                            gxr[j] += gr[j] - y[j].exp() * s;
                        }
                    }
                }
            }
            Op::LogSumExp { x } => {
                let vx = self.vals(*x);
                let c = self.value(*x).cols();
                if let Some(gx) = acc!(*x) {
                    for (r, (xr, gxr)) in vx.chunks(c).zip(gx.chunks_mut(c)).enumerate() {
                        for j in 0..c {
                            gxr[j] += g[r] * (xr[j] - out[r]).exp();
                        }
                    }
                }
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, len) in parts {
                    if let Some(gp) = acc!(p) {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for e in 0..len * inner {
                                gp[dst + e] += g[src + e];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::IndexSelect { x, idx, row } => {
                if let Some(gx) = acc!(*x) {
                    for (k, &i) in idx.iter().enumerate() {
                        for e in 0..*row {
                            gx[i * row + e] += g[k * row + e];
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = acc!(*x) {
                    for k in 0..g.len() {
                        gx[k] += g[k] * mask[k];
                    }
                }
            }
            Op::BatchNorm { x, inv_std } => {
                if let Some(gx) = acc!(*x) {
                    let c = inv_std.len();
                    let m = g.len() / c;
                    let mf = m as f64;
                    for j in 0..c {
                        let mut sg = 0.0;
                        let mut sgy = 0.0;
                        for r in 0..m {
                            sg += g[r * c + j];
                            sgy += g[r * c + j] * out[r * c + j];
                        }
                        for r in 0..m {
                            let k = r * c + j;
                            gx[k] += inv_std[j] / mf * (mf * g[k] - sg - out[k] * sgy);
                        }
                    }
                }
            }
            Op::MvnLogpdf { x, mu, c, chol, alpha, d, r } => {
                let (d, r) = (*d, *r);
                if let Some(gx) = acc!(*x) {
                    for (row, &gr) in g.iter().enumerate() {
                        for j in 0..d {
                            gx[row * d + j] -= gr * alpha[row * d + j];
                        }
                    }
                }
                if let Some(gm) = acc!(*mu) {
                    for (row, &gr) in g.iter().enumerate() {
                        for j in 0..d {
                            gm[j] += gr * alpha[row * d + j];
                        }
                    }
                }
                let cv = self.vals(*c);
                if let Some(gc) = acc!(*c) {
                    // dC = Σ_rows g (α αᵀ C) − (Σ g) Σ⁻¹ C
                    let mut at_c = vec![0.0; r];
                    for (row, &gr) in g.iter().enumerate() {
                        let a = &alpha[row * d..(row + 1) * d];
                        for k in 0..r {
                            at_c[k] = (0..d).map(|j| a[j] * cv[j * r + k]).sum();
                        }
                        for j in 0..d {
                            for k in 0..r {
                                gc[j * r + k] += gr * a[j] * at_c[k];
                            }
                        }
                    }
                    let gsum: f64 = g.iter().sum();
                    let sinv_c = linalg::chol_solve_matrix(chol, d, cv, r);
                    for (o, s) in gc.iter_mut().zip(&sinv_c) {
                        *o -= gsum * s;
                    }
                }
            }
            Op::InvWishart { c, grad_c } => {
                if let Some(gc) = acc!(*c) {
                    for (o, d) in gc.iter_mut().zip(grad_c) {
                        *o += g[0] * d;
                    }
                }
            }
        }
    }
}

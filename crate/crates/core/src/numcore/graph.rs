//! Eager tape for reverse-mode differentiation.
//!
//! Every primitive computes its output immediately and, when any input needs
//! a gradient, appends a node describing how to route the upstream gradient
//! back to its inputs. Nodes are appended in execution order, so walking the
//! tape backwards visits each op exactly once after all of its consumers.

use std::collections::HashMap;

use rand::Rng;

use super::gemm::{gemm, Layout};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// How the second operand of an element-wise op is expanded to the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `b` has one element.
    Scalar,
    /// `b` has the length of `a`'s last axis and repeats across rows.
    Row,
    /// `b` is `[rows, 1]` and repeats across the columns of 2-D `a`.
    Col,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    height: usize,
    width: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn out_h(&self) -> usize {
        self.height - self.kh + 1
    }
    fn out_w(&self) -> usize {
        self.width - self.kw + 1
    }
    fn patches(&self) -> usize {
        self.out_h() * self.out_w()
    }
    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }
}

/// Running per-channel statistics used by [`Graph::batch_standardize`] at
/// inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Lookup { table: Var, ids: Vec<usize> },
    Add { a: Var, b: Var, bcast: Bcast },
    Sub { a: Var, b: Var, bcast: Bcast },
    Mul { a: Var, b: Var, bcast: Bcast },
    Affine { a: Var, scale: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape { a: Var },
    Relu { a: Var },
    Sigmoid { a: Var },
    Abs { a: Var },
    Softmax { a: Var, axis: usize },
    Dropout { a: Var, mask: Vec<f64> },
    Conv2d { input: Var, filters: Var, bias: Option<Var>, cols: Vec<f64>, geom: ConvGeom },
    Standardize { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Sum { a: Var, axis: Option<usize> },
    Bce { logits: Var, targets: Tensor },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

enum Stored {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Stored,
    requires_grad: bool,
    op: Op,
}

/// The active tape. Borrows the parameter store read-only; gradients come
/// back from [`Graph::backward`] and are applied by an optimizer afterwards.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

fn shape_err(op: &'static str, msg: String) -> Error {
    Error::Shape(format!("{op}: {msg}"))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
    let bn: usize = b.iter().product();
    if a == b {
        return Ok(Bcast::Same);
    }
    if bn == 1 && b.len() <= 1 {
        return Ok(Bcast::Scalar);
    }
    let last = a.last().copied().unwrap_or(1);
    if bn == last && (b.len() == 1 || (b.len() == 2 && b[0] == 1)) {
        return Ok(Bcast::Row);
    }
    if a.len() == 2 && b.len() == 2 && b[0] == a[0] && b[1] == 1 {
        return Ok(Bcast::Col);
    }
    Err(shape_err(op, format!("cannot broadcast {b:?} onto {a:?}")))
}

#[inline]
fn bidx(bcast: Bcast, i: usize, cols: usize) -> usize {
    match bcast {
        Bcast::Same => i,
        Bcast::Scalar => 0,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: HashMap::new(), grad_enabled: true }
    }

    /// A graph that never records backward information.
    pub fn inference(params: &'p ParamStore) -> Self {
        Graph { grad_enabled: false, ..Graph::new(params) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Stored::Owned(t) => t,
            Stored::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Stored::Owned(value), requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Stored::Owned(t), requires_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Leaf referring to a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: Stored::Param(id),
            requires_grad: self.grad_enabled,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    /// `op(a) @ op(b)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", format!("expects matrices, got {sa:?} and {sb:?}")));
        }
        let la = if ta { Layout::transposed(sa[0], sa[1]) } else { Layout::row_major(sa[0], sa[1]) };
        let lb = if tb { Layout::transposed(sb[0], sb[1]) } else { Layout::row_major(sb[0], sb[1]) };
        if la.cols != lb.rows {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: {sa:?}{} x {sb:?}{}", if ta { "^T" } else { "" }, if tb { "^T" } else { "" }),
            ));
        }
        let mut out = vec![0.0; la.rows * lb.cols];
        gemm(
            1.0,
            self.value(a).data(),
            la,
            self.value(b).data(),
            lb,
            0.0,
            &mut out,
            Layout::row_major(la.rows, lb.cols),
        );
        let t = Tensor::new(vec![la.rows, lb.cols], out)?;
        Ok(self.push(t, &[a, b], Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `a @ b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    /// Gathers rows of a 2-D table.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(shape_err("embedding_lookup", format!("table must be 2-D, got {s:?}")));
        }
        if ids.is_empty() {
            return Err(shape_err("embedding_lookup", "no ids".into()));
        }
        let (n, d) = (s[0], s[1]);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= n {
                return Err(shape_err("embedding_lookup", format!("id {i} out of range for {n} rows")));
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(t, &[table], Op::Lookup { table, ids: ids.to_vec() }))
    }

    // ---- element-wise ---------------------------------------------------

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let bcast = bcast_kind(name, self.shape(a), self.shape(b))?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let cols = ta.shape().last().copied().unwrap_or(1);
        let out: Vec<f64> = ta.data().iter().enumerate().map(|(i, &x)| f(x, tb[bidx(bcast, i, cols)])).collect();
        Ok((Tensor::new(ta.shape().to_vec(), out)?, bcast))
    }

    /// `a + b`; `b` may be a scalar, a row vector or a `[rows, 1]` column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bcast) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, &[a, b], Op::Add { a, b, bcast }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bcast) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, &[a, b], Op::Sub { a, b, bcast }))
    }

    /// Element-wise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bcast) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, &[a, b], Op::Mul { a, b, bcast }))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let ta = self.value(a);
        let out = ta.data().iter().map(|&x| scale * x + shift).collect();
        let t = Tensor::new(ta.shape().to_vec(), out).unwrap();
        self.push(t, &[a], Op::Affine { a, scale })
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect()).unwrap()
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0));
        self.push(t, &[a], Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, &[a], Op::Sigmoid { a })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::abs);
        self.push(t, &[a], Op::Abs { a })
    }

    // ---- structural -----------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(shape_err("concat", format!("{s:?} does not match {base:?} off axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, parts, Op::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, &[a], Op::Reshape { a }))
    }

    /// Sums over one axis, or over everything when `axis` is `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let ta = self.value(a);
        let t = match axis {
            None => Tensor::scalar(ta.data().iter().sum()),
            Some(ax) => {
                if ax >= ta.shape().len() {
                    return Err(shape_err("sum", format!("axis {ax} out of range for {:?}", ta.shape())));
                }
                let (outer, len, inner) = split_axis(ta.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            out[o * inner + i] += ta.data()[(o * len + k) * inner + i];
                        }
                    }
                }
                let mut shape = ta.shape().to_vec();
                shape.remove(ax);
                Tensor::new(shape, out)?
            }
        };
        Ok(self.push(t, &[a], Op::Sum { a, axis }))
    }

    /// Mean over all elements.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a, None)?;
        Ok(self.affine(s, 1.0 / n, 0.0))
    }

    // ---- normalisation --------------------------------------------------

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, None)
    }

    /// Row-wise softmax over a 2-D tensor where, for each row, the column in
    /// `exclude[row]` (if any) is removed from the normalisation and receives
    /// probability exactly zero.
    pub fn softmax_excluding(&mut self, a: Var, exclude: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || exclude.len() != s[0] {
            return Err(shape_err("softmax", format!("exclusion list of {} for {s:?}", exclude.len())));
        }
        if let Some(bad) = exclude.iter().flatten().find(|&&k| k >= s[1]) {
            return Err(Error::op("softmax", format!("masked index {bad} out of range for {} classes", s[1])));
        }
        self.softmax_impl(a, 1, Some(exclude))
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, exclude: Option<&[Option<usize>]>) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.shape().len() {
            return Err(shape_err("softmax", format!("axis {axis} out of range for {:?}", ta.shape())));
        }
        let (outer, len, inner) = split_axis(ta.shape(), axis);
        let live = len - usize::from(exclude.is_some_and(|e| e.iter().any(Option::is_some)));
        if live == 0 || (exclude.is_some() && len < 2) {
            return Err(Error::op("softmax", "empty axis"));
        }
        let x = ta.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let skip = exclude.and_then(|e| e[o]);
                let idx = |k: usize| (o * len + k) * inner + i;
                let mut m = f64::NEG_INFINITY;
                for k in (0..len).filter(|&k| Some(k) != skip) {
                    m = m.max(x[idx(k)]);
                }
                let mut z = 0.0;
                for k in (0..len).filter(|&k| Some(k) != skip) {
                    let e = (x[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in (0..len).filter(|&k| Some(k) != skip) {
                    out[idx(k)] /= z;
                }
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, &[a], Op::Softmax { a, axis }))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::op("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let ta = self.value(a);
        let mask: Vec<f64> = (0..ta.numel()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let out = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, &[a], Op::Dropout { a, mask }))
    }

    /// 2-D convolution, stride 1, no padding.
    ///
    /// `input` is `[batch, in_ch, h, w]`, `filters` is `[out_ch, in_ch, kh, kw]`,
    /// `bias` (optional) is `[out_ch]`.
    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Option<Var>) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sf = self.shape(filters).to_vec();
        if si.len() != 4 || sf.len() != 4 || si[1] != sf[1] || sf[2] > si[2] || sf[3] > si[3] {
            return Err(shape_err("conv2d", format!("input {si:?} incompatible with filters {sf:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sf[0]] {
                return Err(shape_err("conv2d", format!("bias {:?} for {} filters", self.shape(b), sf[0])));
            }
        }
        let g = ConvGeom { batch: si[0], in_ch: si[1], height: si[2], width: si[3], out_ch: sf[0], kh: sf[2], kw: sf[3] };
        let (p, q) = (g.patches(), g.patch_len());
        let x = self.value(input).data();
        let mut cols = vec![0.0; g.batch * p * q];
        for b in 0..g.batch {
            for oy in 0..g.out_h() {
                for ox in 0..g.out_w() {
                    let row = &mut cols[(b * p + oy * g.out_w() + ox) * q..][..q];
                    let mut j = 0;
                    for c in 0..g.in_ch {
                        for ky in 0..g.kh {
                            let src = ((b * g.in_ch + c) * g.height + oy + ky) * g.width + ox;
                            row[j..j + g.kw].copy_from_slice(&x[src..src + g.kw]);
                            j += g.kw;
                        }
                    }
                }
            }
        }
        let f = self.value(filters).data();
        let mut out = vec![0.0; g.batch * g.out_ch * p];
        for b in 0..g.batch {
            gemm(
                1.0,
                f,
                Layout::row_major(g.out_ch, q),
                &cols[b * p * q..(b + 1) * p * q],
                Layout::transposed(p, q),
                0.0,
                &mut out[b * g.out_ch * p..(b + 1) * g.out_ch * p],
                Layout::row_major(g.out_ch, p),
            );
        }
        if let Some(bv) = bias {
            let bias = self.value(bv).data();
            for (k, chunk) in out.chunks_mut(p).enumerate() {
                let c = bias[k % g.out_ch];
                chunk.iter_mut().for_each(|v| *v += c);
            }
        }
        let t = Tensor::new(vec![g.batch, g.out_ch, g.out_h(), g.out_w()], out)?;
        let mut inputs = vec![input, filters];
        inputs.extend(bias);
        Ok(self.push(t, &inputs, Op::Conv2d { input, filters, bias, cols, geom: g }))
    }

    /// Per-channel standardisation with a learnable scale and shift.
    ///
    /// `x` is `[n, channels, ...]`. In training mode the batch statistics are
    /// used and folded into `stats`; otherwise `stats` is used as is.
    pub fn batch_standardize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        train: bool,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(shape_err("batch_standardize", format!("needs [n, channels, ...], got {s:?}")));
        }
        let (n, ch) = (s[0], s[1]);
        let spatial: usize = s[2..].iter().product();
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] || stats.mean.len() != ch {
            return Err(shape_err("batch_standardize", format!("scale/shift must be [{ch}]")));
        }
        let xs = self.value(x).data();
        let m = (n * spatial) as f64;
        let mut inv_std = vec![0.0; ch];
        let mut mean = vec![0.0; ch];
        if train {
            let mut var = vec![0.0; ch];
            for c in 0..ch {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += xs[(b * ch + c) * spatial..][..spatial].iter().sum::<f64>();
                }
                mean[c] = acc / m;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += xs[(b * ch + c) * spatial..][..spatial].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                }
                var[c] = sq / m;
                inv_std[c] = 1.0 / (var[c] + RunningStats::EPS).sqrt();
                let unbiased = if m > 1.0 { var[c] * m / (m - 1.0) } else { var[c] };
                let mom = RunningStats::MOMENTUM;
                stats.mean[c] = (1.0 - mom) * stats.mean[c] + mom * mean[c];
                stats.var[c] = (1.0 - mom) * stats.var[c] + mom * unbiased;
            }
        } else {
            mean.copy_from_slice(&stats.mean);
            for c in 0..ch {
                inv_std[c] = 1.0 / (stats.var[c] + RunningStats::EPS).sqrt();
            }
        }
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (i, (xv, (h, o))) in xs.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let c = (i / spatial) % ch;
            *h = (xv - mean[c]) * inv_std[c];
            *o = gs[c] * *h + bs[c];
        }
        let t = Tensor::new(s, out)?;
        Ok(self.push(t, &[x, gamma, beta], Op::Standardize { x, gamma, beta, xhat, inv_std, train }))
    }

    // ---- losses ---------------------------------------------------------

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// computed directly from the logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape() != targets.shape() {
            return Err(shape_err("bce_with_logits", format!("logits {:?} vs targets {:?}", tl.shape(), targets.shape())));
        }
        let n = tl.numel() as f64;
        let total: f64 = tl
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&s, &t)| s.max(0.0) - s * t + (-s.abs()).exp().ln_1p())
            .sum();
        let t = Tensor::scalar(total / n);
        Ok(self.push(t, &[logits], Op::Bce { logits, targets }))
    }

    /// Mean negative log-likelihood of the target class under a row-wise
    /// softmax of `logits` (`[batch, classes]`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let s = tl.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(shape_err("cross_entropy", format!("logits {s:?} vs {} targets", targets.len())));
        }
        let (b, k) = (s[0], s[1]);
        if k == 0 {
            return Err(Error::op("cross_entropy", "empty axis"));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::op("cross_entropy", format!("target {bad} out of range for {k} classes")));
        }
        let mut probs = vec![0.0; b * k];
        let mut total = 0.0;
        for (r, &tgt) in targets.iter().enumerate() {
            let row = tl.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[tgt];
            for (p, v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let t = Tensor::scalar(total / b as f64);
        Ok(self.push(t, &[logits], Op::CrossEntropy { logits, targets: targets.to_vec(), probs }))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar. Consumes the graph and returns the
    /// gradient of every parameter that took part in it.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::op("backward", format!("loss must be a scalar, got shape {:?}", self.shape(loss))));
        }
        let mut out = Gradients::new(self.params.len());
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                out.accumulate(id, self.params.get(id).shape(), g);
                continue;
            }
            self.backprop(i, &node.op, &g, &mut grads);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn backprop(&self, i: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = match &self.nodes[i].value {
            Stored::Owned(t) => t,
            Stored::Param(id) => self.params.get(*id),
        };
        match op {
            Op::Leaf => {}
            Op::Param(_) => unreachable!("parameter gradients are moved out in backward"),
            Op::MatMul { a, b, ta, tb } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let la = if *ta { Layout::transposed(sa[0], sa[1]) } else { Layout::row_major(sa[0], sa[1]) };
                let lb = if *tb { Layout::transposed(sb[0], sb[1]) } else { Layout::row_major(sb[0], sb[1]) };
                let lg = Layout::row_major(la.rows, lb.cols);
                let tr = |l: Layout| Layout { rows: l.cols, cols: l.rows, rs: l.cs, cs: l.rs };
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    // d op(a) = g @ op(b)^T, written through op(a)'s view of a's buffer.
                    gemm(1.0, g, lg, bv, tr(lb), 1.0, ga, la);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(1.0, av, tr(la), g, lg, 1.0, gb, lb);
                }
            }
            Op::Lookup { table, ids } => {
                let d = self.shape(*table)[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, b) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *a += b;
                        }
                    }
                }
            }
            Op::Add { a, b, bcast } | Op::Sub { a, b, bcast } => {
                let sign = if matches!(op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                let cols = y.shape().last().copied().unwrap_or(1);
                if let Some(gb) = self.slot(grads, *b) {
                    for (k, gv) in g.iter().enumerate() {
                        gb[bidx(*bcast, k, cols)] += sign * gv;
                    }
                }
            }
            Op::Mul { a, b, bcast } => {
                let cols = y.shape().last().copied().unwrap_or(1);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for (k, gv) in g.iter().enumerate() {
                        ga[k] += gv * bv[bidx(*bcast, k, cols)];
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (k, gv) in g.iter().enumerate() {
                        gb[bidx(*bcast, k, cols)] += gv * av[k];
                    }
                }
            }
            Op::Affine { a, scale } => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += scale * y);
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(y.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if let Some(gp) = self.slot(grads, *p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..][..len * inner];
                            gp[o * len * inner..][..len * inner].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Relu { a } => {
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        if av[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                }
            }
            Op::Sigmoid { a } => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (k, s) in y.data().iter().enumerate() {
                        ga[k] += g[k] * s * (1.0 - s);
                    }
                }
            }
            Op::Abs { a } => {
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * if av[k] > 0.0 { 1.0 } else if av[k] < 0.0 { -1.0 } else { 0.0 };
                    }
                }
            }
            Op::Softmax { a, axis } => {
                let (outer, len, inner) = split_axis(y.shape(), *axis);
                let yv = y.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let dot: f64 = (0..len).map(|k| yv[idx(k)] * g[idx(k)]).sum();
                            for k in 0..len {
                                ga[idx(k)] += yv[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if let Some(ga) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * mask[k];
                    }
                }
            }
            Op::Conv2d { input, filters, bias, cols, geom } => self.conv2d_backward(*input, *filters, *bias, cols, *geom, g, grads),
            Op::Standardize { x, gamma, beta, xhat, inv_std, train } => {
                let s = y.shape();
                let (n, ch) = (s[0], s[1]);
                let spatial: usize = s[2..].iter().product();
                let m = (n * spatial) as f64;
                let gs = self.value(*gamma).data();
                let mut sum_dy = vec![0.0; ch];
                let mut sum_dy_xhat = vec![0.0; ch];
                for k in 0..g.len() {
                    let c = (k / spatial) % ch;
                    sum_dy[c] += g[k];
                    sum_dy_xhat[c] += g[k] * xhat[k];
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    gg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    gb.iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b);
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for k in 0..g.len() {
                        let c = (k / spatial) % ch;
                        gx[k] += if *train {
                            // dxhat = g * gamma; sums over the channel scale by gamma too.
                            gs[c] * inv_std[c] / m * (m * g[k] - sum_dy[c] - xhat[k] * sum_dy_xhat[c])
                        } else {
                            gs[c] * inv_std[c] * g[k]
                        };
                    }
                }
            }
            Op::Sum { a, axis } => {
                let sa = self.shape(*a).to_vec();
                if let Some(ga) = self.slot(grads, *a) {
                    match axis {
                        None => ga.iter_mut().for_each(|x| *x += g[0]),
                        Some(ax) => {
                            let (outer, len, inner) = split_axis(&sa, *ax);
                            for o in 0..outer {
                                for k in 0..len {
                                    for i in 0..inner {
                                        ga[(o * len + k) * inner + i] += g[o * inner + i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Bce { logits, targets } => {
                let lv = self.value(*logits).data();
                let n = lv.len() as f64;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (k, (s, t)) in lv.iter().zip(targets.data()).enumerate() {
                        gl[k] += g[0] * (sigmoid(*s) - t) / n;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let k = self.shape(*logits)[1];
                let b = targets.len() as f64;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (j, p) in probs.iter().enumerate() {
                        gl[j] += g[0] * p / b;
                    }
                    for (r, &t) in targets.iter().enumerate() {
                        gl[r * k + t] -= g[0] / b;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        input: Var,
        filters: Var,
        bias: Option<Var>,
        cols: &[f64],
        geom: ConvGeom,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (p, q) = (geom.patches(), geom.patch_len());
        let oc = geom.out_ch;
        if let Some(bv) = bias {
            if let Some(gb) = self.slot(grads, bv) {
                for (k, chunk) in g.chunks(p).enumerate() {
                    gb[k % oc] += chunk.iter().sum::<f64>();
                }
            }
        }
        if let Some(gf) = self.slot(grads, filters) {
            for b in 0..geom.batch {
                gemm(
                    1.0,
                    &g[b * oc * p..(b + 1) * oc * p],
                    Layout::row_major(oc, p),
                    &cols[b * p * q..(b + 1) * p * q],
                    Layout::row_major(p, q),
                    1.0,
                    gf,
                    Layout::row_major(oc, q),
                );
            }
        }
        if self.nodes[input.0].requires_grad {
            let f = self.value(filters).data();
            let mut dcols = vec![0.0; p * q];
            let gi = self.slot(grads, input).unwrap();
            for b in 0..geom.batch {
                gemm(
                    1.0,
                    &g[b * oc * p..(b + 1) * oc * p],
                    Layout::transposed(oc, p),
                    f,
                    Layout::row_major(oc, q),
                    0.0,
                    &mut dcols,
                    Layout::row_major(p, q),
                );
                for oy in 0..geom.out_h() {
                    for ox in 0..geom.out_w() {
                        let row = &dcols[(oy * geom.out_w() + ox) * q..][..q];
                        let mut j = 0;
                        for c in 0..geom.in_ch {
                            for ky in 0..geom.kh {
                                let dst = ((b * geom.in_ch + c) * geom.height + oy + ky) * geom.width + ox;
                                for kx in 0..geom.kw {
                                    gi[dst + kx] += row[j + kx];
                                }
                                j += geom.kw;
                            }
                        }
                    }
                }
            }
        }
    }
}

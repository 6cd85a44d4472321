//! Define-by-run reverse-mode autodiff.
//!
//! A [`Graph`] is a tape: every op appends a node holding its forward value
//! and whatever it needs for the backward pass. [`Graph::backward`] replays
//! the tape in reverse. Parameters are borrowed from a [`ParamStore`] rather
//! than copied, so one store can feed many graphs at once.

use std::collections::HashMap;

use super::dense::split_axis;
use super::kernels::{self, axpy, cosine, dot, norm};
use super::{ParamGrads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    MeanPool { x: Var, rows: Vec<usize> },
    SelectRows { x: Var, rows: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    CosineSim { u: Var, v: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Sum(Var),
    Detach,
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self
                .store
                .expect("param node without store")
                .value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        assert!(self.store.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sb.len() == 1 && !sa.is_empty() && sa[sa.len() - 1] == sb[0] {
            Ok(true)
        } else {
            Err(Error::shape(op, format!("{sa:?} and {sb:?}")))
        }
    }

    /// Elementwise sum; `b` may also be a vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let row = self.broadcast_kind("add", a, b)?;
        let tb = self.value(b).data();
        let c = tb.len();
        let mut out = self.value(a).clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += if row { tb[i % c] } else { tb[i] };
        }
        let rg = self.rg(a) || self.rg(b);
        let op = if row { Op::AddRow(a, b) } else { Op::Add(a, b) };
        Ok(self.push(out, op, rg))
    }

    /// Elementwise product; `b` may also be a vector broadcast over the rows of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let row = self.broadcast_kind("mul", a, b)?;
        let tb = self.value(b).data();
        let c = tb.len();
        let mut out = self.value(a).clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= if row { tb[i % c] } else { tb[i] };
        }
        let rg = self.rg(a) || self.rg(b);
        let op = if row { Op::MulRow(a, b) } else { Op::Mul(a, b) };
        Ok(self.push(out, op, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = kernels::gelu(*v));
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape("softmax", format!("axis {axis} of {:?}", t.shape())));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = t.clone();
        let d = out.data_mut();
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let m = (0..len).map(|i| d[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = (d[idx(i)] - m).exp();
                    s += *b;
                }
                for (i, b) in buf.iter().enumerate() {
                    d[idx(i)] = b / s;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes to zero mean and unit variance along `axis` (no affine).
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape("layer_norm", format!("axis {axis} of {:?}", t.shape())));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = t.clone();
        let d = out.data_mut();
        let mut inv_std = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let mean = (0..len).map(|i| d[idx(i)]).sum::<f64>() / len as f64;
                let var = (0..len).map(|i| (d[idx(i)] - mean).powi(2)).sum::<f64>() / len as f64;
                let is = 1.0 / (var + eps).sqrt();
                for i in 0..len {
                    d[idx(i)] = (d[idx(i)] - mean) * is;
                }
                inv_std.push(is);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::LayerNorm { x, axis, inv_std }, rg))
    }

    /// Gathers rows of a `[rows, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::shape("embedding", format!("table shape {:?}", t.shape())));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::IdOutOfRange {
                    what: "embedding",
                    id,
                    limit: rows,
                });
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.rg(table);
        let out = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    fn check_rows(&self, op: &'static str, x: Var, rows: &[usize]) -> Result<(usize, usize)> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape(op, format!("expects a matrix, got {:?}", t.shape())));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::IdOutOfRange {
                what: "row",
                id: r,
                limit: n,
            });
        }
        Ok((n, d))
    }

    /// Mean of the selected rows of a `[n, d]` matrix, as a `[d]` vector.
    pub fn mean_pool(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptySegment);
        }
        let (_, d) = self.check_rows("mean_pool", x, rows)?;
        let t = self.value(x);
        let mut out = vec![0.0; d];
        for &r in rows {
            axpy(1.0, t.row(r), &mut out);
        }
        let inv = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::vector(out),
            Op::MeanPool {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (_, d) = self.check_rows("select_rows", x, rows)?;
        let t = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(t.row(r));
        }
        let rg = self.rg(x);
        let out = Tensor::new(vec![rows.len(), d], out)?;
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (r, c) = match t.rank() {
            1 => (1, t.shape()[0]),
            2 => (t.shape()[0], t.shape()[1]),
            _ => return Err(Error::shape("cross_entropy", format!("{:?}", t.shape()))),
        };
        if targets.len() != r {
            return Err(Error::shape(
                "cross_entropy",
                format!("{r} rows but {} targets", targets.len()),
            ));
        }
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            if target >= c {
                return Err(Error::IdOutOfRange {
                    what: "class",
                    id: target,
                    limit: c,
                });
            }
            let row = &t.data()[i * c..(i + 1) * c];
            let lse = kernels::log_sum_exp(row);
            loss += lse - row[target];
            for (p, &l) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (l - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood over rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.cross_entropy_sum(logits, targets)?;
        Ok(self.scale(s, 1.0 / targets.len().max(1) as f64))
    }

    pub fn cosine_sim(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.len() != tv.len() {
            return Err(Error::shape(
                "cosine_sim",
                format!("{:?} and {:?}", tu.shape(), tv.shape()),
            ));
        }
        let s = cosine(tu.data(), tv.data());
        let rg = self.rg(u) || self.rg(v);
        Ok(self.push(Tensor::scalar(s), Op::CosineSim { u, v }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} and {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || start > end || end > t.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{end} on axis {axis} of {:?}", t.shape()),
            ));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&t.data()[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = end - start;
        let rg = self.rg(x);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", t.shape())));
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.data()[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Value-identical copy that stops gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::Detach, false)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let t = self.value(loss);
        if !t.is_scalar() {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        self.backward_seeded(&[(loss, 1.0)])
    }

    /// Reverse pass from a weighted sum of scalar nodes.
    pub fn backward_seeded(&self, seeds: &[(Var, f64)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for &(v, w) in seeds {
            let t = self.value(v);
            if !t.is_scalar() {
                return Err(Error::NonScalarLoss(t.shape().to_vec()));
            }
            if self.rg(v) {
                acc(&mut grads, v, 1)[0] += w;
            }
        }
        let last = seeds.iter().map(|(v, _)| v.0).max().unwrap_or(0);
        for i in (0..=last.min(self.nodes.len().saturating_sub(1))).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[i] = Some(g);
            }
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect();
        Ok(Gradients {
            by_node: grads,
            params,
        })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf | Op::Param | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let ga = acc(grads, *a, m * k);
                    kernels::matmul_a_bt_acc(g, tb.data(), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, k * n);
                    kernels::matmul_at_b_acc(ta.data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if self.rg(*x) {
                        axpy(1.0, g, acc(grads, *x, g.len()));
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.rg(*a) {
                    axpy(1.0, g, acc(grads, *a, g.len()));
                }
                if self.rg(*b) {
                    let c = self.value(*b).len();
                    let gb = acc(grads, *b, c);
                    for chunk in g.chunks(c) {
                        axpy(1.0, chunk, gb);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let ga = acc(grads, *a, g.len());
                    for ((o, gi), bv) in ga.iter_mut().zip(g).zip(tb) {
                        *o += gi * bv;
                    }
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, g.len());
                    for ((o, gi), av) in gb.iter_mut().zip(g).zip(ta) {
                        *o += gi * av;
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let c = tb.len();
                if self.rg(*a) {
                    let ga = acc(grads, *a, g.len());
                    for (idx, (o, gi)) in ga.iter_mut().zip(g).enumerate() {
                        *o += gi * tb[idx % c];
                    }
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, c);
                    for (idx, (gi, av)) in g.iter().zip(ta).enumerate() {
                        gb[idx % c] += gi * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                axpy(*c, g, acc(grads, *a, g.len()));
            }
            Op::Relu(a) => {
                let ta = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for ((o, gi), x) in ga.iter_mut().zip(g).zip(ta) {
                    if *x > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Gelu(a) => {
                let ta = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for ((o, gi), x) in ga.iter_mut().zip(g).zip(ta) {
                    *o += gi * kernels::gelu_grad(*x);
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let gx = acc(grads, *x, g.len());
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + j;
                        let s: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                        for i in 0..len {
                            gx[idx(i)] += y[idx(i)] * (g[idx(i)] - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, axis, inv_std } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let gx = acc(grads, *x, g.len());
                let nf = len as f64;
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + j;
                        let mg: f64 = (0..len).map(|i| g[idx(i)]).sum::<f64>() / nf;
                        let mgy: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum::<f64>() / nf;
                        let is = inv_std[o * inner + j];
                        for i in 0..len {
                            gx[idx(i)] += is * (g[idx(i)] - mg - y[idx(i)] * mgy);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let d = t.shape()[1];
                let gt = acc(grads, *table, t.len());
                for (r, &id) in ids.iter().enumerate() {
                    axpy(1.0, &g[r * d..(r + 1) * d], &mut gt[id * d..(id + 1) * d]);
                }
            }
            Op::MeanPool { x, rows } => {
                let t = self.value(*x);
                let d = t.cols();
                let inv = 1.0 / rows.len() as f64;
                let gx = acc(grads, *x, t.len());
                for &r in rows {
                    axpy(inv, g, &mut gx[r * d..(r + 1) * d]);
                }
            }
            Op::SelectRows { x, rows } => {
                let t = self.value(*x);
                let d = t.cols();
                let gx = acc(grads, *x, t.len());
                for (k, &r) in rows.iter().enumerate() {
                    axpy(1.0, &g[k * d..(k + 1) * d], &mut gx[r * d..(r + 1) * d]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = probs.len() / targets.len().max(1);
                let gl = acc(grads, *logits, probs.len());
                axpy(g[0], probs, gl);
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * c + t] -= g[0];
                }
            }
            Op::CosineSim { u, v } => {
                let (tu, tv) = (self.value(*u).data(), self.value(*v).data());
                let (nu, nv) = (norm(tu), norm(tv));
                if nu > 0.0 && nv > 0.0 {
                    let s = dot(tu, tv) / (nu * nv);
                    if self.rg(*u) {
                        let gu = acc(grads, *u, tu.len());
                        for ((o, a), b) in gu.iter_mut().zip(tu).zip(tv) {
                            *o += g[0] * (b / (nu * nv) - s * a / (nu * nu));
                        }
                    }
                    if self.rg(*v) {
                        let gv = acc(grads, *v, tv.len());
                        for ((o, a), b) in gv.iter_mut().zip(tu).zip(tv) {
                            *o += g[0] * (a / (nu * nv) - s * b / (nv * nv));
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.value(x).shape()[*axis];
                    if self.rg(x) {
                        let gx = acc(grads, x, outer * len * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            axpy(1.0, src, &mut gx[o * len * inner..(o + 1) * len * inner]);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let tx = self.value(*x);
                let (outer, len, inner) = split_axis(tx.shape(), *axis);
                let width = out.shape()[*axis];
                let gx = acc(grads, *x, tx.len());
                for o in 0..outer {
                    let dst = &mut gx[(o * len + start) * inner..(o * len + start + width) * inner];
                    axpy(1.0, &g[o * width * inner..(o + 1) * width * inner], dst);
                }
            }
            Op::Transpose(x) => {
                let (n, m) = (out.shape()[0], out.shape()[1]);
                let gx = acc(grads, *x, n * m);
                for j in 0..n {
                    for i in 0..m {
                        gx[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(grads, *x, n).iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Result of a backward pass: gradients of leaves and parameters.
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a leaf; `None` when no gradient reached it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn into_param_grads(mut self) -> ParamGrads {
        let mut entries: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.by_node[v.0].take().map(|g| (id, g)))
            .collect();
        entries.sort_by_key(|(id, _)| *id);
        ParamGrads { entries }
    }
}

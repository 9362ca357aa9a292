//! Define-by-run reverse-mode differentiation.
//!
//! Every forward call appends a node holding its value and whatever it needs
//! for the backward sweep. Nodes only ever reference earlier nodes, so the
//! node vector is already in topological order and [`Tape::backward`] is a
//! single reverse scan.

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics source for [`Tape::batch_norm`].
#[derive(Clone, Debug)]
pub enum BatchNormStats<'a> {
    /// Normalize with the batch mean and biased variance.
    Batch,
    /// Normalize with fixed running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Concat { parts: Vec<Var>, widths: Vec<usize> },
    StackRows { parts: Vec<Var>, sizes: Vec<usize> },
    Slice { a: Var, start: usize, end: usize },
    Tanh { a: Var },
    Sigmoid { a: Var },
    Relu { a: Var },
    Softplus { a: Var },
    Softmax { a: Var, outer: usize, axis_len: usize, inner: usize },
    Sum { a: Var },
    Mean { a: Var },
    SquaredError { a: Var, b: Var },
    Bce { p: Var, target: Vec<f64> },
    BceLogits { z: Var, target: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    Gather { a: Var, index: Vec<Option<usize>> },
    WeightedGather { w: Var, src: Var, index: Vec<Option<usize>> },
    Reshape { a: Var },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Number of nodes that received a gradient.
    pub fn count(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `b` broadcasts against `a` when its shape is a trailing suffix of `a`'s.
fn check_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    let ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
    if !ok {
        return Err(Error::shape(op, format!("{sa:?} cannot broadcast with {sb:?}")));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sums `g` into a buffer of length `n` cycling over trailing positions.
fn reduce_broadcast(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
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

    /// Records an input. `requires_grad` marks it as something we want
    /// gradients for; constants never receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(op, value, rg)
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::MatMul { a, b, m, k, n }, value, rg))
    }

    /// Batched matmul: `[B, m, k] · [B, k, n] → [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("bmm", format!("{sa:?} · {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Bmm { a, b, batch, m, k, n }, value, rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        check_broadcast(name, self.value(a), self.value(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let nb = vb.len().max(1);
        let data = va.data().iter().enumerate().map(|(i, &x)| f(x, vb.data()[i % nb])).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale { a, c }, |x| x * c)
    }

    /// Concatenates along the last axis. All parts share leading dimensions.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != *lead {
                return Err(Error::shape("concat", format!("leading dims {lead:?} vs {s:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(Op::Concat { parts: parts.to_vec(), widths }, value, rg))
    }

    /// Stacks 2-D parts of equal width on top of each other.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("stack_rows", "no inputs"))?;
        let w = self.value(*first).last_dim();
        let mut sizes = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != w {
                return Err(Error::shape("stack_rows", format!("part {s:?} with width {w}")));
            }
            sizes.push(self.value(p).len());
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / w.max(1);
        let value = Tensor::new(vec![rows, w], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(Op::StackRows { parts: parts.to_vec(), sizes }, value, rg))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let w = *s.last().ok_or_else(|| Error::shape("slice", "scalar input"))?;
        if start >= end || end > w {
            return Err(Error::shape("slice", format!("range {start}..{end} of width {w}")));
        }
        let rows = self.value(a).outer_len();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&self.value(a).data()[r * w + start..r * w + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Slice { a, start, end }, value, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh { a }, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid { a }, sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu { a }, |x| x.max(0.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus { a }, softplus)
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let axis_len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * axis_len + j) * inner + i;
                let max = (0..axis_len).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..axis_len {
                    let e = (x[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..axis_len {
                    out[idx(j)] /= z;
                }
            }
        }
        let value = Tensor::new(s, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Softmax { a, outer, axis_len, inner }, value, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(Op::Sum { a }, v, rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty input"));
        }
        let v = Tensor::scalar(self.value(a).sum() / n as f64);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Mean { a }, v, rg))
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("squared_error", self.value(a), self.value(b))?;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::SquaredError { a, b }, Tensor::scalar(s), rg))
    }

    /// Mean binary cross-entropy of probabilities `p` against `target`.
    pub fn bce(&mut self, p: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != target.len() || target.is_empty() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("{} probabilities vs {} targets", pv.len(), target.len()),
            ));
        }
        if let Some(bad) = pv.data().iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::Invalid(format!("probability {bad} outside (0, 1)")));
        }
        let n = target.len() as f64;
        let loss =
            -pv.data().iter().zip(target).map(|(&x, &t)| t * x.ln() + (1.0 - t) * (1.0 - x).ln()).sum::<f64>() / n;
        let rg = self.any_grad(&[p]);
        Ok(self.push(Op::Bce { p, target: target.to_vec() }, Tensor::scalar(loss), rg))
    }

    /// Mean binary cross-entropy of `sigmoid(z)` against `target`, computed
    /// from logits without saturating.
    pub fn bce_with_logits(&mut self, z: Var, target: &[f64]) -> Result<Var> {
        let zv = self.value(z);
        if zv.len() != target.len() || target.is_empty() {
            return Err(Error::shape("bce_with_logits", format!("{} logits vs {} targets", zv.len(), target.len())));
        }
        let n = target.len() as f64;
        let loss = zv.data().iter().zip(target).map(|(&x, &t)| softplus(x) - t * x).sum::<f64>() / n;
        let rg = self.any_grad(&[z]);
        Ok(self.push(Op::BceLogits { z, target: target.to_vec() }, Tensor::scalar(loss), rg))
    }

    /// Batch normalization of `x: [N, F]` with per-feature `gamma`, `beta`.
    ///
    /// Returns the output and, in batch mode, the batch mean and variance so
    /// the caller can fold them into running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BatchNormStats<'_>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::shape("batch_norm", format!("expected [N, F], got {s:?}")));
        }
        let (n, f) = (s[0], s[1]);
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(Error::shape(
                "batch_norm",
                format!("gamma {:?} / beta {:?} for {f} features", self.shape(gamma), self.shape(beta)),
            ));
        }
        let xv = self.value(x).data();
        let (mean, var, batch) = match stats {
            BatchNormStats::Batch => {
                let mut mean = vec![0.0; f];
                for r in 0..n {
                    for j in 0..f {
                        mean[j] += xv[r * f + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for r in 0..n {
                    for j in 0..f {
                        let d = xv[r * f + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var, true)
            }
            BatchNormStats::Running { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(Error::shape("batch_norm", "running stats width"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            for j in 0..f {
                let h = (xv[r * f + j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(s, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push(Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch }, value, rg);
        Ok((v, batch.then_some((mean, var))))
    }

    /// Row gather over the `[rows, last_dim]` view of `a`. `None` yields a
    /// zero row.
    pub fn gather_rows(&mut self, a: Var, index: &[Option<usize>]) -> Result<Var> {
        let av = self.value(a);
        let w = av.last_dim();
        let rows = av.outer_len();
        let mut data = vec![0.0; index.len() * w];
        for (dst, src) in index.iter().enumerate() {
            if let Some(s) = *src {
                if s >= rows {
                    return Err(Error::shape("gather_rows", format!("row {s} of {rows}")));
                }
                data[dst * w..(dst + 1) * w].copy_from_slice(av.row(s));
            }
        }
        let value = Tensor::new(vec![index.len(), w], data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Gather { a, index: index.to_vec() }, value, rg))
    }

    /// `out[r] = Σ_c w[r, c] · src[index[r·C + c]]` for `w: [B, C]` and
    /// `src: [M, F]`, giving `[B, F]`. Cells with no index contribute nothing.
    /// Equivalent to gathering `src` into `[B, C, F]` and contracting with
    /// `w`, without materializing the gathered tensor.
    pub fn gather_weighted_sum(&mut self, w: Var, src: Var, index: &[Option<usize>]) -> Result<Var> {
        let (ws, ss) = (self.shape(w), self.shape(src));
        if ws.len() != 2 || ss.len() != 2 || index.len() != ws[0] * ws[1] {
            return Err(Error::shape(
                "gather_weighted_sum",
                format!("weights {ws:?}, source {ss:?}, {} indices", index.len()),
            ));
        }
        let (b, c, m, f) = (ws[0], ws[1], ss[0], ss[1]);
        let (wv, sv) = (self.value(w).data(), self.value(src).data());
        let mut out = vec![0.0; b * f];
        for (k, idx) in index.iter().enumerate() {
            if let Some(s) = *idx {
                if s >= m {
                    return Err(Error::shape("gather_weighted_sum", format!("row {s} of {m}")));
                }
                let a = wv[k];
                let r = k / c;
                for (o, &x) in out[r * f..(r + 1) * f].iter_mut().zip(&sv[s * f..(s + 1) * f]) {
                    *o += a * x;
                }
            }
        }
        let value = Tensor::new(vec![b, f], out)?;
        let rg = self.any_grad(&[w, src]);
        Ok(self.push(Op::WeightedGather { w, src, index: index.to_vec() }, value, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Reshape { a }, value, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Constants never report gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape follows its value")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |ga| gemm_nt_acc(gd, bv, ga, m, k, n));
                self.accumulate_with(grads, *b, |gb| gemm_tn_acc(av, gd, gb, m, k, n));
            }
            Op::Bmm { a, b, batch, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |ga| {
                    for i in 0..*batch {
                        gemm_nt_acc(
                            &gd[i * m * n..(i + 1) * m * n],
                            &bv[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                });
                self.accumulate_with(grads, *b, |gb| {
                    for i in 0..*batch {
                        gemm_tn_acc(
                            &av[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].requires_grad {
                    let nb = self.value(*b).len().max(1);
                    let mut red = reduce_broadcast(gd, nb);
                    if sign < 0.0 {
                        red.iter_mut().for_each(|x| *x = -*x);
                    }
                    self.accumulate(grads, *b, self.like(*b, red));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let nb = bv.len().max(1);
                if self.nodes[a.0].requires_grad {
                    let ga = gd.iter().enumerate().map(|(i, x)| x * bv[i % nb]).collect();
                    self.accumulate(grads, *a, self.like(*a, ga));
                }
                if self.nodes[b.0].requires_grad {
                    let prod: Vec<f64> = gd.iter().zip(av).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, self.like(*b, reduce_broadcast(&prod, nb)));
                }
            }
            Op::Scale { a, c } => {
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if self.nodes[p.0].requires_grad {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, self.like(p, gp));
                    }
                    offset += w;
                }
            }
            Op::StackRows { parts, sizes } => {
                let mut offset = 0;
                for (&p, &n) in parts.iter().zip(sizes) {
                    if self.nodes[p.0].requires_grad {
                        self.accumulate(grads, p, self.like(p, gd[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::Slice { a, start, end } => {
                let w = self.value(*a).last_dim();
                let sw = end - start;
                self.accumulate_with(grads, *a, |ga| {
                    for (r, chunk) in gd.chunks(sw).enumerate() {
                        for (j, v) in chunk.iter().enumerate() {
                            ga[r * w + start + j] += v;
                        }
                    }
                });
            }
            Op::Tanh { a } => {
                let ga = gd.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
            }
            Op::Sigmoid { a } => {
                let ga = gd.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                let ga = gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
            }
            Op::Softplus { a } => {
                let x = self.value(*a).data();
                let ga = gd.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
            }
            Op::Softmax { a, outer, axis_len, inner } => {
                let mut ga = vec![0.0; gd.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * axis_len + j) * inner + i;
                        let dot: f64 = (0..*axis_len).map(|j| gd[idx(j)] * out[idx(j)]).sum();
                        for j in 0..*axis_len {
                            ga[idx(j)] = out[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *a, self.like(*a, ga));
            }
            Op::Sum { a } => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, self.like(*a, vec![gd[0]; n]));
            }
            Op::Mean { a } => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, self.like(*a, vec![gd[0] / n as f64; n]));
            }
            Op::SquaredError { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let diff: Vec<f64> = av.iter().zip(bv).map(|(x, y)| 2.0 * gd[0] * (x - y)).collect();
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, self.like(*b, diff.iter().map(|d| -d).collect()));
                }
                self.accumulate(grads, *a, self.like(*a, diff));
            }
            Op::Bce { p, target } => {
                let pv = self.value(*p).data();
                let n = target.len() as f64;
                let gp = pv.iter().zip(target).map(|(&x, &t)| -gd[0] * (t / x - (1.0 - t) / (1.0 - x)) / n).collect();
                self.accumulate(grads, *p, self.like(*p, gp));
            }
            Op::BceLogits { z, target } => {
                let zv = self.value(*z).data();
                let n = target.len() as f64;
                let gz = zv.iter().zip(target).map(|(&x, &t)| gd[0] * (sigmoid(x) - t) / n).collect();
                self.accumulate(grads, *z, self.like(*z, gz));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let f = inv_std.len();
                let n = xhat.len() / f;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for r in 0..n {
                    for j in 0..f {
                        dgamma[j] += gd[r * f + j] * xhat[r * f + j];
                        dbeta[j] += gd[r * f + j];
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; n * f];
                    for r in 0..n {
                        for j in 0..f {
                            let gy = gd[r * f + j] * gam[j];
                            dx[r * f + j] = if *batch {
                                // d/dx of the normalized value with batch statistics.
                                let nf = n as f64;
                                inv_std[j] / nf * (nf * gy - gam[j] * dbeta[j] - gam[j] * xhat[r * f + j] * dgamma[j])
                            } else {
                                gy * inv_std[j]
                            };
                        }
                    }
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                self.accumulate(grads, *gamma, self.like(*gamma, dgamma));
                self.accumulate(grads, *beta, self.like(*beta, dbeta));
            }
            Op::Gather { a, index } => {
                let w = self.value(*a).last_dim();
                self.accumulate_with(grads, *a, |ga| {
                    for (dst, src) in index.iter().enumerate() {
                        if let Some(s) = *src {
                            for j in 0..w {
                                ga[s * w + j] += gd[dst * w + j];
                            }
                        }
                    }
                });
            }
            Op::WeightedGather { w, src, index } => {
                let c = self.shape(*w)[1];
                let f = self.shape(*src)[1];
                let (wv, sv) = (self.value(*w).data(), self.value(*src).data());
                self.accumulate_with(grads, *w, |gw| {
                    for (k, idx) in index.iter().enumerate() {
                        if let Some(s) = *idx {
                            let r = k / c;
                            gw[k] += gd[r * f..(r + 1) * f]
                                .iter()
                                .zip(&sv[s * f..(s + 1) * f])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                });
                self.accumulate_with(grads, *src, |gs| {
                    for (k, idx) in index.iter().enumerate() {
                        if let Some(s) = *idx {
                            let (a, r) = (wv[k], k / c);
                            for (o, &g) in gs[s * f..(s + 1) * f].iter_mut().zip(&gd[r * f..(r + 1) * f]) {
                                *o += a * g;
                            }
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                let ga = g.clone().reshaped(self.shape(*a)).expect("same element count");
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

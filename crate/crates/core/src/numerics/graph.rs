//! Tape-style reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order; `backward` walks it once in reverse.

use std::sync::Arc;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, softmax_row};
use super::tensor::normalize_row;
use super::{Real, Tensor, LN_EPS};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    LogClamp {
        x: Var,
        floor: T,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Select {
        x: Var,
        index: usize,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward evaluation. Confined to a single thread and a single
/// step; build a fresh graph per sample.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected 2-D tensor, got {s:?}"))),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul_nt", self.value(a))?;
        let (n, k2) = dims2("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("[{m}, {k}] x [{n}, {k2}]^T"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulNt(a, b), &[a, b]))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let c = self.value(a).cols();
        if self.value(bias).numel() != c {
            return Err(Error::shape(
                "add_row",
                format!("row width {c}, bias {:?}", self.value(bias).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(c) {
            for (v, &bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.map(a, |v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, |v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.map(a, |v| v.abs());
        self.push(out, Op::Abs(a), &[a])
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamp(&mut self, a: Var, floor: T) -> Var {
        let out = self.map(a, |v| v.max(floor).ln());
        self.push(out, Op::LogClamp { x: a, floor }, &[a])
    }

    /// Row-wise softmax over the trailing axis. `mask[i * cols + j] == false`
    /// removes entry `(i, j)`; every row must keep at least one entry.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Arc<[bool]>>) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        if let Some(m) = &mask {
            if m.len() != r * c {
                return Err(Error::shape(
                    "softmax_rows",
                    format!("mask {} for {r}x{c}", m.len()),
                ));
            }
            if m.chunks(c).any(|row| !row.iter().any(|&k| k)) {
                return Err(Error::shape("softmax_rows", "fully masked row".to_string()));
            }
        }
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row_mask = mask.as_ref().map(|m| &m[i * c..(i + 1) * c]);
            softmax_row(
                &x.data()[i * c..(i + 1) * c],
                row_mask,
                &mut out[i * c..(i + 1) * c],
            );
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Row-wise layer normalization (eps = [`LN_EPS`]) with affine `gain`/`bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let x = self.value(a);
        let c = x.cols();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        if g.len() != c || b.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("row width {c}, gain {}, bias {}", g.len(), b.len()),
            ));
        }
        let mut xhat = x.data().to_vec();
        let mut rstd = Vec::with_capacity(x.rows());
        for row in xhat.chunks_mut(c) {
            rstd.push(normalize_row(row, LN_EPS).1);
        }
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = row[j] * g[j] + b[j];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[a, gain, bias],
        ))
    }

    /// Output row `i` is input row `idx[i]`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = dims2("gather_rows", x)?;
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list".to_string()));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(x.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, out);
        Ok(self.push(out, Op::GatherRows { x: a, idx }, &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_cols", self.value(a))?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {}) of {c}", start + len),
            ));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        let out = Tensor::matrix(r, len, out);
        Ok(self.push(out, Op::SliceCols { x: a, start }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs".to_string()));
        }
        let r = dims2("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2("concat_cols", self.value(p))?;
            if pr != r {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {r} vs {pr}"),
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(r, total, out);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Scalar holding the flat element `index` of `a`.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let x = self.value(a);
        if index >= x.numel() {
            return Err(Error::shape(
                "select",
                format!("index {index} of {}", x.numel()),
            ));
        }
        let out = Tensor::scalar(x.data()[index]);
        Ok(self.push(out, Op::Select { x: a, index }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Gradients of scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.item())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {id}")));
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:block) => {{
                let v: Var = $v;
                if needs(v) {
                    let n = self.nodes[v.0].value.numel();
                    let mut owned = grads[v.0].take().unwrap_or_else(|| vec![T::zero(); n]);
                    {
                        let $buf: &mut Vec<T> = &mut owned;
                        $body
                    }
                    grads[v.0] = Some(owned);
                }
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                with_grad!(*a, |ga| { gemm_nt(g, val(*b).data(), ga, m, n, k) });
                with_grad!(*b, |gb| { gemm_tn(val(*a).data(), g, gb, k, m, n) });
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                with_grad!(*a, |ga| { gemm_nn(g, val(*b).data(), ga, m, n, k) });
                with_grad!(*b, |gb| { gemm_tn(g, val(*a).data(), gb, n, m, k) });
            }
            Op::Add(a, b) => {
                with_grad!(*a, |ga| { add_into(ga, g) });
                with_grad!(*b, |gb| { add_into(gb, g) });
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |ga| { add_into(ga, g) });
                with_grad!(*b, |gb| {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                with_grad!(*a, |ga| { add_into(ga, g) });
                with_grad!(*bias, |gb| {
                    let c = gb.len();
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                with_grad!(*a, |ga| {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(val(*b).data()) {
                        *o += gv * bv;
                    }
                });
                with_grad!(*b, |gb| {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(val(*a).data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(a, s) => with_grad!(*a, |ga| {
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o += gv * *s;
                }
            }),
            Op::Relu(a) => with_grad!(*a, |ga| {
                for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(val(*a).data()) {
                    if x > T::zero() {
                        *o += gv;
                    }
                }
            }),
            Op::Sigmoid(a) => with_grad!(*a, |ga| {
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(node.value.data()) {
                    *o += gv * y * (T::one() - y);
                }
            }),
            Op::Abs(a) => with_grad!(*a, |ga| {
                for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(val(*a).data()) {
                    if x > T::zero() {
                        *o += gv;
                    } else if x < T::zero() {
                        *o -= gv;
                    }
                }
            }),
            Op::LogClamp { x, floor } => with_grad!(*x, |gx| {
                for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x).data()) {
                    if xv > *floor {
                        *o += gv / xv;
                    }
                }
            }),
            Op::Softmax(x) => with_grad!(*x, |gx| {
                let c = node.value.cols();
                let y = node.value.data();
                for ((gr, yr), outr) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        outr[j] += yr[j] * (gr[j] - dot);
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
                let c = node.value.cols();
                let gv = val(*gain).data();
                with_grad!(*x, |gx| {
                    let n = T::of(c as f64);
                    for (i, ((gr, xr), outr)) in g
                        .chunks(c)
                        .zip(xhat.chunks(c))
                        .zip(gx.chunks_mut(c))
                        .enumerate()
                    {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..c {
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dx += d * xr[j];
                        }
                        let k = rstd[i] / n;
                        for j in 0..c {
                            let d = gr[j] * gv[j];
                            outr[j] += k * (n * d - sum_d - xr[j] * sum_dx);
                        }
                    }
                });
                with_grad!(*gain, |gg| {
                    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                });
                with_grad!(*bias, |gb| {
                    for gr in g.chunks(c) {
                        add_into(gb, gr);
                    }
                });
            }
            Op::GatherRows { x, idx } => with_grad!(*x, |gx| {
                let c = node.value.cols();
                for (gr, &src) in g.chunks(c).zip(idx) {
                    add_into(&mut gx[src * c..(src + 1) * c], gr);
                }
            }),
            Op::SliceCols { x, start } => with_grad!(*x, |gx| {
                let len = node.value.cols();
                let c = val(*x).cols();
                for (i, gr) in g.chunks(len).enumerate() {
                    add_into(&mut gx[i * c + start..i * c + start + len], gr);
                }
            }),
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    with_grad!(p, |gp| {
                        for (i, gr) in g.chunks(total).enumerate() {
                            add_into(&mut gp[i * w..(i + 1) * w], &gr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Select { x, index } => with_grad!(*x, |gx| { gx[*index] += g[0] }),
            Op::Sum(a) => with_grad!(*a, |ga| {
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }),
        }
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Borrowed flat gradient for `v`.
    pub fn slice(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, sample_coords};

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.slice(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient_is_two_x() {
        let mut g = Graph::<f32>::new();
        let xr = g.param(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]));
        let loss = g.matmul_nt(xr, xr).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.slice(xr).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::scalar(f32::NAN));
        let l = g.sum(x);
        assert!(matches!(g.backward(l), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let a = g.param(Tensor::matrix(2, 3, vec![0.1, -0.3, 0.7, 1.1, 0.2, -0.9]));
            let b = g.param(Tensor::matrix(3, 2, vec![0.5, 0.4, -0.2, 0.8, 0.3, -0.6]));
            let c = g.matmul(a, b).unwrap();
            let s = g.softmax_rows(c, None).unwrap();
            let l = g.sum(s);
            let sq = g.mul(c, c).unwrap();
            let l2 = g.sum(sq);
            let tot = g.add(l, l2).unwrap();
            let grads = g.backward(tot).unwrap();
            (
                grads.slice(a).unwrap().to_vec(),
                grads.slice(b).unwrap().to_vec(),
            )
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert_eq!(
            a1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            a2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            b1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    /// Builds a scalar from one op applied to parameter `p` and checks its
    /// gradient against central differences in f64.
    fn check_op(shape: &[usize], p0: Vec<f64>, build: impl Fn(&mut Graph<f64>, Var) -> Var) {
        let eval = |p: &[f64]| {
            let mut g = Graph::<f64>::new();
            let x = g.param(Tensor::new(shape.to_vec(), p.to_vec()).unwrap());
            let out = build(&mut g, x);
            let w: Vec<f64> = (0..g.value(out).numel())
                .map(|i| 0.3 + 0.1 * i as f64)
                .collect();
            let wv = g.constant(Tensor::new(g.value(out).shape().to_vec(), w).unwrap());
            let prod = g.mul(out, wv).unwrap();
            let l = g.sum(prod);
            (
                g.value(l).item(),
                g.backward(l).unwrap().slice(x).unwrap().to_vec(),
            )
        };
        let (_, analytic) = eval(&p0);
        let coords = sample_coords(p0.len(), p0.len(), 0);
        let err = finite_diff_check(|p| eval(p).0, &p0, &analytic, 1e-5, &coords);
        assert!(err < 1e-6, "relative error {err}");
    }

    fn ramp(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.23 + 0.05)
            .collect()
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let w = Tensor::<f64>::new(vec![3, 2], ramp(6)).unwrap();
        check_op(&[2, 3], ramp(6), |g, x| {
            let wv = g.constant(w.clone());
            g.matmul(x, wv).unwrap()
        });
        check_op(&[2, 3], ramp(6), |g, x| {
            let wv = g.constant(w.transpose().unwrap());
            g.matmul_nt(x, wv).unwrap()
        });
        check_op(&[2, 3], ramp(6), |g, x| g.matmul_nt(x, x).unwrap());
        check_op(&[2, 3], ramp(6), |g, x| g.softmax_rows(x, None).unwrap());
        let mask: Arc<[bool]> = vec![true, false, true, true, true, false].into();
        check_op(&[2, 3], ramp(6), |g, x| {
            g.softmax_rows(x, Some(mask.clone())).unwrap()
        });
        check_op(&[2, 4], ramp(8), |g, x| {
            let gain = g.constant(Tensor::new(vec![4], vec![1.0, 0.5, -0.7, 2.0]).unwrap());
            let bias = g.constant(Tensor::new(vec![4], vec![0.1, 0.0, 0.3, -0.2]).unwrap());
            g.layer_norm(x, gain, bias).unwrap()
        });
        check_op(&[4], vec![1.0, 0.5, -0.7, 2.0], |g, gain| {
            let x = g.constant(Tensor::matrix(2, 4, ramp(8)));
            let bias = g.constant(Tensor::zeros(&[4]));
            g.layer_norm(x, gain, bias).unwrap()
        });
        check_op(&[2, 3], ramp(6), |g, x| g.sigmoid(x));
        check_op(&[2, 3], ramp(6), |g, x| g.relu(x));
        check_op(&[2, 3], ramp(6), |g, x| g.abs(x));
        check_op(&[3], vec![0.2, 0.9, 1.7], |g, x| g.log_clamp(x, 1e-12));
        check_op(&[3, 2], ramp(6), |g, x| {
            g.gather_rows(x, vec![0, 0, 2, 1]).unwrap()
        });
        check_op(&[2, 3], ramp(6), |g, x| g.slice_cols(x, 1, 2).unwrap());
        check_op(&[2, 3], ramp(6), |g, x| {
            let s = g.slice_cols(x, 0, 1).unwrap();
            g.concat_cols(&[x, s, x]).unwrap()
        });
        check_op(&[2, 3], ramp(6), |g, x| {
            let b = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
            g.add_row(x, b).unwrap()
        });
        check_op(&[3], vec![0.4, -1.0, 2.0], |g, b| {
            let x = g.constant(Tensor::matrix(2, 3, ramp(6)));
            g.add_row(x, b).unwrap()
        });
        check_op(&[2, 3], ramp(6), |g, x| {
            let y = g.scale(x, 2.5);
            let d = g.sub(y, x).unwrap();
            g.mul(d, x).unwrap()
        });
        check_op(&[2, 3], ramp(6), |g, x| g.select(x, 4).unwrap());
    }

    #[test]
    fn log_clamp_blocks_gradient_below_floor() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(0.0));
        let l = g.log_clamp(x, 1e-12);
        assert!((g.value(l).item() - (1e-12f64).ln()).abs() < 1e-9);
        assert_eq!(g.backward(l).unwrap().slice(x).unwrap(), &[0.0]);
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let mask: Arc<[bool]> = vec![false, false].into();
        assert!(g.softmax_rows(x, Some(mask)).is_err());
    }
}

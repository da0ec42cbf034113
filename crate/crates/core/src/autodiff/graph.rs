//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation as a node. Parameters enter
//! the tape by reference (no copy); [`Graph::backward`] walks the tape in
//! reverse and returns the gradient of a scalar node with respect to every
//! reachable parameter. A graph is used from one thread; the parameter store
//! it borrows is only read, so independent graphs can share one store.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    Negate(Var),
    Relu(Var),
    Exp(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    MaxOverSet {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    L1Norm(Var),
    L2Norm(Var),
    Sum(Var),
    Reshape(Var),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
struct Node {
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Hash of every piecewise choice on the tape: ReLU signs, max-pool
    /// winners and L1 signs. Two evaluations with equal patterns lie on the
    /// same smooth piece of the function.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::hash::DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(_) => {
                    for v in self.value(Var(i)).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxOverSet { argmax, .. } => argmax.hash(&mut h),
                Op::L1Norm(x) => {
                    for v in self.value(*x).data() {
                        v.partial_cmp(&0.0).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {} (node {})",
                op_name(&op),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::invalid(format!("matmul shapes {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let rg = self.requires(a) || self.requires(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    fn check_broadcast(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::invalid(format!("{what} shapes {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    /// Elementwise sum. `b` may have the shape of a trailing suffix of `a`
    /// (bias rows, scalars) and is then broadcast over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "add")?;
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(bv.len().max(1)) {
            for (o, x) in chunk.iter_mut().zip(bv) {
                *o += x;
            }
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.negate(b)?;
        self.add(a, nb)
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "mul")?;
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(bv.len().max(1)) {
            for (o, x) in chunk.iter_mut().zip(bv) {
                *o *= x;
            }
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        let rg = self.requires(a);
        self.push(out, Op::ScalarMul(a, c), rg)
    }

    pub fn negate(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = -*v);
        let rg = self.requires(a);
        self.push(out, Op::Negate(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.requires(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.exp());
        let rg = self.requires(a);
        self.push(out, Op::Exp(a), rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid(format!("softmax axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = self.value(x).clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (d[at(j)] - max).exp();
                    d[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    d[at(j)] /= total;
                }
            }
        }
        let rg = self.requires(x);
        self.push(out, Op::Softmax { x, axis }, rg)
    }

    /// Maximum along `axis`, which is removed from the shape. The gradient
    /// goes to the first maximal element.
    pub fn max_over_set(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid(format!("max axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for j in 1..len {
                    let at = base + j * inner;
                    if d[at] > d[best] {
                        best = at;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.requires(x);
        self.push(Tensor::new(out_shape, out)?, Op::MaxOverSet { x, argmax }, rg)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(Error::invalid("concat of nothing")),
        };
        if axis >= first.len() {
            return Err(Error::invalid(format!("concat axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::invalid(format!("concat shapes {first:?} and {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                let block = len * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = xs.iter().any(|&v| self.requires(v));
        self.push(Tensor::new(shape, out)?, Op::Concat { xs: xs.to_vec(), axis }, rg)
    }

    /// Sum of absolute values, as a scalar.
    pub fn l1_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v.abs()).sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::L1Norm(x), rg)
    }

    /// Euclidean norm, as a scalar.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::L2Norm(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.requires(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// Selects rows of a `[n, c]` tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::invalid(format!("gather_rows on shape {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("row index {bad} out of {n}")));
        }
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        let rg = self.requires(x);
        self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::GatherRows { x, idx: idx.to_vec() },
            rg,
        )
    }

    /// 2-D convolution of a `[cin, h, w]` input with `[cout, cin, kh, kw]`
    /// weights and `[cout]` bias, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sb != [sw[0]] || stride == 0 {
            return Err(Error::invalid(format!(
                "conv2d shapes x {sx:?}, w {sw:?}, b {sb:?}, stride {stride}"
            )));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::invalid("conv2d kernel larger than padded input"));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let mut out = vec![0.0; cout * ho * wo];
        gemm(
            cout,
            cin * kh * kw,
            ho * wo,
            self.value(w).data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let bias = self.value(b).data();
        for (co, row) in out.chunks_mut(ho * wo).enumerate() {
            row.iter_mut().for_each(|v| *v += bias[co]);
        }
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(
            Tensor::new(vec![cout, ho, wo], out)?,
            Op::Conv2d { x, w, b, geom, cols },
            rg,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        let mut out = Gradients::default();
        if !self.requires(loss) {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) -> Result<()> {
        let mut send = |v: Var, t: Tensor| {
            if !self.requires(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Input => {}
            Op::Param(id) => out.push(*id, g),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, 0.0, &mut da);
                    send(*a, Tensor::new(vec![m, k], da)?);
                }
                if self.requires(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, 0.0, &mut db);
                    send(*b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                if self.requires(*b) {
                    send(*b, reduce_broadcast(&g, self.shape(*b)));
                }
                send(*a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires(*a) {
                    let mut da = g.clone();
                    let bl = bv.len().max(1);
                    for chunk in da.data_mut().chunks_mut(bl) {
                        for (o, x) in chunk.iter_mut().zip(bv.data()) {
                            *o *= x;
                        }
                    }
                    send(*a, da);
                }
                if self.requires(*b) {
                    let mut prod = g.clone();
                    for (o, x) in prod.data_mut().iter_mut().zip(av.data()) {
                        *o *= x;
                    }
                    send(*b, reduce_broadcast(&prod, bv.shape()));
                }
            }
            Op::ScalarMul(a, c) => {
                let mut da = g.clone();
                da.data_mut().iter_mut().for_each(|v| *v *= c);
                send(*a, da);
            }
            Op::Negate(a) => {
                let mut da = g.clone();
                da.data_mut().iter_mut().for_each(|v| *v = -*v);
                send(*a, da);
            }
            Op::Relu(a) => {
                let mut da = g.clone();
                for (o, x) in da.data_mut().iter_mut().zip(self.value(*a).data()) {
                    if *x <= 0.0 {
                        *o = 0.0;
                    }
                }
                send(*a, da);
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.as_ref().expect("op value");
                let mut da = g.clone();
                for (o, e) in da.data_mut().iter_mut().zip(y.data()) {
                    *o *= e;
                }
                send(*a, da);
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[idx].value.as_ref().expect("op value");
                let (outer, len, inner) = split_axis(y.shape(), *axis);
                let yd = y.data();
                let mut dx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[at(j)] * yd[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                send(*x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::MaxOverSet { x, argmax, .. } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let d = dx.data_mut();
                for (gv, &at) in gd.iter().zip(argmax) {
                    d[at] += gv;
                }
                send(*x, dx);
            }
            Op::Concat { xs, axis } => {
                let total: usize = g.shape()[*axis];
                let (outer, _, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let s = self.shape(v).to_vec();
                    let len = s[*axis];
                    if self.requires(v) {
                        let mut part = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = o * total * inner + offset * inner;
                            part.extend_from_slice(&gd[start..start + len * inner]);
                        }
                        send(v, Tensor::new(s, part)?);
                    }
                    offset += len;
                }
            }
            Op::L1Norm(x) => {
                let gv = gd[0];
                let mut dx = self.value(*x).clone();
                dx.data_mut().iter_mut().for_each(|v| {
                    *v = if *v > 0.0 {
                        gv
                    } else if *v < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                });
                send(*x, dx);
            }
            Op::L2Norm(x) => {
                let norm = self.nodes[idx].value.as_ref().expect("op value").data()[0];
                let mut dx = self.value(*x).clone();
                let scale = if norm > 0.0 { gd[0] / norm } else { 0.0 };
                dx.data_mut().iter_mut().for_each(|v| *v *= scale);
                send(*x, dx);
            }
            Op::Sum(x) => {
                send(*x, Tensor::filled(self.shape(*x), gd[0]));
            }
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                send(*x, g.reshaped(s)?);
            }
            Op::GatherRows { x, idx } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let c = dx.shape()[1];
                let d = dx.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += gd[r * c + j];
                    }
                }
                send(*x, dx);
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let kdim = geom.cin * geom.kh * geom.kw;
                let pix = geom.ho * geom.wo;
                if self.requires(*w) {
                    let mut dw = vec![0.0; geom.cout * kdim];
                    gemm(geom.cout, pix, kdim, gd, false, cols, true, 0.0, &mut dw);
                    send(*w, Tensor::new(self.shape(*w).to_vec(), dw)?);
                }
                if self.requires(*b) {
                    let db = gd.chunks(pix).map(|row| row.iter().sum()).collect();
                    send(*b, Tensor::vector(db));
                }
                if self.requires(*x) {
                    let mut dcols = vec![0.0; kdim * pix];
                    gemm(
                        kdim,
                        geom.cout,
                        pix,
                        self.value(*w).data(),
                        true,
                        gd,
                        false,
                        0.0,
                        &mut dcols,
                    );
                    let dx = col2im(&dcols, geom);
                    send(*x, Tensor::new(vec![geom.cin, geom.h, geom.w], dx)?);
                }
            }
        }
        Ok(())
    }
}

fn reduce_broadcast(g: &Tensor, target: &[usize]) -> Tensor {
    let mut acc = Tensor::zeros(target);
    let n = acc.len().max(1);
    let a = acc.data_mut();
    for chunk in g.data().chunks(n) {
        for (o, x) in a.iter_mut().zip(chunk) {
            *o += x;
        }
    }
    acc
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let pix = g.ho * g.wo;
    let mut cols = vec![0.0; g.cin * g.kh * g.kw * pix];
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * pix..(row + 1) * pix];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.wo + ox] = x[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let pix = g.ho * g.wo;
    let mut x = vec![0.0; g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * pix..(row + 1) * pix];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            x[dst_row + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::ScalarMul(..) => "scalar_mul",
        Op::Negate(_) => "negate",
        Op::Relu(_) => "relu",
        Op::Exp(_) => "exp",
        Op::Softmax { .. } => "softmax",
        Op::MaxOverSet { .. } => "max_over_set",
        Op::Concat { .. } => "concat",
        Op::L1Norm(_) => "l1_norm",
        Op::L2Norm(_) => "l2_norm",
        Op::Sum(_) => "sum",
        Op::Reshape(_) => "reshape",
        Op::GatherRows { .. } => "gather_rows",
        Op::Conv2d { .. } => "conv2d",
    }
}

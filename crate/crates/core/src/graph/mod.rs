//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only arena: every op pushes a node holding its
//! value, so node indices are already a topological order and
//! [`Graph::backward`] is a single reverse sweep. Ops panic on shape errors;
//! the network blocks validate user-facing shapes before building graphs.

mod kernels;

use crate::tensor::{numel, strides, Tensor};
pub use kernels::reflect_index;
use kernels::{
    binary_broadcast, col2im, depthwise_backward, depthwise_forward, gemm, im2col, max_to, sum_to,
    ConvGeom,
};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Exp,
    Sqrt,
    Sigmoid,
    LeakyRelu(f64),
    Abs,
    Square,
    /// tanh approximation
    Gelu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    SumTo(Var),
    BroadcastTo(Var),
    MaxTo {
        x: Var,
        argmax: Vec<usize>,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        groups: usize,
    },
    Gather {
        x: Var,
        index: Vec<u32>,
    },
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Softmax(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the leaves that require them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out = binary_broadcast(self.value(a), self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(f64, f64) -> f64 = match kind {
            Unary::Exp => |x, _| x.exp(),
            Unary::Sqrt => |x, _| x.sqrt(),
            Unary::Sigmoid => |x, _| sigmoid(x),
            Unary::LeakyRelu(_) => |x, s| if x >= 0.0 { x } else { s * x },
            Unary::Abs => |x, _| x.abs(),
            Unary::Square => |x, _| x * x,
            Unary::Gelu => |x, _| gelu(x),
        };
        let s = match kind {
            Unary::LeakyRelu(s) => s,
            _ => 0.0,
        };
        let out = self.value(a).map(|x| f(x, s));
        let rg = self.rg(a);
        self.push(out, Op::Unary(a, kind), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    // ---- reductions ----------------------------------------------------------

    /// Sums down to `shape` (same rank, axes equal or 1), or to a scalar when
    /// `shape` is empty.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = sum_to(self.value(a), shape);
        let rg = self.rg(a);
        self.push(out, Op::SumTo(a), rg)
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut shape = self.shape(a).to_vec();
        for &ax in axes {
            shape[ax] = 1;
        }
        self.sum_to(a, &shape)
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let count: usize = axes.iter().map(|&ax| self.shape(a)[ax]).product();
        let s = self.sum_axes(a, axes);
        self.scale(s, 1.0 / count as f64)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.sum_to(a, &[])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn max_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut shape = self.shape(a).to_vec();
        for &ax in axes {
            shape[ax] = 1;
        }
        let (out, argmax) = max_to(self.value(a), &shape);
        let rg = self.rg(a);
        self.push(out, Op::MaxTo { x: a, argmax }, rg)
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = kernels::broadcast_to(self.value(a), shape);
        let rg = self.rg(a);
        self.push(out, Op::BroadcastTo(a), rg)
    }

    // ---- linear algebra ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// Batched `op(a) @ op(b)` over the last two axes. Leading axes must
    /// match, or `b` may be a plain matrix shared by every batch entry.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs rank >= 2");
        let (m, k) = mat_dims(&sa, ta);
        let (k2, n) = mat_dims(&sb, tb);
        assert_eq!(
            k, k2,
            "matmul inner dims differ: {sa:?} x {sb:?} (ta={ta}, tb={tb})"
        );
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let shared_b = batch_b.is_empty();
        assert!(
            shared_b || batch_a == batch_b,
            "matmul batch dims differ: {sa:?} x {sb:?}"
        );
        let batch = numel(batch_a);
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                let bo = if shared_b { 0 } else { i * k * n };
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..],
                    ta,
                    &bd[bo..],
                    tb,
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::from_vec(out_shape, out),
            Op::MatMul { a, b, ta, tb },
            rg,
        )
    }

    /// 2-D convolution (cross-correlation) without padding.
    ///
    /// `x` is `(B, Cin, H, W)`, `w` is `(Cout, Cin / groups, kh, kw)` and the
    /// optional bias is `(Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, groups: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be 4-D, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be 4-D, got {ws:?}");
        let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert!(
            groups > 0 && cin % groups == 0 && cout % groups == 0,
            "bad groups {groups}"
        );
        assert_eq!(
            cin / groups,
            cin_g,
            "conv2d channels: input {xs:?}, weight {ws:?}"
        );
        assert!(
            h >= kh && wd >= kw && stride > 0,
            "conv2d kernel larger than input"
        );
        if let Some(b) = b {
            assert_eq!(self.shape(b), &[cout], "conv2d bias shape");
        }
        let geom = ConvGeom {
            cin_g,
            h,
            w: wd,
            kh,
            kw,
            stride,
            ho: (h - kh) / stride + 1,
            wo: (wd - kw) / stride + 1,
        };
        let cout_g = cout / groups;
        let (k, n) = (geom.k(), geom.n());
        let mut out = vec![0.0; bsz * cout * n];
        {
            let xd = self.value(x).data();
            let wdat = self.value(w).data();
            if geom.is_depthwise(cout_g) {
                depthwise_forward(xd, wdat, &geom, bsz * cin, &mut out);
            } else {
                let direct = geom.is_pointwise();
                let mut cols = if direct { Vec::new() } else { vec![0.0; k * n] };
                for bi in 0..bsz {
                    for g in 0..groups {
                        let xoff = (bi * cin + g * cin_g) * h * wd;
                        let src: &[f64] = if direct {
                            &xd[xoff..xoff + k * n]
                        } else {
                            im2col(&xd[xoff..], &geom, &mut cols);
                            &cols
                        };
                        let ooff = (bi * cout + g * cout_g) * n;
                        gemm(
                            cout_g,
                            k,
                            n,
                            &wdat[g * cout_g * k..],
                            false,
                            src,
                            false,
                            &mut out[ooff..ooff + cout_g * n],
                            0.0,
                        );
                    }
                }
            }
            if let Some(b) = b {
                let bd = self.value(b).data();
                for bi in 0..bsz {
                    for (c, &bv) in bd.iter().enumerate() {
                        for v in &mut out[(bi * cout + c) * n..(bi * cout + c + 1) * n] {
                            *v += bv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = Tensor::from_vec(vec![bsz, cout, geom.ho, geom.wo], out);
        self.push(
            t,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                groups,
            },
            rg,
        )
    }

    // ---- indexing ------------------------------------------------------------

    /// `out[i] = x[index[i]]` (flat indices), reshaped to `shape`.
    pub fn gather(&mut self, x: Var, shape: Vec<usize>, index: Vec<u32>) -> Var {
        assert_eq!(numel(&shape), index.len(), "gather shape/index mismatch");
        let data = {
            let xd = self.value(x).data();
            index.iter().map(|&i| xd[i as usize]).collect()
        };
        let rg = self.rg(x);
        self.push(Tensor::from_vec(shape, data), Op::Gather { x, index }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape.to_vec());
        let rg = self.rg(x);
        self.push(t, Op::Reshape(x), rg)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let src = self.shape(x).to_vec();
        assert_eq!(axes.len(), src.len());
        let out_shape: Vec<usize> = axes.iter().map(|&a| src[a]).collect();
        let src_strides = strides(&src);
        let perm_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let index = strided_index(&out_shape, &perm_strides, 0);
        self.gather(x, out_shape, index)
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let src = self.shape(x).to_vec();
        assert!(start + len <= src[axis], "slice out of range");
        let mut out_shape = src.clone();
        out_shape[axis] = len;
        let st = strides(&src);
        let index = strided_index(&out_shape, &st, start * st[axis]);
        self.gather(x, out_shape, index)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Var {
        assert!(!inputs.is_empty());
        let first = self.shape(inputs[0]).to_vec();
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for d in 0..s.len() {
                assert!(
                    d == axis || s[d] == first[d],
                    "concat shape mismatch {:?} vs {:?}",
                    s,
                    first
                );
            }
            out_shape[axis] += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            Tensor::from_vec(out_shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Reflect padding of the last two axes.
    pub fn pad_reflect(
        &mut self,
        x: Var,
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    ) -> Var {
        if top + bottom + left + right == 0 {
            return x;
        }
        let s = self.shape(x).to_vec();
        let r = s.len();
        assert!(r >= 2);
        let (h, w) = (s[r - 2], s[r - 1]);
        let (ho, wo) = (h + top + bottom, w + left + right);
        let planes = numel(&s[..r - 2]);
        let rows: Vec<usize> = (0..ho)
            .map(|y| reflect_index(y as isize - top as isize, h))
            .collect();
        let cols: Vec<usize> = (0..wo)
            .map(|x| reflect_index(x as isize - left as isize, w))
            .collect();
        let mut index = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            for &ry in &rows {
                for &cx in &cols {
                    index.push((p * h * w + ry * w + cx) as u32);
                }
            }
        }
        let mut out_shape = s;
        out_shape[r - 2] = ho;
        out_shape[r - 1] = wo;
        self.gather(x, out_shape, index)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().expect("softmax on rank-0 tensor");
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(shape, out), Op::Softmax(x), rg)
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(node, gy, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, gy: Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, sum_to(&gy, self.shape(*a)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, sum_to(&gy, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, sum_to(&gy, self.shape(*a)));
                }
                if self.rg(*b) {
                    let g = sum_to(&gy, self.shape(*b)).map(|v| -v);
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let g = binary_broadcast(&gy, self.value(*b), |g, bv| g * bv);
                    self.accumulate(grads, *a, sum_to(&g, self.shape(*a)));
                }
                if self.rg(*b) {
                    let g = binary_broadcast(&gy, self.value(*a), |g, av| g * av);
                    self.accumulate(grads, *b, sum_to(&g, self.shape(*b)));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.rg(*a) {
                    let g = binary_broadcast(&gy, bv, |g, d| g / d);
                    self.accumulate(grads, *a, sum_to(&g, self.shape(*a)));
                }
                if self.rg(*b) {
                    // d(a/b)/db = -y / b
                    let t = binary_broadcast(&gy, y, |g, yv| -g * yv);
                    let g = binary_broadcast(&t, bv, |t, d| t / d);
                    self.accumulate(grads, *b, sum_to(&g, self.shape(*b)));
                }
            }
            Op::Maximum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let out_shape = gy.shape().to_vec();
                let ab = kernels::broadcast_to(av, &out_shape);
                let bb = kernels::broadcast_to(bv, &out_shape);
                if self.rg(*a) {
                    let g = mask_select(&gy, &ab, &bb, true);
                    self.accumulate(grads, *a, sum_to(&g, av.shape()));
                }
                if self.rg(*b) {
                    let g = mask_select(&gy, &ab, &bb, false);
                    self.accumulate(grads, *b, sum_to(&g, bv.shape()));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, gy.map(|g| g * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, gy),
            Op::Unary(a, kind) => {
                let x = self.value(*a);
                let mut g = gy;
                let (xd, yd) = (x.data(), y.data());
                let gd = g.data_mut();
                match *kind {
                    Unary::Exp => gd.iter_mut().zip(yd).for_each(|(g, &y)| *g *= y),
                    Unary::Sqrt => gd.iter_mut().zip(yd).for_each(|(g, &y)| *g *= 0.5 / y),
                    Unary::Sigmoid => gd
                        .iter_mut()
                        .zip(yd)
                        .for_each(|(g, &y)| *g *= y * (1.0 - y)),
                    Unary::LeakyRelu(s) => gd
                        .iter_mut()
                        .zip(xd)
                        .for_each(|(g, &x)| *g *= if x >= 0.0 { 1.0 } else { s }),
                    Unary::Abs => gd.iter_mut().zip(xd).for_each(|(g, &x)| {
                        *g *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }),
                    Unary::Square => gd.iter_mut().zip(xd).for_each(|(g, &x)| *g *= 2.0 * x),
                    Unary::Gelu => gd.iter_mut().zip(xd).for_each(|(g, &x)| *g *= gelu_grad(x)),
                }
                self.accumulate(grads, *a, g);
            }
            Op::SumTo(a) => {
                let target = self.shape(*a).to_vec();
                let g = if gy.rank() != target.len() {
                    // reduced to a scalar
                    Tensor::full(target, gy.item())
                } else {
                    kernels::broadcast_to(&gy, &target)
                };
                self.accumulate(grads, *a, g);
            }
            Op::BroadcastTo(a) => {
                let g = sum_to(&gy, self.shape(*a));
                self.accumulate(grads, *a, g);
            }
            Op::MaxTo { x, argmax } => {
                let mut g = Tensor::zeros(self.shape(*x).to_vec());
                let gd = g.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    gd[src] += gy.data()[o];
                }
                self.accumulate(grads, *x, g);
            }
            Op::MatMul { a, b, ta, tb } => self.backprop_matmul(*a, *b, *ta, *tb, &gy, grads),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                groups,
            } => self.backprop_conv(*x, *w, *b, *stride, *groups, &gy, grads),
            Op::Gather { x, index } => {
                if self.rg(*x) {
                    let mut g = Tensor::zeros(self.shape(*x).to_vec());
                    let gd = g.data_mut();
                    for (&i, &v) in index.iter().zip(gy.data()) {
                        gd[i as usize] += v;
                    }
                    self.accumulate(grads, *x, g);
                }
            }
            Op::Reshape(x) => {
                let g = gy.reshape(self.shape(*x).to_vec());
                self.accumulate(grads, *x, g);
            }
            Op::Concat { inputs, axis } => {
                let shape = y.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[axis + 1..]);
                let total = shape[*axis] * inner;
                let mut start = 0;
                for &v in inputs {
                    let block = self.shape(v)[*axis] * inner;
                    if self.rg(v) {
                        let mut data = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let base = o * total + start;
                            data.extend_from_slice(&gy.data()[base..base + block]);
                        }
                        self.accumulate(grads, v, Tensor::from_vec(self.shape(v).to_vec(), data));
                    }
                    start += block;
                }
            }
            Op::Softmax(x) => {
                let n = *y.shape().last().unwrap();
                let mut g = gy;
                for (grow, yrow) in g.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gv, &yv) in grow.iter_mut().zip(yrow) {
                        *gv = yv * (*gv - dot);
                    }
                }
                self.accumulate(grads, *x, g);
            }
        }
    }

    fn backprop_matmul(
        &self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k) = mat_dims(sa, ta);
        let n = mat_dims(sb, tb).1;
        let batch = numel(&sa[..sa.len() - 2]);
        let shared_b = sb.len() == 2;
        let (ad, bd, gd) = (self.value(a).data(), self.value(b).data(), gy.data());
        if self.rg(a) {
            let mut da = vec![0.0; batch * m * k];
            for i in 0..batch {
                let bo = if shared_b { 0 } else { i * k * n };
                let dst = &mut da[i * m * k..(i + 1) * m * k];
                let g = &gd[i * m * n..];
                if !ta {
                    gemm(m, n, k, g, false, &bd[bo..], !tb, dst, 0.0);
                } else {
                    gemm(k, n, m, &bd[bo..], tb, g, true, dst, 0.0);
                }
            }
            self.accumulate(grads, a, Tensor::from_vec(sa.to_vec(), da));
        }
        if self.rg(b) {
            let mut db = vec![0.0; if shared_b { k * n } else { batch * k * n }];
            for i in 0..batch {
                let (dst, beta) = if shared_b {
                    (&mut db[..], if i == 0 { 0.0 } else { 1.0 })
                } else {
                    (&mut db[i * k * n..(i + 1) * k * n], 0.0)
                };
                let g = &gd[i * m * n..];
                let av = &ad[i * m * k..];
                if !tb {
                    gemm(k, m, n, av, !ta, g, false, dst, beta);
                } else {
                    gemm(n, m, k, g, true, av, ta, dst, beta);
                }
            }
            self.accumulate(grads, b, Tensor::from_vec(sb.to_vec(), db));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        groups: usize,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let ys = gy.shape();
        let geom = ConvGeom {
            cin_g,
            h,
            w: wd,
            kh,
            kw,
            stride,
            ho: ys[2],
            wo: ys[3],
        };
        let cout_g = cout / groups;
        let (k, n) = (geom.k(), geom.n());
        let gd = gy.data();
        if let Some(b) = b {
            if self.rg(b) {
                let mut db = vec![0.0; cout];
                for bi in 0..bsz {
                    for (c, acc) in db.iter_mut().enumerate() {
                        *acc += gd[(bi * cout + c) * n..(bi * cout + c + 1) * n]
                            .iter()
                            .sum::<f64>();
                    }
                }
                self.accumulate(grads, b, Tensor::from_vec(vec![cout], db));
            }
        }
        let need_w = self.rg(w);
        let need_x = self.rg(x);
        if !need_w && !need_x {
            return;
        }
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        let mut dw = if need_w {
            vec![0.0; cout * k]
        } else {
            Vec::new()
        };
        let mut dx = if need_x {
            vec![0.0; xd.len()]
        } else {
            Vec::new()
        };
        if geom.is_depthwise(cout_g) {
            depthwise_backward(
                xd,
                wdat,
                gd,
                &geom,
                bsz * cin,
                need_w.then_some(&mut dw[..]),
                need_x.then_some(&mut dx[..]),
            );
        } else {
            let direct = geom.is_pointwise();
            let mut cols = if direct { Vec::new() } else { vec![0.0; k * n] };
            for bi in 0..bsz {
                for g in 0..groups {
                    let xoff = (bi * cin + g * cin_g) * h * wd;
                    let goff = (bi * cout + g * cout_g) * n;
                    let gslice = &gd[goff..goff + cout_g * n];
                    let dst = &mut dw[..];
                    if need_w {
                        let src: &[f64] = if direct {
                            &xd[xoff..xoff + k * n]
                        } else {
                            im2col(&xd[xoff..], &geom, &mut cols);
                            &cols
                        };
                        let dst = &mut dst[g * cout_g * k..(g + 1) * cout_g * k];
                        gemm(cout_g, n, k, gslice, false, src, true, dst, 1.0);
                    }
                    if need_x {
                        let wg = &wdat[g * cout_g * k..];
                        if direct {
                            let dxs = &mut dx[xoff..xoff + k * n];
                            gemm(k, cout_g, n, wg, true, gslice, false, dxs, 1.0);
                        } else {
                            gemm(k, cout_g, n, wg, true, gslice, false, &mut cols, 0.0);
                            col2im(&cols, &geom, &mut dx[xoff..xoff + cin_g * h * wd]);
                        }
                    }
                }
            }
        }
        if need_w {
            self.accumulate(grads, w, Tensor::from_vec(ws, dw));
        }
        if need_x {
            self.accumulate(grads, x, Tensor::from_vec(xs, dx));
        }
    }
}

fn mat_dims(shape: &[usize], transposed: bool) -> (usize, usize) {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    if transposed {
        (cols, rows)
    } else {
        (rows, cols)
    }
}

/// Flat indices of a strided view with the given output shape.
fn strided_index(out_shape: &[usize], view_strides: &[usize], base: usize) -> Vec<u32> {
    let n = numel(out_shape);
    let mut index = Vec::with_capacity(n);
    let rank = out_shape.len();
    if rank == 0 {
        index.push(base as u32);
        return index;
    }
    let mut idx = vec![0usize; rank];
    let mut off = base;
    for _ in 0..n {
        index.push(off as u32);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            off += view_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= view_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    index
}

fn mask_select(gy: &Tensor, a: &Tensor, b: &Tensor, pick_a: bool) -> Tensor {
    let data = gy
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&g, (&av, &bv))| if (av >= bv) == pick_a { g } else { 0.0 })
        .collect();
    Tensor::from_vec(gy.shape().to_vec(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use std::sync::Arc;

use super::conv::{conv_forward, conv_input_grad, conv_weight_grad, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::geometry::{warp_backward, warp_forward, PatchRef, SampleGrid};

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    InstanceNorm {
        x: NodeId,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: NodeId,
        slope: T,
    },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Square(NodeId),
    LnClamped {
        x: NodeId,
        lo: T,
        hi: T,
    },
    Affine {
        x: NodeId,
        scale: T,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    GlobalAvgPool(NodeId),
    Concat(Vec<NodeId>),
    Broadcast {
        x: NodeId,
        plane: usize,
    },
    Slice {
        x: NodeId,
        start: usize,
    },
    Gather {
        x: NodeId,
        index: Vec<Option<usize>>,
    },
    Warp {
        patch: NodeId,
        params: NodeId,
        grid: SampleGrid,
    },
    Paste {
        base: NodeId,
        mask: NodeId,
        class: usize,
    },
    SpectralNorm {
        w: NodeId,
        u: Vec<T>,
        v: Vec<T>,
        sigma: T,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to every node that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Leaf,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf sharing an existing buffer; never differentiated.
    pub fn shared_constant(&mut self, value: Arc<Tensor<T>>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn parameter(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect());
        self.push(out, op, &[x])
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T, op: Op<T>) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data);
        self.push(out, op, &[a, b])
    }

    /// Convolution of a `Ci x H x W` map with `Co x Ci x k x k` weights.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be C x H x W, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be Co x Ci x k x k");
        assert_eq!(ws[1], xs[0], "conv2d channel mismatch: weight {ws:?}, input {xs:?}");
        assert_eq!(ws[2], ws[3], "square kernels only");
        assert_eq!(self.shape(b), &[ws[0]], "conv2d bias shape");
        let geom =
            ConvGeom::new(xs[0], ws[0], xs[1], xs[2], ws[2], stride, pad).expect("kernel larger than padded input");
        let mut out = vec![T::zero(); geom.out_ch * geom.out_len()];
        let cols = conv_forward(&geom, self.data(x), self.data(w), self.data(b), &mut out);
        let keep_cols = self.needs_grad(w);
        let value = Tensor::new(vec![geom.out_ch, geom.out_h, geom.out_w], out);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols: if keep_cols { cols } else { Vec::new() },
            },
            &[x, w, b],
        )
    }

    /// `w . x + b` for a vector `x` of length `n` and `w: m x n`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let ws = self.shape(w).to_vec();
        let n = self.value(x).len();
        assert_eq!(ws.len(), 2, "linear weight must be 2-D");
        assert_eq!(ws[1], n, "linear input length mismatch");
        assert_eq!(self.shape(b), &[ws[0]], "linear bias shape");
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let out: Vec<T> = (0..ws[0])
            .map(|i| {
                wd[i * n..(i + 1) * n]
                    .iter()
                    .zip(xd)
                    .fold(bd[i], |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        self.push(Tensor::vector(out), Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Per-channel normalization over the spatial extent, no affine terms.
    pub fn instance_norm(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "instance_norm expects C x H x W");
        let plane = shape[1] * shape[2];
        let n = T::from_usize(plane).unwrap();
        let mut out = Vec::with_capacity(shape[0] * plane);
        let mut inv_std = Vec::with_capacity(shape[0]);
        for ch in self.data(x).chunks(plane) {
            let mean = ch.iter().copied().sum::<T>() / n;
            let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + T::lit(NORM_EPS)).sqrt();
            out.extend(ch.iter().map(|&v| (v - mean) * inv));
            inv_std.push(inv);
        }
        self.push(Tensor::new(shape, out), Op::InstanceNorm { x, inv_std }, &[x])
    }

    /// `w / sigma` with `sigma = |W^T u|`, `W` the weight viewed as `rows x rest`.
    /// With `u` the top left singular vector, `sigma` is the spectral norm.
    /// `u` is held fixed, so the result is an exact function of `w`.
    pub fn spectral_normalize(&mut self, w: NodeId, u: &[T]) -> NodeId {
        let shape = self.shape(w).to_vec();
        let wd = self.data(w);
        let rows = shape[0];
        assert_eq!(u.len(), rows, "spectral vector length");
        let cols = wd.len() / rows;
        let mut t = vec![T::zero(); cols];
        for (r, &ur) in u.iter().enumerate() {
            for (tj, &wv) in t.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                *tj = *tj + ur * wv;
            }
        }
        let sigma = t.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(1e-12));
        let v: Vec<T> = t.iter().map(|&x| x / sigma).collect();
        let out = Tensor::new(shape, wd.iter().map(|&x| x / sigma).collect());
        self.push(
            out,
            Op::SpectralNorm {
                w,
                u: u.to_vec(),
                v,
                sigma,
            },
            &[w],
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = T::lit(slope);
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu { x, slope: s },
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// `ln(clamp(x, lo, hi))`; zero gradient where the clamp is active.
    pub fn ln_clamped(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(x, |v| v.max(lo).min(hi).ln(), Op::LnClamped { x, lo, hi })
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let (a, b) = (T::lit(scale), T::lit(shift));
        self.unary(x, |v| a * v + b, Op::Affine { x, scale: a })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.affine(x, c, 0.0)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.affine(x, 1.0, c)
    }

    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 1.0)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = T::from_usize(self.value(x).len()).unwrap();
        let s = self.data(x).iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sum of several nodes of equal shape.
    pub fn add_all(&mut self, terms: &[NodeId]) -> NodeId {
        let (first, rest) = terms.split_first().expect("add_all of nothing");
        rest.iter().fold(*first, |acc, &t| self.add(acc, t))
    }

    /// `C x H x W` to a length-`C` vector of spatial means.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "global_avg_pool expects C x H x W");
        let plane = shape[1] * shape[2];
        let n = T::from_usize(plane).unwrap();
        let out = self
            .data(x)
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() / n)
            .collect();
        self.push(Tensor::vector(out), Op::GlobalAvgPool(x), &[x])
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(&s[1..], &tail[..], "concat trailing dims differ");
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(Tensor::new(shape, data), Op::Concat(parts.to_vec()), parts)
    }

    /// Length-`d` vector to a `d x h x w` map, constant per channel.
    pub fn broadcast_spatial(&mut self, x: NodeId, h: usize, w: usize) -> NodeId {
        assert_eq!(self.shape(x).len(), 1, "broadcast_spatial expects a vector");
        let plane = h * w;
        let data = self
            .data(x)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, plane))
            .collect();
        let d = self.value(x).len();
        self.push(Tensor::new(vec![d, h, w], data), Op::Broadcast { x, plane }, &[x])
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        assert_eq!(self.shape(x).len(), 1, "slice expects a vector");
        let data = self.data(x)[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice { x, start }, &[x])
    }

    /// `out[i] = x[index[i]]`, or zero where the index is `None`.
    pub fn gather(&mut self, x: NodeId, index: &[Option<usize>]) -> NodeId {
        let src = self.data(x);
        let data = index.iter().map(|i| i.map_or(T::zero(), |i| src[i])).collect();
        self.push(
            Tensor::vector(data),
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        )
    }

    /// Warps a `C x P x P` patch by the `(s, tx, ty)` vector `params` onto `grid`.
    pub fn warp(&mut self, patch: NodeId, params: NodeId, grid: SampleGrid) -> NodeId {
        let ps = self.shape(patch).to_vec();
        assert_eq!(ps.len(), 3, "warp patch must be C x P x P");
        assert_eq!(ps[1], ps[2], "warp patch must be square");
        assert_eq!(self.value(params).len(), 3, "warp params must be (s, tx, ty)");
        let p = self.data(params);
        let prm = [p[0], p[1], p[2]];
        let mut out = vec![T::zero(); ps[0] * grid.width * grid.height];
        warp_forward(
            PatchRef {
                data: self.data(patch),
                channels: ps[0],
                side: ps[1],
            },
            prm,
            &grid,
            &mut out,
        );
        let value = Tensor::new(vec![ps[0], grid.height, grid.width], out);
        self.push(value, Op::Warp { patch, params, grid }, &[patch, params])
    }

    /// `out_c = (1 - m) * base_c + [c == class] * m` with a `1 x H x W` mask.
    pub fn paste(&mut self, base: NodeId, mask: NodeId, class: usize) -> NodeId {
        let bs = self.shape(base).to_vec();
        let ms = self.shape(mask);
        assert_eq!(bs.len(), 3, "paste base must be C x H x W");
        assert_eq!(ms, &[1, bs[1], bs[2]], "paste mask must be 1 x H x W");
        assert!(class < bs[0], "paste class out of range");
        let plane = bs[1] * bs[2];
        let m = self.data(mask);
        let mut data = self.data(base).to_vec();
        for (c, ch) in data.chunks_mut(plane).enumerate() {
            for (v, &mv) in ch.iter_mut().zip(m) {
                *v = (T::one() - mv) * *v + if c == class { mv } else { T::zero() };
            }
        }
        self.push(Tensor::new(bs, data), Op::Paste { base, mask, class }, &[base, mask])
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].needs_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| vec![T::zero(); self.nodes[id.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                self.accumulate(grads, *b, |db| {
                    for (co, row) in g.chunks(geom.out_len()).enumerate() {
                        db[co] = db[co] + row.iter().copied().sum::<T>();
                    }
                });
                self.accumulate(grads, *w, |dw| conv_weight_grad(geom, cols, g, dw));
                let wd = self.data(*w);
                self.accumulate(grads, *x, |dx| conv_input_grad(geom, wd, g, dx));
            }
            Op::Linear { x, w, b } => {
                let xd = self.data(*x);
                let n = xd.len();
                self.accumulate(grads, *b, |db| db.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi));
                self.accumulate(grads, *w, |dw| {
                    for (row, &gi) in dw.chunks_mut(n).zip(g) {
                        row.iter_mut().zip(xd).for_each(|(d, &xv)| *d = *d + gi * xv);
                    }
                });
                let wd = self.data(*w);
                self.accumulate(grads, *x, |dx| {
                    for (row, &gi) in wd.chunks(n).zip(g) {
                        dx.iter_mut().zip(row).for_each(|(d, &wv)| *d = *d + gi * wv);
                    }
                });
            }
            Op::InstanceNorm { x, inv_std } => {
                let s = self.shape(*x);
                let plane = s[1] * s[2];
                let n = T::from_usize(plane).unwrap();
                self.accumulate(grads, *x, |dx| {
                    for (c, &is) in inv_std.iter().enumerate().take(s[0]) {
                        let r = c * plane..(c + 1) * plane;
                        let (gy, y) = (&g[r.clone()], &out[r.clone()]);
                        let mean_g = gy.iter().copied().sum::<T>() / n;
                        let mean_gy = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for ((d, &gi), &yi) in dx[r].iter_mut().zip(gy).zip(y) {
                            *d = *d + is * (gi - mean_g - yi * mean_gy);
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xd = self.data(*x);
                self.accumulate(grads, *x, |dx| {
                    for ((d, &gi), &xv) in dx.iter_mut().zip(g).zip(xd) {
                        *d = *d + if xv > T::zero() { gi } else { gi * *slope };
                    }
                });
            }
            Op::Sigmoid(x) => self.accumulate(grads, *x, |dx| {
                for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(out) {
                    *d = *d + gi * y * (T::one() - y);
                }
            }),
            Op::Tanh(x) => self.accumulate(grads, *x, |dx| {
                for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(out) {
                    *d = *d + gi * (T::one() - y * y);
                }
            }),
            Op::Softplus(x) => {
                let xd = self.data(*x);
                self.accumulate(grads, *x, |dx| {
                    for ((d, &gi), &xv) in dx.iter_mut().zip(g).zip(xd) {
                        *d = *d + gi * sigmoid(xv);
                    }
                });
            }
            Op::Exp(x) => self.accumulate(grads, *x, |dx| {
                for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(out) {
                    *d = *d + gi * y;
                }
            }),
            Op::Square(x) => {
                let xd = self.data(*x);
                self.accumulate(grads, *x, |dx| {
                    for ((d, &gi), &xv) in dx.iter_mut().zip(g).zip(xd) {
                        *d = *d + gi * (xv + xv);
                    }
                });
            }
            Op::LnClamped { x, lo, hi } => {
                let xd = self.data(*x);
                self.accumulate(grads, *x, |dx| {
                    for ((d, &gi), &xv) in dx.iter_mut().zip(g).zip(xd) {
                        if xv >= *lo && xv <= *hi {
                            *d = *d + gi / xv;
                        }
                    }
                });
            }
            Op::Affine { x, scale } => self.accumulate(grads, *x, |dx| {
                dx.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi * *scale)
            }),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| da.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi));
                self.accumulate(grads, *b, |db| db.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |da| da.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi));
                self.accumulate(grads, *b, |db| db.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d - gi));
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let dot = g.iter().zip(out).map(|(&a, &b)| a * b).sum::<T>();
                let cols = v.len();
                self.accumulate(grads, *w, |dw| {
                    for (r, &ur) in u.iter().enumerate() {
                        let row = r * cols..(r + 1) * cols;
                        for ((d, &gi), &vj) in dw[row.clone()].iter_mut().zip(&g[row]).zip(v) {
                            *d = *d + (gi - dot * ur * vj) / *sigma;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |da| {
                    for ((d, &gi), &bv) in da.iter_mut().zip(g).zip(bd) {
                        *d = *d + gi * bv;
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, &gi), &av) in db.iter_mut().zip(g).zip(ad) {
                        *d = *d + gi * av;
                    }
                });
            }
            Op::Sum(x) => self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d = *d + g[0])),
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).len()).unwrap();
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d = *d + g[0] / n));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let plane = s[1] * s[2];
                let n = T::from_usize(plane).unwrap();
                self.accumulate(grads, *x, |dx| {
                    for (ch, &gi) in dx.chunks_mut(plane).zip(g) {
                        ch.iter_mut().for_each(|d| *d = *d + gi / n);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let seg = &g[offset..offset + len];
                    self.accumulate(grads, p, |dp| dp.iter_mut().zip(seg).for_each(|(d, &gi)| *d = *d + gi));
                    offset += len;
                }
            }
            Op::Broadcast { x, plane } => self.accumulate(grads, *x, |dx| {
                for (d, ch) in dx.iter_mut().zip(g.chunks(*plane)) {
                    *d = *d + ch.iter().copied().sum::<T>();
                }
            }),
            Op::Slice { x, start } => self.accumulate(grads, *x, |dx| {
                for (d, &gi) in dx[*start..*start + g.len()].iter_mut().zip(g) {
                    *d = *d + gi;
                }
            }),
            Op::Gather { x, index } => self.accumulate(grads, *x, |dx| {
                for (i, &gi) in index.iter().zip(g) {
                    if let Some(i) = i {
                        dx[*i] = dx[*i] + gi;
                    }
                }
            }),
            Op::Warp { patch, params, grid } => {
                let ps = self.shape(*patch);
                let pd = self.data(*params);
                let patch_ref = PatchRef {
                    data: self.data(*patch),
                    channels: ps[0],
                    side: ps[1],
                };
                let prm = [pd[0], pd[1], pd[2]];
                let mut d_patch = self
                    .needs_grad(*patch)
                    .then(|| vec![T::zero(); self.value(*patch).len()]);
                let dprm = warp_backward(patch_ref, prm, grid, g, d_patch.as_deref_mut());
                self.accumulate(grads, *params, |dp| {
                    for k in 0..3 {
                        dp[k] = dp[k] + dprm[k];
                    }
                });
                if let Some(dpatch) = d_patch {
                    self.accumulate(grads, *patch, |dp| {
                        dp.iter_mut().zip(&dpatch).for_each(|(d, &v)| *d = *d + v)
                    });
                }
            }
            Op::Paste { base, mask, class } => {
                let plane = self.value(*mask).len();
                let (bd, md) = (self.data(*base), self.data(*mask));
                self.accumulate(grads, *base, |db| {
                    for (dch, gch) in db.chunks_mut(plane).zip(g.chunks(plane)) {
                        for ((d, &gi), &m) in dch.iter_mut().zip(gch).zip(md) {
                            *d = *d + gi * (T::one() - m);
                        }
                    }
                });
                self.accumulate(grads, *mask, |dm| {
                    for (c, (bch, gch)) in bd.chunks(plane).zip(g.chunks(plane)).enumerate() {
                        for ((d, &gi), &b) in dm.iter_mut().zip(gch).zip(bch) {
                            let own = if c == *class { T::one() } else { T::zero() };
                            *d = *d + gi * (own - b);
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

/// One power-iteration step on `u` for the weight viewed as `rows x rest`:
/// `v = W^T u / |W^T u|`, `u = W v / |W v|`.
pub fn power_iteration<T: Real>(w: &[T], u: &mut [T]) {
    let rows = u.len();
    let cols = w.len() / rows;
    let mut v = vec![T::zero(); cols];
    for (r, &ur) in u.iter().enumerate() {
        for (vj, &wv) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *vj = *vj + ur * wv;
        }
    }
    normalize(&mut v);
    for (r, ur) in u.iter_mut().enumerate() {
        *ur = w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(&a, &b)| a * b).sum();
    }
    normalize(u);
}

fn normalize<T: Real>(x: &mut [T]) {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(1e-12));
    x.iter_mut().for_each(|v| *v = *v / n);
}

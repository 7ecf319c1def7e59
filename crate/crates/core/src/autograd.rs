//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! is a valid topological order for backpropagation. Gradients only flow into
//! nodes that require them; constants and frozen parameters are skipped.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln_1p, tanh};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn same(kernel: usize) -> Self {
        Self { stride: 1, pad: kernel / 2, groups: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulMap(Var, Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Upsample2x(Var),
    AvgPool2(Var),
    MaxPool2(Var, Vec<usize>),
    Concat(Vec<Var>),
    CenterCrop(Var),
    Gram(Var),
    Affine(Var, f64),
    Diff(Var, Axis),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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
        self.nodes.push(Node { value, op, requires_grad });
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last [`Graph::backward`] root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let value = conv_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), spec);
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(value, Op::Conv { input, weight, bias, spec }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::from_vec(va.shape(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `x * map` where `map` is `[N, 1, H, W]`, broadcast over channels.
    pub fn mul_map(&mut self, x: Var, map: Var) -> Var {
        let (vx, vm) = (self.value(x), self.value(map));
        let [n, c, h, w] = vx.shape();
        assert_eq!(vm.shape(), [n, 1, h, w], "mul_map shape mismatch");
        let hw = h * w;
        let mut data = vx.data().to_vec();
        for b in 0..n {
            let m = vm.plane(b, 0);
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for (d, mv) in data[base..base + hw].iter_mut().zip(m) {
                    *d *= mv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(map);
        self.push(Tensor::from_vec([n, c, h, w], data), Op::MulMap(x, map), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { v * slope });
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu(x, slope), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        let rg = self.rg(x);
        self.push(value, Op::Softplus(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        let rg = self.rg(x);
        self.push(value, Op::Abs(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(value, Op::Square(x), rg)
    }

    /// Mean over every element; the mean of an empty tensor is 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = if v.is_empty() { 0.0 } else { v.sum() / v.len() as f64 };
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Bilinear x2 upsampling with half-pixel centers.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let value = upsample_forward(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Upsample2x(x), rg)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let value = avg_pool_forward(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::AvgPool2(x), rg)
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (value, argmax) = max_pool_forward(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::MaxPool2(x, argmax), rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let [n, _, h, w] = self.value(parts[0]).shape();
        let hw = h * w;
        let total_c: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
        let mut data = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for &p in parts {
                let v = self.value(p);
                assert_eq!([v.shape()[0], v.shape()[2], v.shape()[3]], [n, h, w], "concat shape mismatch");
                data.extend_from_slice(v.item(b));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_vec([n, total_c, h, w], data), Op::Concat(parts.to_vec()), rg)
    }

    /// Centered `size x size` window of a `[O, I, K, K]` kernel.
    pub fn center_crop(&mut self, x: Var, size: usize) -> Var {
        let value = center_crop(self.value(x), size);
        let rg = self.rg(x);
        self.push(value, Op::CenterCrop(x), rg)
    }

    /// Per-item Gram matrix `F F^T / (C H W)` as `[N, 1, C, C]`.
    pub fn gram(&mut self, x: Var) -> Var {
        let value = gram_forward(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Gram(x), rg)
    }

    /// `scale * x + bias[c]`.
    pub fn affine(&mut self, x: Var, scale: f64, bias: &[f64]) -> Var {
        let v = self.value(x);
        let [n, c, h, w] = v.shape();
        assert_eq!(bias.len(), c);
        let hw = h * w;
        let mut data = Vec::with_capacity(v.len());
        for b in 0..n {
            for ch in 0..c {
                data.extend(v.plane(b, ch).iter().map(|x| scale * x + bias[ch]));
            }
        }
        debug_assert_eq!(data.len(), n * c * hw);
        let rg = self.rg(x);
        self.push(Tensor::from_vec([n, c, h, w], data), Op::Affine(x, scale), rg)
    }

    /// Forward difference along `axis`.
    pub fn diff(&mut self, x: Var, axis: Axis) -> Var {
        let value = diff_forward(self.value(x), axis);
        let rg = self.rg(x);
        self.push(value, Op::Diff(x, axis), rg)
    }

    /// Backpropagates from the scalar `root`. Previous gradients are discarded.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            self.grads = grads;
            return;
        }
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            // Intermediate gradients are dropped; only leaf gradients are kept.
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        self.grads = grads;
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { input, weight, bias, spec } => {
                let (dx, dw, db) = conv_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    *spec,
                    self.rg(*input),
                    self.rg(*weight),
                    bias.is_some_and(|b| self.rg(b)),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, db) {
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::MulMap(x, map) => {
                let (vx, vm) = (self.value(*x), self.value(*map));
                let [n, c, h, w] = vx.shape();
                let hw = h * w;
                if self.rg(*x) {
                    let mut dx = g.data().to_vec();
                    for b in 0..n {
                        let m = vm.plane(b, 0);
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            for (d, mv) in dx[base..base + hw].iter_mut().zip(m) {
                                *d *= mv;
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec([n, c, h, w], dx));
                }
                if self.rg(*map) {
                    let mut dm = vec![0.0; n * hw];
                    for b in 0..n {
                        for ch in 0..c {
                            let (gp, xp) = (g.plane(b, ch), vx.plane(b, ch));
                            for (k, d) in dm[b * hw..(b + 1) * hw].iter_mut().enumerate() {
                                *d += gp[k] * xp[k];
                            }
                        }
                    }
                    accumulate(grads, *map, Tensor::from_vec([n, 1, h, w], dm));
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x);
                let data = vx.data().iter().zip(g.data()).map(|(&x, &g)| if x > 0.0 { g } else { g * slope }).collect();
                accumulate(grads, *x, Tensor::from_vec(vx.shape(), data));
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let data = y.data().iter().zip(g.data()).map(|(&y, &g)| g * (1.0 - y * y)).collect();
                accumulate(grads, *x, Tensor::from_vec(y.shape(), data));
            }
            Op::Softplus(x) => {
                let vx = self.value(*x);
                let data = vx.data().iter().zip(g.data()).map(|(&x, &g)| g * sigmoid(x)).collect();
                accumulate(grads, *x, Tensor::from_vec(vx.shape(), data));
            }
            Op::Abs(x) => {
                let vx = self.value(*x);
                let data = vx
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else if x < 0.0 { -g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(vx.shape(), data));
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                let data = vx.data().iter().zip(g.data()).map(|(&x, &g)| 2.0 * x * g).collect();
                accumulate(grads, *x, Tensor::from_vec(vx.shape(), data));
            }
            Op::Mean(x) => {
                let vx = self.value(*x);
                if !vx.is_empty() {
                    accumulate(grads, *x, Tensor::full(vx.shape(), g.data()[0] / vx.len() as f64));
                }
            }
            Op::Upsample2x(x) => accumulate(grads, *x, upsample_backward(self.value(*x).shape(), g)),
            Op::AvgPool2(x) => accumulate(grads, *x, avg_pool_backward(self.value(*x).shape(), g)),
            Op::MaxPool2(x, argmax) => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d[src] += gv;
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let [n, _, h, w] = g.shape();
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let item = g.item(b);
                            data.extend_from_slice(&item[offset * hw..(offset + c) * hw]);
                        }
                        accumulate(grads, p, Tensor::from_vec([n, c, h, w], data));
                    }
                    offset += c;
                }
            }
            Op::CenterCrop(x) => accumulate(grads, *x, center_crop_backward(self.value(*x).shape(), g)),
            Op::Gram(x) => accumulate(grads, *x, gram_backward(self.value(*x), g)),
            Op::Affine(x, s) => accumulate(grads, *x, g.map(|v| v * s)),
            Op::Diff(x, axis) => accumulate(grads, *x, diff_backward(self.value(*x).shape(), g, *axis)),
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + ln_1p(exp(-x.abs()))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `c = beta * c + a * b` for strided matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: output out of bounds");
    // SAFETY: the extents of all three strided views were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin_g: usize,
    cout_g: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(x: [usize; 4], wt: [usize; 4], spec: ConvSpec) -> Self {
        let [_, cin, h, w] = x;
        let [cout, cin_g, kh, kw] = wt;
        let g = spec.groups;
        assert!(g >= 1 && cin % g == 0 && cout % g == 0, "conv groups {} incompatible with {}->{}", g, cin, cout);
        assert_eq!(cin / g, cin_g, "conv weight expects {} input channels per group, input has {}", cin_g, cin / g);
        assert!(h + 2 * spec.pad >= kh && w + 2 * spec.pad >= kw, "conv kernel larger than padded input");
        let oh = (h + 2 * spec.pad - kh) / spec.stride + 1;
        let ow = (w + 2 * spec.pad - kw) / spec.stride + 1;
        Self { cin_g, cout_g: cout / g, h, w, kh, kw, oh, ow, stride: spec.stride, pad: spec.pad }
    }

    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unrolls the channels of one group into `[K, P]`.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (h, w, p) = (self.h, self.w, self.p());
        for c in 0..self.cin_g {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let dst = &mut col[row..row + p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let (lo, hi) = self.valid_cols(kx);
                        if lo == hi {
                            line.fill(0.0);
                            continue;
                        }
                        line[..lo].fill(0.0);
                        if self.stride == 1 {
                            let s0 = lo + kx - self.pad;
                            line[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        } else {
                            for (ox, d) in (lo..hi).zip(&mut line[lo..hi]) {
                                *d = src[ox * self.stride + kx - self.pad];
                            }
                        }
                        line[hi..].fill(0.0);
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (h, w, p) = (self.h, self.w, self.p());
        for c in 0..self.cin_g {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let src = &col[row..row + p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let (lo, hi) = self.valid_cols(kx);
                        if lo == hi {
                            continue;
                        }
                        if self.stride == 1 {
                            let s0 = lo + kx - self.pad;
                            for (d, &v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&line[lo..hi]) {
                                *d += v;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox * self.stride + kx - self.pad] += line[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output columns `lo..hi` whose input column for kernel offset `kx` lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let (s, pad) = (self.stride, self.pad);
        let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(s) };
        let hi = if self.w + pad > kx { (self.w + pad - kx - 1) / s + 1 } else { 0 };
        let hi = hi.min(self.ow);
        (lo.min(hi), hi)
    }
}

fn conv_forward(x: &Tensor, wt: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Tensor {
    let geo = ConvGeom::new(x.shape(), wt.shape(), spec);
    let [n, cin, h, w] = x.shape();
    let cout = wt.shape()[0];
    let (k, p) = (geo.k(), geo.p());
    let mut out = Tensor::zeros([n, cout, geo.oh, geo.ow]);
    let mut col = if geo.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for b in 0..n {
        let item = x.item(b);
        for g in 0..spec.groups {
            let xg = &item[g * geo.cin_g * h * w..(g + 1) * geo.cin_g * h * w];
            let rhs: &[f64] = if geo.is_pointwise() {
                xg
            } else {
                geo.im2col(xg, &mut col);
                &col
            };
            let wg = &wt.data()[g * geo.cout_g * k..(g + 1) * geo.cout_g * k];
            let start = (b * cout + g * geo.cout_g) * p;
            let dst = &mut out.data_mut()[start..start + geo.cout_g * p];
            gemm(geo.cout_g, k, p, wg, (k, 1), rhs, (p, 1), 0.0, dst, (p, 1));
        }
    }
    if let Some(bias) = bias {
        assert_eq!(bias.len(), cout, "bias length");
        let data = out.data_mut();
        for b in 0..n {
            for o in 0..cout {
                let bv = bias.data()[o];
                for v in &mut data[(b * cout + o) * p..(b * cout + o + 1) * p] {
                    *v += bv;
                }
            }
        }
    }
    let _ = cin;
    out
}

fn conv_backward(
    x: &Tensor,
    wt: &Tensor,
    gy: &Tensor,
    spec: ConvSpec,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let geo = ConvGeom::new(x.shape(), wt.shape(), spec);
    let [n, _, h, w] = x.shape();
    let cout = wt.shape()[0];
    let (k, p) = (geo.k(), geo.p());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(wt.shape()));
    let mut col = vec![0.0; k * p];
    let mut dcol = if need_dx && !geo.is_pointwise() { vec![0.0; k * p] } else { Vec::new() };
    let gsz = geo.cin_g * h * w;
    for b in 0..n {
        let item = x.item(b);
        for g in 0..spec.groups {
            let gstart = (b * cout + g * geo.cout_g) * p;
            let dy = &gy.data()[gstart..gstart + geo.cout_g * p];
            let wg_range = g * geo.cout_g * k..(g + 1) * geo.cout_g * k;
            if let Some(dw) = dw.as_mut() {
                let xg = &item[g * gsz..(g + 1) * gsz];
                let rhs: &[f64] = if geo.is_pointwise() {
                    xg
                } else {
                    geo.im2col(xg, &mut col);
                    &col
                };
                // dW[cout_g, K] += dY[cout_g, P] * col^T
                gemm(geo.cout_g, p, k, dy, (p, 1), rhs, (1, p), 1.0, &mut dw.data_mut()[wg_range.clone()], (k, 1));
            }
            if let Some(dx) = dx.as_mut() {
                let wg = &wt.data()[wg_range.clone()];
                let dxg = &mut dx.data_mut()[b * x.item_len() + g * gsz..b * x.item_len() + (g + 1) * gsz];
                if geo.is_pointwise() {
                    // dX[cin_g, P] += W^T * dY
                    gemm(k, geo.cout_g, p, wg, (1, k), dy, (p, 1), 1.0, dxg, (p, 1));
                } else {
                    gemm(k, geo.cout_g, p, wg, (1, k), dy, (p, 1), 0.0, &mut dcol, (p, 1));
                    geo.col2im(&dcol, dxg);
                }
            }
        }
    }
    let db = need_db.then(|| {
        let mut db = vec![0.0; cout];
        for b in 0..n {
            for (o, d) in db.iter_mut().enumerate() {
                *d += gy.data()[(b * cout + o) * p..(b * cout + o + 1) * p].iter().sum::<f64>();
            }
        }
        Tensor::from_vec([cout, 1, 1, 1], db)
    });
    (dx, dw, db)
}

/// Source index pair and blend weight for each output coordinate.
fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (crate::math::floor(src) as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn upsample_forward(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ty, tx) = (bilinear_taps(h), bilinear_taps(w));
    let mut out = Vec::with_capacity(n * c * 4 * h * w);
    for b in 0..n {
        for ch in 0..c {
            let plane = x.plane(b, ch);
            for &(y0, y1, ly) in &ty {
                for &(x0, x1, lx) in &tx {
                    let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                    let bot = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                    out.push(top * (1.0 - ly) + bot * ly);
                }
            }
        }
    }
    Tensor::from_vec([n, c, 2 * h, 2 * w], out)
}

fn upsample_backward(shape: [usize; 4], g: &Tensor) -> Tensor {
    let [n, c, h, w] = shape;
    let (ty, tx) = (bilinear_taps(h), bilinear_taps(w));
    let mut dx = Tensor::zeros(shape);
    let ow = 2 * w;
    for b in 0..n {
        for ch in 0..c {
            let gp = g.plane(b, ch);
            let base = (b * c + ch) * h * w;
            let d = &mut dx.data_mut()[base..base + h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let gv = gp[oy * ow + ox];
                    d[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                    d[y0 * w + x1] += gv * (1.0 - ly) * lx;
                    d[y1 * w + x0] += gv * ly * (1.0 - lx);
                    d[y1 * w + x1] += gv * ly * lx;
                }
            }
        }
    }
    dx
}

fn avg_pool_forward(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let p = x.plane(b, ch);
            for y in 0..oh {
                for xx in 0..ow {
                    let (r0, r1) = (2 * y * w, (2 * y + 1) * w);
                    out.push(0.25 * (p[r0 + 2 * xx] + p[r0 + 2 * xx + 1] + p[r1 + 2 * xx] + p[r1 + 2 * xx + 1]));
                }
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}

fn avg_pool_backward(shape: [usize; 4], g: &Tensor) -> Tensor {
    let [n, c, h, w] = shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(shape);
    for b in 0..n {
        for ch in 0..c {
            let gp = g.plane(b, ch);
            let base = (b * c + ch) * h * w;
            let d = &mut dx.data_mut()[base..base + h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let v = 0.25 * gp[y * ow + xx];
                    for (dy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        d[(2 * y + dy) * w + 2 * xx + dxx] += v;
                    }
                }
            }
        }
    }
    dx
}

fn max_pool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            let p = &x.data()[base..base + h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (2 * y) * w + 2 * xx;
                    for (dy, dxx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (2 * y + dy) * w + 2 * xx + dxx;
                        if p[i] > p[best] {
                            best = i;
                        }
                    }
                    out.push(p[best]);
                    arg.push(base + best);
                }
            }
        }
    }
    (Tensor::from_vec([n, c, oh, ow], out), arg)
}

pub(crate) fn center_crop(x: &Tensor, size: usize) -> Tensor {
    let [o, i, kh, kw] = x.shape();
    assert!(size <= kh && size <= kw && (kh - size) % 2 == 0, "cannot center-crop {}x{} to {}", kh, kw, size);
    let (oy, ox) = ((kh - size) / 2, (kw - size) / 2);
    let mut data = Vec::with_capacity(o * i * size * size);
    for a in 0..o {
        for b in 0..i {
            let plane = x.plane(a, b);
            for y in 0..size {
                data.extend_from_slice(&plane[(oy + y) * kw + ox..(oy + y) * kw + ox + size]);
            }
        }
    }
    Tensor::from_vec([o, i, size, size], data)
}

fn center_crop_backward(shape: [usize; 4], g: &Tensor) -> Tensor {
    let [o, i, kh, kw] = shape;
    let size = g.shape()[2];
    let (oy, ox) = ((kh - size) / 2, (kw - size) / 2);
    let mut dx = Tensor::zeros(shape);
    for a in 0..o {
        for b in 0..i {
            let gp = g.plane(a, b);
            let base = (a * i + b) * kh * kw;
            for y in 0..size {
                let row = base + (oy + y) * kw + ox;
                dx.data_mut()[row..row + size].copy_from_slice(&gp[y * size..(y + 1) * size]);
            }
        }
    }
    dx
}

fn gram_forward(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let norm = 1.0 / (c * hw) as f64;
    let mut out = Tensor::zeros([n, 1, c, c]);
    for b in 0..n {
        let f = x.item(b);
        let dst = &mut out.data_mut()[b * c * c..(b + 1) * c * c];
        gemm(c, hw, c, f, (hw, 1), f, (1, hw), 0.0, dst, (c, 1));
        for v in dst.iter_mut() {
            *v *= norm;
        }
    }
    out
}

fn gram_backward(x: &Tensor, g: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let norm = 1.0 / (c * hw) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut sym = vec![0.0; c * c];
    for b in 0..n {
        let gb = g.item(b);
        for i in 0..c {
            for j in 0..c {
                sym[i * c + j] = (gb[i * c + j] + gb[j * c + i]) * norm;
            }
        }
        let f = x.item(b);
        let dst = &mut dx.data_mut()[b * c * hw..(b + 1) * c * hw];
        gemm(c, c, hw, &sym, (c, 1), f, (hw, 1), 0.0, dst, (hw, 1));
    }
    dx
}

fn diff_forward(x: &Tensor, axis: Axis) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = match axis {
        Axis::X => (h, w.saturating_sub(1)),
        Axis::Y => (h.saturating_sub(1), w),
    };
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let p = x.plane(b, ch);
            for y in 0..oh {
                for xx in 0..ow {
                    let here = p[y * w + xx];
                    let next = match axis {
                        Axis::X => p[y * w + xx + 1],
                        Axis::Y => p[(y + 1) * w + xx],
                    };
                    out.push(next - here);
                }
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}

fn diff_backward(shape: [usize; 4], g: &Tensor, axis: Axis) -> Tensor {
    let [n, c, h, w] = shape;
    let [_, _, oh, ow] = g.shape();
    let mut dx = Tensor::zeros(shape);
    for b in 0..n {
        for ch in 0..c {
            let gp = g.plane(b, ch);
            let base = (b * c + ch) * h * w;
            let d = &mut dx.data_mut()[base..base + h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let gv = gp[y * ow + xx];
                    d[y * w + xx] -= gv;
                    match axis {
                        Axis::X => d[y * w + xx + 1] += gv,
                        Axis::Y => d[(y + 1) * w + xx] += gv,
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_from_seed};

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        Tensor::from_fn(shape, |_| normal(&mut rng))
    }

    /// Direct nested-loop convolution used as an oracle for the im2col path.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, spec: ConvSpec) -> Tensor {
        let [n, cin, h, wd] = x.shape();
        let [cout, cin_g, kh, kw] = w.shape();
        let cout_g = cout / spec.groups;
        let oh = (h + 2 * spec.pad - kh) / spec.stride + 1;
        let ow = (wd + 2 * spec.pad - kw) / spec.stride + 1;
        let _ = cin;
        Tensor::from_fn([n, cout, oh, ow], |[bi, o, oy, ox]| {
            let g = o / cout_g;
            let mut acc = b.data()[o];
            for ci in 0..cin_g {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += w.at([o, ci, ky, kx]) * x.at([bi, g * cin_g + ci, iy as usize, ix as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_naive_loops() {
        for (spec, k, cin, cout) in [
            (ConvSpec { stride: 1, pad: 1, groups: 1 }, 3, 3, 4),
            (ConvSpec { stride: 2, pad: 1, groups: 1 }, 3, 2, 3),
            (ConvSpec { stride: 1, pad: 0, groups: 2 }, 1, 4, 6),
            (ConvSpec { stride: 1, pad: 2, groups: 2 }, 5, 4, 4),
            (ConvSpec { stride: 1, pad: 3, groups: 1 }, 7, 2, 1),
            (ConvSpec { stride: 1, pad: 9, groups: 1 }, 19, 2, 2),
            (ConvSpec { stride: 2, pad: 5, groups: 1 }, 11, 1, 2),
        ] {
            let x = random([2, cin, 7, 6], 1);
            let w = random([cout, cin / spec.groups, k, k], 2);
            let b = random([cout, 1, 1, 1], 3);
            let fast = conv_forward(&x, &w, Some(&b), spec);
            let slow = naive_conv(&x, &w, &b, spec);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{:?}", spec);
        }
    }

    /// Every op's gradient against central finite differences of `sum(op(x) * r)`.
    fn check_grad(build: impl Fn(&mut Graph, Var) -> Var, x: Tensor) {
        let r = random(
            {
                let mut g = Graph::new();
                let v = g.constant(x.clone());
                let out = build(&mut g, v);
                g.value(out).shape()
            },
            99,
        );
        let eval = |x: &Tensor| -> f64 {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let out = build(&mut g, v);
            g.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let mut g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let out = build(&mut g, v);
        let rv = g.constant(r.clone());
        let prod = g.mul_map_full(out, rv);
        let s = g.mean(prod);
        let n = r.len() as f64;
        g.backward(s);
        let analytic = g.grad(v).unwrap().clone();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * eps) / n;
            let an = analytic.data()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "index {}: fd {} vs analytic {}", i, fd, an);
        }
    }

    impl Graph {
        fn mul_map_full(&mut self, a: Var, b: Var) -> Var {
            // Elementwise product built from existing ops: ((a+b)^2 - (a-b)^2) / 4.
            let s = self.add(a, b);
            let d = self.sub(a, b);
            let s2 = self.square(s);
            let d2 = self.square(d);
            let diff = self.sub(s2, d2);
            self.scale(diff, 0.25)
        }
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let x = random([2, 4, 4, 6], 5);
        let w = random([4, 2, 3, 3], 6);
        check_grad(
            |g, v| {
                let wv = g.constant(w.clone());
                g.conv2d(v, wv, None, ConvSpec { stride: 2, pad: 1, groups: 2 })
            },
            x.clone(),
        );
        let xw = random([3, 2, 5, 5], 7);
        let input = random([1, 2, 6, 6], 8);
        check_grad(
            |g, v| {
                let xv = g.constant(input.clone());
                let cropped = g.center_crop(v, 3);
                g.conv2d(xv, cropped, None, ConvSpec::same(3))
            },
            xw,
        );
        let wide = random([2, 4, 9, 9], 14);
        check_grad(
            |g, v| {
                let wv = g.constant(wide.clone());
                g.conv2d(v, wv, None, ConvSpec::same(9))
            },
            x.clone(),
        );
        check_grad(|g, v| g.upsample2x(v), x.clone());
        check_grad(|g, v| g.avg_pool2(v), x.clone());
        check_grad(|g, v| g.max_pool2(v), x.clone());
        check_grad(|g, v| g.gram(v), x.clone());
        check_grad(|g, v| g.tanh(v), x.clone());
        check_grad(|g, v| g.softplus(v), x.clone());
        check_grad(|g, v| g.leaky_relu(v, 0.2), x.clone());
        check_grad(|g, v| g.diff(v, Axis::X), x.clone());
        check_grad(|g, v| g.diff(v, Axis::Y), x.clone());
        check_grad(|g, v| g.affine(v, 1.7, &[0.1, 0.2, 0.3, 0.4]), x.clone());
        check_grad(
            |g, v| {
                let c = g.constant(random([2, 1, 4, 6], 11));
                g.concat(&[v, c, v])
            },
            x.clone(),
        );
        let map = random([2, 1, 4, 6], 12);
        check_grad(
            |g, v| {
                let m = g.constant(map.clone());
                g.mul_map(v, m)
            },
            x.clone(),
        );
        let feat = random([2, 4, 4, 6], 13);
        check_grad(
            |g, m| {
                let f = g.constant(feat.clone());
                g.mul_map(f, m)
            },
            map,
        );
    }

    #[test]
    fn frozen_inputs_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(2.0), true);
        let b = g.leaf(Tensor::scalar(3.0), false);
        let s = g.add(a, b);
        let sq = g.square(s);
        g.backward(sq);
        assert_eq!(g.grad(a).unwrap().data(), &[10.0]);
        assert!(g.grad(b).is_none());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
    }
}

//! Reverse-mode differentiation over a linear operation record.
//!
//! Every backward rule is itself expressed as tape operations, so gradients
//! can be differentiated again (`create_graph`). The critic's gradient
//! penalty relies on this.

use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{self, ConvGeom, GaussianFilter};
use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Arc<Tensor<T>>),
    LeakyRelu(Var, f64),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Recip(Var),
    Concat(Var, Var),
    SliceChannels { x: Var, start: usize },
    PadChannels { x: Var, start: usize },
    Sum(Var),
    Expand(Var),
    SumPerSample(Var),
    ExpandPerSample(Var),
    SumChannels(Var),
    ExpandChannels(Var),
    Conv { x: Var, k: Var, g: ConvGeom },
    ConvInputGrad { gy: Var, k: Var, g: ConvGeom },
    ConvWeightGrad { x: Var, gy: Var, g: ConvGeom },
    Upsample(Var, usize),
    SumPool(Var, usize),
    Gaussian { x: Var, filter: Arc<GaussianFilter>, transpose: bool },
    Reshape(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Concat(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | MulConst(a, _) | LeakyRelu(a, _) | Abs(a) | Square(a) | Sqrt(a)
            | Recip(a) | Sum(a) | Expand(a) | SumPerSample(a) | ExpandPerSample(a) | SumChannels(a)
            | ExpandChannels(a) | Upsample(a, _) | SumPool(a, _) | Reshape(a) => vec![*a],
            SliceChannels { x, .. } | PadChannels { x, .. } | Gaussian { x, .. } => vec![*x],
            Conv { x, k, .. } => vec![*x, *k],
            ConvInputGrad { gy, k, .. } => vec![*gy, *k],
            ConvWeightGrad { x, gy, .. } => vec![*x, *gy],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss, keyed by leaf variable.
#[derive(Debug)]
pub struct Gradients<T> {
    map: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.map.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.map.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Single-threaded operation record; one training step owns one tape.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let st = T::from_f64(s);
        self.unary(a, Op::Scale(a, s), |v| v * st)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let st = T::from_f64(s);
        self.unary(a, Op::AddScalar(a), |v| v + st)
    }

    /// Elementwise product with a tensor that is not differentiated.
    pub fn mul_const(&mut self, a: Var, c: Arc<Tensor<T>>) -> Result<Var> {
        let v = self.value(a).mul(&c)?;
        Ok(self.push(v, Op::MulConst(a, c), &[a]))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.unary(a, Op::LeakyRelu(a, slope), |v| if v >= T::zero() { v } else { v * s })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |v| v.abs())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |v| v * v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |v| v.sqrt())
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |v| v.recip())
    }

    /// Channel-axis concatenation, `a` first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n(), sa.h(), sa.w()) != (sb.n(), sb.h(), sb.w()) {
            return Err(Error::shape("concat", sa, sb));
        }
        let out_s = Shape::new(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
        let mut data = Vec::with_capacity(out_s.numel());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        for n in 0..sa.n() {
            data.extend_from_slice(&va[n * sa.item_len()..(n + 1) * sa.item_len()]);
            data.extend_from_slice(&vb[n * sb.item_len()..(n + 1) * sb.item_len()]);
        }
        let v = Tensor::from_vec(out_s, data)?;
        Ok(self.push(v, Op::Concat(a, b), &[a, b]))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.c() {
            return Err(Error::InvalidShape {
                op: "slice_channels",
                detail: format!("channels {start}..{} of {s}", start + len),
            });
        }
        let out_s = Shape::new(s.n(), len, s.h(), s.w());
        let mut data = Vec::with_capacity(out_s.numel());
        let src = self.value(x).data();
        for n in 0..s.n() {
            let base = n * s.item_len() + start * s.plane();
            data.extend_from_slice(&src[base..base + len * s.plane()]);
        }
        let v = Tensor::from_vec(out_s, data)?;
        Ok(self.push(v, Op::SliceChannels { x, start }, &[x]))
    }

    fn pad_channels(&mut self, x: Var, start: usize, total: usize) -> Var {
        let s = self.shape(x);
        let out_s = Shape::new(s.n(), total, s.h(), s.w());
        let mut out = Tensor::zeros(out_s);
        let src = self.value(x).data();
        for n in 0..s.n() {
            let dst = n * out_s.item_len() + start * s.plane();
            out.data_mut()[dst..dst + s.item_len()]
                .copy_from_slice(&src[n * s.item_len()..(n + 1) * s.item_len()]);
        }
        self.push(out, Op::PadChannels { x, start }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    fn expand(&mut self, x: Var, shape: Shape) -> Var {
        let v = Tensor::full(shape, self.value(x).item());
        self.push(v, Op::Expand(x), &[x])
    }

    /// Per-batch-item sum, `N×C×H×W → N×1×1×1`.
    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let data = self
            .value(x)
            .data()
            .chunks(s.item_len().max(1))
            .map(|c| c.iter().copied().sum::<T>())
            .collect();
        let v = Tensor::from_vec(Shape::new(s.n(), 1, 1, 1), data).expect("one value per item");
        self.push(v, Op::SumPerSample(x), &[x])
    }

    fn expand_per_sample(&mut self, x: Var, shape: Shape) -> Var {
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(shape.numel());
        for &v in src {
            data.extend(std::iter::repeat(v).take(shape.item_len()));
        }
        let v = Tensor::from_vec(shape, data).expect("per-sample expansion");
        self.push(v, Op::ExpandPerSample(x), &[x])
    }

    /// Sum over batch and space for each channel; result takes the shape `like`.
    fn sum_channels(&mut self, x: Var, like: Shape) -> Var {
        let s = self.shape(x);
        let mut acc = vec![T::zero(); s.c()];
        for (i, plane) in self.value(x).data().chunks(s.plane()).enumerate() {
            let a = &mut acc[i % s.c()];
            *a = plane.iter().fold(*a, |a, &v| a + v);
        }
        let v = Tensor::from_vec(like, acc).expect("one value per channel");
        self.push(v, Op::SumChannels(x), &[x])
    }

    /// Broadcast a per-channel vector (any shape with `C` elements) to `shape`.
    fn expand_channels(&mut self, b: Var, shape: Shape) -> Var {
        let mut v = Tensor::zeros(shape);
        kernels::add_channel_bias_inplace(&mut v, self.value(b).data());
        self.push(v, Op::ExpandChannels(b), &[b])
    }

    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x);
        if self.value(bias).len() != s.c() {
            return Err(Error::shape("channel bias", s, self.shape(bias)));
        }
        let e = self.expand_channels(bias, s);
        self.add(x, e)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let g = ConvGeom::new(stride, padding);
        let v = kernels::conv2d_nobias(self.value(x), self.value(k), g)?;
        let y = self.push(v, Op::Conv { x, k, g }, &[x, k]);
        match bias {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    fn conv_input_grad(&mut self, gy: Var, k: Var, g: ConvGeom, in_s: Shape) -> Result<Var> {
        let v = kernels::conv_input_grad(self.value(gy), self.value(k), g, in_s)?;
        Ok(self.push(v, Op::ConvInputGrad { gy, k, g }, &[gy, k]))
    }

    fn conv_weight_grad(&mut self, x: Var, gy: Var, g: ConvGeom, k_s: Shape) -> Result<Var> {
        let v = kernels::conv_weight_grad(self.value(x), self.value(gy), g, k_s)?;
        Ok(self.push(v, Op::ConvWeightGrad { x, gy, g }, &[x, gy]))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let v = kernels::upsample_nearest(self.value(x), factor)?;
        Ok(self.push(v, Op::Upsample(x, factor), &[x]))
    }

    pub fn sum_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let v = kernels::sum_pool(self.value(x), factor)?;
        Ok(self.push(v, Op::SumPool(x, factor), &[x]))
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.sum_pool(x, factor)?;
        Ok(self.scale(s, 1.0 / (factor * factor) as f64))
    }

    pub fn gaussian(&mut self, x: Var, filter: &Arc<GaussianFilter>) -> Var {
        self.gaussian_op(x, filter.clone(), false)
    }

    fn gaussian_op(&mut self, x: Var, filter: Arc<GaussianFilter>, transpose: bool) -> Var {
        let v = if transpose {
            filter.apply_transpose(self.value(x))
        } else {
            filter.apply(self.value(x))
        };
        self.push(v, Op::Gaussian { x, filter, transpose }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Vector-Jacobian products of node `out` for every input that requires a gradient.
    fn vjp(&mut self, out: Var, g: Var, needed: &[bool]) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[out.0].op.clone();
        let rg = |_: &Self, v: Var| needed[v.0];
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(self, a) {
                    res.push((a, g));
                }
                if rg(self, b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if rg(self, a) {
                    res.push((a, g));
                }
                if rg(self, b) {
                    res.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if rg(self, a) {
                    res.push((a, self.mul(g, b)?));
                }
                if rg(self, b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, s) => res.push((a, self.scale(g, s))),
            Op::AddScalar(a) => res.push((a, g)),
            Op::MulConst(a, c) => res.push((a, self.mul_const(g, c)?)),
            Op::LeakyRelu(a, slope) => {
                let s = T::from_f64(slope);
                let mask = self.value(a).map(|v| if v >= T::zero() { T::one() } else { s });
                res.push((a, self.mul_const(g, Arc::new(mask))?));
            }
            Op::Abs(a) => {
                let sign = self.value(a).map(|v| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                res.push((a, self.mul_const(g, Arc::new(sign))?));
            }
            Op::Square(a) => {
                let two_a = self.scale(a, 2.0);
                res.push((a, self.mul(g, two_a)?));
            }
            Op::Sqrt(a) => {
                let r = self.recip(out);
                let half_r = self.scale(r, 0.5);
                res.push((a, self.mul(g, half_r)?));
            }
            Op::Recip(a) => {
                let sq = self.square(out);
                let neg = self.scale(sq, -1.0);
                res.push((a, self.mul(g, neg)?));
            }
            Op::Concat(a, b) => {
                let ca = self.shape(a).c();
                let cb = self.shape(b).c();
                if rg(self, a) {
                    res.push((a, self.slice_channels(g, 0, ca)?));
                }
                if rg(self, b) {
                    res.push((b, self.slice_channels(g, ca, cb)?));
                }
            }
            Op::SliceChannels { x, start } => {
                let total = self.shape(x).c();
                res.push((x, self.pad_channels(g, start, total)));
            }
            Op::PadChannels { x, start } => {
                let len = self.shape(x).c();
                res.push((x, self.slice_channels(g, start, len)?));
            }
            Op::Sum(x) => {
                let s = self.shape(x);
                res.push((x, self.expand(g, s)));
            }
            Op::Expand(x) => res.push((x, self.sum(g))),
            Op::SumPerSample(x) => {
                let s = self.shape(x);
                res.push((x, self.expand_per_sample(g, s)));
            }
            Op::ExpandPerSample(x) => res.push((x, self.sum_per_sample(g))),
            Op::SumChannels(x) => {
                let s = self.shape(x);
                res.push((x, self.expand_channels(g, s)));
            }
            Op::ExpandChannels(b) => {
                let s = self.shape(b);
                res.push((b, self.sum_channels(g, s)));
            }
            Op::Conv { x, k, g: geom } => {
                if rg(self, x) {
                    let s = self.shape(x);
                    res.push((x, self.conv_input_grad(g, k, geom, s)?));
                }
                if rg(self, k) {
                    let s = self.shape(k);
                    res.push((k, self.conv_weight_grad(x, g, geom, s)?));
                }
            }
            Op::ConvInputGrad { gy, k, g: geom } => {
                if rg(self, gy) {
                    res.push((gy, self.conv2d(g, k, None, geom.stride, geom.padding)?));
                }
                if rg(self, k) {
                    let s = self.shape(k);
                    res.push((k, self.conv_weight_grad(g, gy, geom, s)?));
                }
            }
            Op::ConvWeightGrad { x, gy, g: geom } => {
                if rg(self, gy) {
                    res.push((gy, self.conv2d(x, g, None, geom.stride, geom.padding)?));
                }
                if rg(self, x) {
                    let s = self.shape(x);
                    res.push((x, self.conv_input_grad(gy, g, geom, s)?));
                }
            }
            Op::Upsample(x, f) => res.push((x, self.sum_pool(g, f)?)),
            Op::SumPool(x, f) => res.push((x, self.upsample_nearest(g, f)?)),
            Op::Gaussian { x, filter, transpose } => {
                res.push((x, self.gaussian_op(g, filter, !transpose)))
            }
            Op::Reshape(x) => {
                let s = self.shape(x);
                res.push((x, self.reshape(g, s)?));
            }
        }
        Ok(res)
    }

    /// Marks nodes below `end` that require a gradient and depend on some `wrt` variable.
    fn depends_on(&self, wrt: &[Var], end: usize) -> Vec<bool> {
        let mut needed = vec![false; end];
        for v in wrt {
            if v.0 < end && self.nodes[v.0].requires_grad {
                needed[v.0] = true;
            }
        }
        for i in 0..end {
            if needed[i] || !self.nodes[i].requires_grad {
                continue;
            }
            needed[i] = self.nodes[i].op.inputs().iter().any(|v| needed[v.0]);
        }
        needed
    }

    /// Gradient variables of scalar `loss` with respect to `wrt`, recorded on this tape.
    ///
    /// The returned variables are ordinary tape nodes: when any of them
    /// depends on a `requires_grad` leaf it can be differentiated again.
    /// Inputs unreachable from the loss get a zero constant.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::NotScalar(ls));
        }
        let end = loss.0 + 1;
        let needed = self.depends_on(wrt, end);
        let mut grads: Vec<Option<Var>> = vec![None; end];
        grads[loss.0] = Some(self.constant(Tensor::ones(ls)));
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !needed[i] {
                continue;
            }
            for (input, contrib) in self.vjp(Var(i), g, &needed)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|&v| match grads.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let s = self.shape(v);
                    self.constant(Tensor::zeros(s))
                }
            })
            .collect())
    }

    /// Gradient values of `loss` for the given variables; backward nodes are discarded.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        let mark = self.nodes.len();
        let gvars = self.grad(loss, wrt)?;
        let out = gvars.iter().map(|g| self.nodes[g.0].value.clone()).collect();
        self.nodes.truncate(mark);
        Ok(out)
    }

    /// Gradients of `loss` for every `requires_grad` leaf. Backward nodes are
    /// discarded afterwards, leaving the tape as it was.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        let mark = self.nodes.len();
        let gvars = self.grad(loss, &leaves)?;
        let map = leaves
            .iter()
            .zip(&gvars)
            .map(|(&leaf, &g)| (leaf, self.nodes[g.0].value.clone()))
            .collect();
        self.nodes.truncate(mark);
        Ok(Gradients { map })
    }
}

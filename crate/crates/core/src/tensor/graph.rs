use std::sync::Arc;

use super::kernels::{self, ConvDims};
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{Scalar, CLAMP_EPS};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    /// `ln(max(x, 1e-8))`.
    Log,
    Sigmoid,
    Tanh,
    Square,
    Abs,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    /// Denominators with magnitude below 1e-8 are clamped to ±1e-8.
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Constant,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Affine {
        input: Var,
        scale: S,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d {
        image: Var,
        kernels: Arc<Tensor<S>>,
        dims: ConvDims,
    },
    Reduce {
        input: Var,
        map: Vec<usize>,
        scale: S,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Channel {
        input: Var,
        channel: usize,
    },
    StackChannels(Vec<Var>),
    GatherChannels {
        input: Var,
        channels: Vec<usize>,
    },
    Diff {
        input: Var,
        axis: usize,
    },
    AttentionFilter {
        center: Var,
        stride: Var,
        variance: Var,
    },
}

#[derive(Debug)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    tracked: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are recorded in evaluation order, so the tape is topologically sorted
/// by construction. A graph is built for a single forward pass and discarded.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar root with respect to every tracked ancestor.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// `None` when `v` does not influence the root or is a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves the gradient of `v` out, leaving `None`.
    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn clamp_denominator<S: Scalar>(b: S) -> (S, bool) {
    let eps = S::of(CLAMP_EPS);
    if b.abs() < eps {
        (if b < S::zero() { -eps } else { eps }, true)
    } else {
        (b, false)
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [m, n] => Some((m, n)),
        _ => None,
    }
}

fn as_image(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Some((h, w, c)),
        _ => None,
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, tracked: bool) -> Var {
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Differentiable input (a parameter or anything a gradient is wanted for).
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input that gradients never flow into.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, value: S) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Moves the value of `v` out, leaving a scalar zero behind. Only for
    /// leaves whose value is no longer needed, e.g. after `backward`.
    pub fn take_value(&mut self, v: Var) -> Tensor<S> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(S::zero()))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    // ---- elementwise -------------------------------------------------------

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let eps = S::of(CLAMP_EPS);
        let x = self.value(a);
        let out = match op {
            UnaryOp::Neg => x.map(|v| -v),
            UnaryOp::Exp => x.map(S::exp),
            UnaryOp::Log => x.map(|v| v.max(eps).ln()),
            UnaryOp::Sigmoid => x.map(sigmoid),
            UnaryOp::Tanh => x.map(S::tanh),
            UnaryOp::Square => x.map(|v| v * v),
            UnaryOp::Abs => x.map(S::abs),
            UnaryOp::Sqrt => x.map(|v| v.max(S::zero()).sqrt()),
        };
        let tracked = self.tracked(a);
        self.push(Op::Unary(op, a), out, tracked)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Log, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Abs, a)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sqrt, a)
    }

    /// Elementwise binary op. Shapes must match, or one side must hold a
    /// single element, which is broadcast.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (self.value(a), self.value(b));
        let shape = if xa.shape() == xb.shape() || xb.is_scalar() {
            xa.shape().to_vec()
        } else if xa.is_scalar() {
            xb.shape().to_vec()
        } else {
            return Err(Error::shape(xa.shape(), xb.shape()));
        };
        let n: usize = shape.iter().product();
        let (da, db) = (xa.data(), xb.data());
        let pick = |d: &[S], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let data = (0..n)
            .map(|i| {
                let (u, v) = (pick(da, i), pick(db, i));
                match op {
                    BinaryOp::Add => u + v,
                    BinaryOp::Sub => u - v,
                    BinaryOp::Mul => u * v,
                    BinaryOp::Div => u / clamp_denominator(v).0,
                }
            })
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Binary(op, a, b), Tensor::new(shape, data)?, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// `scale * a + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: S, shift: S) -> Var {
        let out = self.value(a).map(|v| scale * v + shift);
        let tracked = self.tracked(a);
        self.push(Op::Affine { input: a, scale }, out, tracked)
    }

    pub fn scale(&mut self, a: Var, scale: S) -> Var {
        self.affine(a, scale, S::zero())
    }

    /// Sum of several same-shaped terms.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("add_all needs at least one term"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    // ---- linear algebra and layout ----------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ((m, k), (k2, n)) = match (as_matrix(sa), as_matrix(sb)) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => return Err(Error::shape(sa, sb)),
        };
        debug_assert_eq!(k, k2);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new([m, n], data)?, tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.shape(a)).ok_or_else(|| {
            Error::invalid(format!("transpose needs a matrix, got {:?}", self.shape(a)))
        })?;
        let x = self.value(a).data();
        let data = (0..n * m).map(|idx| x[(idx % m) * n + idx / m]).collect();
        let tracked = self.tracked(a);
        Ok(self.push(Op::Transpose(a), Tensor::new([n, m], data)?, tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(Op::Reshape(a), out, tracked))
    }

    /// Columns `start..start+len` of an `m×n` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.shape(a)).ok_or_else(|| {
            Error::invalid(format!(
                "slice_cols needs a matrix, got {:?}",
                self.shape(a)
            ))
        })?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!(
                "column slice {start}+{len} out of range for {n}"
            )));
        }
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&x[r * n + start..r * n + start + len]);
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Op::SliceCols { input: a, start },
            Tensor::new([m, len], data)?,
            tracked,
        ))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols needs at least one part"))?;
        let (m, _) = as_matrix(self.shape(first))
            .ok_or_else(|| Error::invalid("concat_cols needs matrices"))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match as_matrix(self.shape(p)) {
                Some((pm, pn)) if pm == m => widths.push(pn),
                _ => return Err(Error::shape(self.shape(first), self.shape(p))),
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::new([m, total], data)?,
            tracked,
        ))
    }

    /// Channel `c` of an `H×W×C` image as an `H×W` matrix.
    pub fn channel(&mut self, a: Var, channel: usize) -> Result<Var> {
        let (h, w, c) = as_image(self.shape(a)).ok_or_else(|| {
            Error::invalid(format!("channel needs H×W×C, got {:?}", self.shape(a)))
        })?;
        if channel >= c {
            return Err(Error::InvalidAxis {
                axis: channel,
                shape: self.shape(a).to_vec(),
            });
        }
        let x = self.value(a).data();
        let data = (0..h * w).map(|p| x[p * c + channel]).collect();
        let tracked = self.tracked(a);
        Ok(self.push(
            Op::Channel { input: a, channel },
            Tensor::new([h, w], data)?,
            tracked,
        ))
    }

    /// Inverse of [`Graph::channel`]: interleaves `H×W` matrices into `H×W×C`.
    pub fn stack_channels(&mut self, planes: &[Var]) -> Result<Var> {
        let first = *planes
            .first()
            .ok_or_else(|| Error::invalid("stack_channels needs at least one plane"))?;
        let (h, w) = as_matrix(self.shape(first))
            .ok_or_else(|| Error::invalid("stack_channels needs H×W planes"))?;
        for &p in planes {
            if self.shape(p) != [h, w] {
                return Err(Error::shape(&[h, w], self.shape(p)));
            }
        }
        let c = planes.len();
        let mut data = vec![S::zero(); h * w * c];
        for (ci, &p) in planes.iter().enumerate() {
            for (px, &v) in self.value(p).data().iter().enumerate() {
                data[px * c + ci] = v;
            }
        }
        let tracked = planes.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Op::StackChannels(planes.to_vec()),
            Tensor::new([h, w, c], data)?,
            tracked,
        ))
    }

    /// Selected channels of an `H×W×L` stack as rows of an `n×(H·W)` matrix.
    pub fn gather_channels(&mut self, a: Var, channels: &[usize]) -> Result<Var> {
        let (h, w, l) = as_image(self.shape(a)).ok_or_else(|| {
            Error::invalid(format!(
                "gather_channels needs H×W×L, got {:?}",
                self.shape(a)
            ))
        })?;
        if channels.is_empty() {
            return Err(Error::invalid("gather_channels needs at least one channel"));
        }
        if let Some(&bad) = channels.iter().find(|&&ch| ch >= l) {
            return Err(Error::InvalidAxis {
                axis: bad,
                shape: self.shape(a).to_vec(),
            });
        }
        let m = h * w;
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(channels.len() * m);
        for &ch in channels {
            data.extend((0..m).map(|p| x[p * l + ch]));
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Op::GatherChannels {
                input: a,
                channels: channels.to_vec(),
            },
            Tensor::new([channels.len(), m], data)?,
            tracked,
        ))
    }

    // ---- reductions --------------------------------------------------------

    /// Reduces over `axes` (all axes when `None`). Reduced axes are removed;
    /// a full reduction yields shape `[1]`.
    pub fn reduce(&mut self, op: ReduceOp, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let axes: Vec<usize> = match axes {
            Some(ax) => ax.to_vec(),
            None => (0..shape.len()).collect(),
        };
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return Err(Error::InvalidAxis { axis: bad, shape });
        }
        let (out_shape, map) = kernels::reduction_map(&shape, &axes);
        let out_n: usize = out_shape.iter().product();
        let count = shape.iter().product::<usize>() / out_n;
        let scale = match op {
            ReduceOp::Sum => S::one(),
            ReduceOp::Mean => S::one() / S::of_usize(count),
        };
        let mut data = vec![S::zero(); out_n];
        for (&v, &o) in self.value(a).data().iter().zip(&map) {
            data[o] += v;
        }
        if op == ReduceOp::Mean {
            data.iter_mut().for_each(|v| *v *= scale);
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Op::Reduce {
                input: a,
                map,
                scale,
            },
            Tensor::new(out_shape, data)?,
            tracked,
        ))
    }

    /// Sum of every element, as shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(ReduceOp::Sum, a, None)
            .expect("full reduction is always valid")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(ReduceOp::Mean, a, None)
            .expect("full reduction is always valid")
    }

    // ---- image ops ---------------------------------------------------------

    /// Reflect-padded "same" correlation of an `H×W×C` image with `K×k×k`
    /// constant kernels, giving `H×W×(C·K)`; channel `c·K + k` is kernel `k`
    /// on input channel `c`.
    pub fn conv2d_same(&mut self, image: Var, kernels: Arc<Tensor<S>>) -> Result<Var> {
        let (h, w, c) = as_image(self.shape(image)).ok_or_else(|| {
            Error::invalid(format!("conv2d needs H×W×C, got {:?}", self.shape(image)))
        })?;
        let dims = conv_dims(h, w, c, &kernels)?;
        let data = kernels::conv2d_same(self.value(image).data(), kernels.data(), dims);
        let out = Tensor::new([h, w, dims.out_channels()], data)?;
        let tracked = self.tracked(image);
        Ok(self.push(
            Op::Conv2d {
                image,
                kernels,
                dims,
            },
            out,
            tracked,
        ))
    }

    /// Forward difference `x[i+1] - x[i]` along `axis`.
    pub fn diff(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] < 2 {
            return Err(Error::InvalidAxis { axis, shape });
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(outer * (d - 1) * inner);
        for o in 0..outer {
            for i in 0..d - 1 {
                let base = (o * d + i) * inner;
                data.extend((0..inner).map(|j| x[base + inner + j] - x[base + j]));
            }
        }
        let mut out_shape = shape;
        out_shape[axis] -= 1;
        let tracked = self.tracked(a);
        Ok(self.push(
            Op::Diff { input: a, axis },
            Tensor::new(out_shape, data)?,
            tracked,
        ))
    }

    /// Row-normalized Gaussian interpolation matrix `n×size`: row `i` is a
    /// Gaussian over pixel positions centred on `center + (i + 0.5 - n/2)·stride`
    /// with the given variance. `center`, `stride` and `variance` are scalars.
    pub fn attention_filter(
        &mut self,
        center: Var,
        stride: Var,
        variance: Var,
        n: usize,
        size: usize,
    ) -> Result<Var> {
        for v in [center, stride, variance] {
            if !self.value(v).is_scalar() {
                return Err(Error::invalid(format!(
                    "attention parameters must be scalars, got {:?}",
                    self.shape(v)
                )));
            }
        }
        if n == 0 || size == 0 {
            return Err(Error::invalid("attention grid and image size must be >= 1"));
        }
        let (c, d, v) = (
            self.value(center).item(),
            self.value(stride).item(),
            self.value(variance).item(),
        );
        let filter = attention_rows(c, d, v, n, size);
        let tracked = self.tracked(center) || self.tracked(stride) || self.tracked(variance);
        let out = Tensor::new([n, size], filter.normalized)?;
        Ok(self.push(
            Op::AttentionFilter {
                center,
                stride,
                variance,
            },
            out,
            tracked,
        ))
    }

    // ---- reverse pass ------------------------------------------------------

    /// Reverse-mode sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        // Weight gradients of matmuls against a leaf are collected here and
        // summed in one sweep when the leaf is reached.
        let mut deferred: Vec<Vec<(usize, Vec<S>)>> = vec![Vec::new(); root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            if !deferred[i].is_empty() {
                let n = self.nodes[i].value.shape()[1];
                let k = self.nodes[i].value.shape()[0];
                let terms: Vec<(&[S], &[S])> = deferred[i]
                    .iter()
                    .map(|(a, g)| (self.nodes[*a].value.data(), g.as_slice()))
                    .collect();
                let db = self.slot(&mut grads, Var(i)).expect("leaf is tracked");
                kernels::matmul_grad_rhs_many(db, &terms, k, n);
                deferred[i] = Vec::new();
            }
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].tracked {
                self.propagate(i, &g, &mut grads, &mut deferred);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].tracked).map(|g| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), g)
                        .expect("gradient length matches value")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut Vec<S>> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
    }

    fn propagate(
        &self,
        i: usize,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
        deferred: &mut [Vec<(usize, Vec<S>)>],
    ) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let eps = S::of(CLAMP_EPS);
                let two = S::of(2.0);
                if let Some(da) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        let local = match op {
                            UnaryOp::Neg => -S::one(),
                            UnaryOp::Exp => y[k],
                            UnaryOp::Log => {
                                if x[k] >= eps {
                                    S::one() / x[k]
                                } else {
                                    S::zero()
                                }
                            }
                            UnaryOp::Sigmoid => y[k] * (S::one() - y[k]),
                            UnaryOp::Tanh => S::one() - y[k] * y[k],
                            UnaryOp::Square => two * x[k],
                            UnaryOp::Abs => {
                                if x[k] > S::zero() {
                                    S::one()
                                } else if x[k] < S::zero() {
                                    -S::one()
                                } else {
                                    S::zero()
                                }
                            }
                            UnaryOp::Sqrt => S::one() / (two * y[k].max(eps)),
                        };
                        da[k] += g[k] * local;
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let pick = |d: &[S], k: usize| if d.len() == 1 { d[0] } else { d[k] };
                let idx = |len: usize, k: usize| if len == 1 { 0 } else { k };
                if let Some(da) = self.slot(grads, *a) {
                    let la = da.len();
                    for k in 0..g.len() {
                        let local = match op {
                            BinaryOp::Add | BinaryOp::Sub => S::one(),
                            BinaryOp::Mul => pick(xb, k),
                            BinaryOp::Div => S::one() / clamp_denominator(pick(xb, k)).0,
                        };
                        da[idx(la, k)] += g[k] * local;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    let lb = db.len();
                    for k in 0..g.len() {
                        let local = match op {
                            BinaryOp::Add => S::one(),
                            BinaryOp::Sub => -S::one(),
                            BinaryOp::Mul => pick(xa, k),
                            BinaryOp::Div => {
                                let (den, clamped) = clamp_denominator(pick(xb, k));
                                if clamped {
                                    S::zero()
                                } else {
                                    -pick(xa, k) / (den * den)
                                }
                            }
                        };
                        db[idx(lb, k)] += g[k] * local;
                    }
                }
            }
            Op::Affine { input, scale } => {
                if let Some(da) = self.slot(grads, *input) {
                    for (d, &gk) in da.iter_mut().zip(g) {
                        *d += gk * *scale;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.shape(*a)).expect("matrix");
                let n = self.shape(*b)[1];
                if let Some(da) = self.slot(grads, *a) {
                    kernels::matmul_grad_lhs(da, g, self.value(*b).data(), m, k, n);
                }
                if matches!(self.nodes[b.0].op, Op::Leaf) {
                    deferred[b.0].push((a.0, g.to_vec()));
                } else if let Some(db) = self.slot(grads, *b) {
                    kernels::matmul_grad_rhs(db, self.value(*a).data(), g, m, k, n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = as_matrix(self.shape(*a)).expect("matrix");
                if let Some(da) = self.slot(grads, *a) {
                    // g is n×m
                    for r in 0..m {
                        for c in 0..n {
                            da[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for (d, &gk) in da.iter_mut().zip(g) {
                        *d += gk;
                    }
                }
            }
            Op::Conv2d {
                image,
                kernels,
                dims,
            } => {
                if let Some(da) = self.slot(grads, *image) {
                    kernels::conv2d_same_grad(da, g, kernels.data(), *dims);
                }
            }
            Op::Reduce { input, map, scale } => {
                if let Some(da) = self.slot(grads, *input) {
                    for (d, &o) in da.iter_mut().zip(map) {
                        *d += g[o] * *scale;
                    }
                }
            }
            Op::SliceCols { input, start } => {
                let n = self.shape(*input)[1];
                let (m, len) = as_matrix(node.value.shape()).expect("matrix");
                if let Some(da) = self.slot(grads, *input) {
                    for r in 0..m {
                        for c in 0..len {
                            da[r * n + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = as_matrix(node.value.shape()).expect("matrix");
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if let Some(dp) = self.slot(grads, p) {
                        for r in 0..m {
                            for c in 0..w {
                                dp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Channel { input, channel } => {
                let c = self.shape(*input)[2];
                if let Some(da) = self.slot(grads, *input) {
                    for (p, &gk) in g.iter().enumerate() {
                        da[p * c + channel] += gk;
                    }
                }
            }
            Op::StackChannels(planes) => {
                let c = planes.len();
                for (ci, &p) in planes.iter().enumerate() {
                    if let Some(dp) = self.slot(grads, p) {
                        for (px, d) in dp.iter_mut().enumerate() {
                            *d += g[px * c + ci];
                        }
                    }
                }
            }
            Op::GatherChannels { input, channels } => {
                let l = self.shape(*input)[2];
                let m = node.value.shape()[1];
                if let Some(da) = self.slot(grads, *input) {
                    for (j, &ch) in channels.iter().enumerate() {
                        for p in 0..m {
                            da[p * l + ch] += g[j * m + p];
                        }
                    }
                }
            }
            Op::Diff { input, axis } => {
                let (outer, d, inner) = split_axis(self.shape(*input), *axis);
                if let Some(da) = self.slot(grads, *input) {
                    for o in 0..outer {
                        for i in 0..d - 1 {
                            let base = (o * d + i) * inner;
                            let gbase = (o * (d - 1) + i) * inner;
                            for j in 0..inner {
                                let gk = g[gbase + j];
                                da[base + inner + j] += gk;
                                da[base + j] -= gk;
                            }
                        }
                    }
                }
            }
            Op::AttentionFilter {
                center,
                stride,
                variance,
            } => {
                let (n, size) = as_matrix(node.value.shape()).expect("matrix");
                let (c, d, v) = (
                    self.value(*center).item(),
                    self.value(*stride).item(),
                    self.value(*variance).item(),
                );
                let rows = attention_rows(c, d, v, n, size);
                let (dc, dd, dv) = rows.backward(g);
                if let Some(x) = self.slot(grads, *center) {
                    x[0] += dc;
                }
                if let Some(x) = self.slot(grads, *stride) {
                    x[0] += dd;
                }
                if let Some(x) = self.slot(grads, *variance) {
                    x[0] += dv;
                }
            }
        }
    }
}

pub(crate) fn conv_dims<S: Scalar>(
    h: usize,
    w: usize,
    c: usize,
    kernels: &Tensor<S>,
) -> Result<ConvDims> {
    let (k, ks) = match *kernels.shape() {
        [k, a, b] if a == b => (k, a),
        _ => {
            return Err(Error::invalid(format!(
                "kernels must be K×k×k, got {:?}",
                kernels.shape()
            )))
        }
    };
    if ks % 2 == 0 {
        return Err(Error::invalid(format!("kernel size {ks} must be odd")));
    }
    Ok(ConvDims {
        height: h,
        width: w,
        channels: c,
        kernels: k,
        support: ks,
    })
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct AttentionRows<S> {
    raw: Vec<S>,
    sums: Vec<S>,
    normalized: Vec<S>,
    offsets: Vec<S>,
    means: Vec<S>,
    variance: S,
    variance_clamped: bool,
    size: usize,
}

fn attention_rows<S: Scalar>(
    center: S,
    stride: S,
    variance: S,
    n: usize,
    size: usize,
) -> AttentionRows<S> {
    let eps = S::of(CLAMP_EPS);
    let (var, variance_clamped) = if variance < eps {
        (eps, true)
    } else {
        (variance, false)
    };
    let half = S::of(n as f64 / 2.0);
    let offsets: Vec<S> = (0..n).map(|i| S::of_usize(i) + S::of(0.5) - half).collect();
    let means: Vec<S> = offsets.iter().map(|&o| center + o * stride).collect();
    let two_var = S::of(2.0) * var;
    let mut raw = Vec::with_capacity(n * size);
    let mut sums = Vec::with_capacity(n);
    for &mu in &means {
        // Shift by the largest exponent so each row keeps a unit-sized entry
        // even when its centre lies far outside the image.
        let logits: Vec<S> = (0..size)
            .map(|a| {
                let dx = S::of_usize(a) - mu;
                -(dx * dx) / two_var
            })
            .collect();
        let top = logits.iter().copied().fold(S::neg_infinity(), S::max);
        let mut s = S::zero();
        for l in logits {
            let u = (l - top).exp();
            raw.push(u);
            s += u;
        }
        sums.push(s);
    }
    let normalized = raw
        .iter()
        .enumerate()
        .map(|(k, &u)| u / sums[k / size])
        .collect();
    AttentionRows {
        raw,
        sums,
        normalized,
        offsets,
        means,
        variance: var,
        variance_clamped,
        size,
    }
}

impl<S: Scalar> AttentionRows<S> {
    /// Gradients of the filter w.r.t. (center, stride, variance).
    fn backward(&self, g: &[S]) -> (S, S, S) {
        let (mut dc, mut dd, mut dv) = (S::zero(), S::zero(), S::zero());
        let v = self.variance;
        for (i, &mu) in self.means.iter().enumerate() {
            let row = i * self.size..(i + 1) * self.size;
            let s = self.sums[i];
            let dot: S = row.clone().map(|k| g[k] * self.normalized[k]).sum();
            let denom = s;
            let mut dmu = S::zero();
            for (a, k) in row.enumerate() {
                let du = (g[k] - dot) / denom;
                let dx = S::of_usize(a) - mu;
                let u = self.raw[k];
                dmu += du * u * dx / v;
                dv += du * u * dx * dx / (S::of(2.0) * v * v);
            }
            dc += dmu;
            dd += dmu * self.offsets[i];
        }
        if self.variance_clamped {
            dv = S::zero();
        }
        (dc, dd, dv)
    }
}

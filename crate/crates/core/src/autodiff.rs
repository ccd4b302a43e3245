//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation evaluates eagerly and appends one node. [`Graph::backward`]
//! walks the nodes in exact reverse recording order, so gradients of shared
//! subexpressions accumulate before they are propagated further.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeom, Pad2d, PadMode, PoolMode, PoolOver};
use crate::spectral;
use crate::tensor::{numel, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    Sigmoid,
}

/// Parameters of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1, zero "same" padding for odd `kernel`, dense.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            pad: kernel / 2,
            pad_mode: PadMode::Zero,
            groups: 1,
        }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn reflect(mut self) -> Self {
        self.pad_mode = PadMode::Reflect;
        self
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    AddScalar(Var),
    MulScalar(Var, T),
    Unary(Activation, Var),
    Abs(Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Pad {
        x: Var,
        pad: Pad2d,
        mode: PadMode,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Pool {
        x: Var,
        mode: PoolMode,
        over: PoolOver,
        argmax: Vec<usize>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    PixelUnshuffle(Var, usize),
    PixelShuffle(Var, usize),
    Resize(Var),
    Sum(Var),
    Mean(Var),
    FreqFilter {
        x: Var,
        mask: Var,
        spectra: Vec<Complex<T>>,
    },
    SoftMask {
        factors: Var,
        k: f64,
        tau: f64,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Unary(_, x)
            | Op::Abs(x)
            | Op::Pad { x, .. }
            | Op::Crop { x, .. }
            | Op::Pool { x, .. }
            | Op::Softmax { x, .. }
            | Op::L2Normalize { x, .. }
            | Op::Reshape(x)
            | Op::PixelUnshuffle(x, _)
            | Op::PixelShuffle(x, _)
            | Op::Resize(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SoftMask { factors: x, .. } => vec![*x],
            Op::Conv2d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias.iter().copied());
                v
            }
            Op::LayerNorm { x, gain, offset, .. } => vec![*x, *gain, *offset],
            Op::Concat(parts) => parts.clone(),
            Op::FreqFilter { x, mask, .. } => vec![*x, *mask],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary { .. } => "elementwise",
            Op::AddScalar(_) | Op::MulScalar(..) => "scalar",
            Op::Unary(..) => "activation",
            Op::Abs(_) => "abs",
            Op::Conv2d { .. } => "conv2d",
            Op::Pad { .. } => "pad",
            Op::Crop { .. } => "crop",
            Op::Pool { .. } => "pool",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::MatMul { .. } => "matmul",
            Op::Reshape(_) => "reshape",
            Op::Concat(_) => "concat",
            Op::PixelUnshuffle(..) => "pixel_unshuffle",
            Op::PixelShuffle(..) => "pixel_shuffle",
            Op::Resize(_) => "resize",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::FreqFilter { .. } => "freq_filter",
            Op::SoftMask { .. } => "soft_mask",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// The computation tape. Nodes are immutable once recorded.
#[derive(Debug)]
pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled when `v` was not reachable from the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

/// Broadcast `b` (same rank, each extent equal or 1) against `a`: returns the
/// `b` index of every `a` element.
fn broadcast_index(a: &[usize], b: &[usize]) -> Result<Option<Vec<usize>>> {
    if a == b {
        return Ok(None);
    }
    if a.len() != b.len() || a.iter().zip(b).any(|(&x, &y)| y != x && y != 1) {
        return Err(shape_err!("cannot broadcast {:?} onto {:?}", b, a));
    }
    let r = a.len();
    let mut bstride = vec![0usize; r];
    let mut s = 1;
    for d in (0..r).rev() {
        bstride[d] = if b[d] == 1 { 0 } else { s };
        s *= b[d];
    }
    let mut idx = Vec::with_capacity(numel(a));
    let mut counter = vec![0usize; r];
    for _ in 0..numel(a) {
        idx.push(counter.iter().zip(&bstride).map(|(c, s)| c * s).sum());
        for d in (0..r).rev() {
            counter[d] += 1;
            if counter[d] < a[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    Ok(Some(idx))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let idx = broadcast_index(av.shape(), bv.shape())?;
        let bd = bv.data();
        let bat = |i: usize| match &idx {
            Some(ix) => bd[ix[i]],
            None => bd[i],
        };
        if kind == BinaryKind::Div && bd.iter().any(|v| v.is_zero()) {
            return Err(Error::DivisionByZero);
        }
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bat(i);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(av.shape(), data)?;
        self.push(value, Op::Binary { kind, a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        let value = self.value(x).map(|v| v + s);
        self.push(value, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::MulScalar(x, s))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let f = match kind {
            Activation::Gelu => gelu::<T>,
            Activation::Relu => |v: T| v.max(T::zero()),
            Activation::Sigmoid => sigmoid::<T>,
        };
        let value = self.value(x).map(f);
        self.push(value, Op::Unary(kind, x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs(x))
    }

    /// Grouped cross-correlation (no kernel flip). Reflect padding is realised
    /// as an explicit pad node followed by an unpadded convolution.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let x = match (spec.pad_mode, spec.pad) {
            (PadMode::Reflect, p) if p > 0 => self.pad(x, Pad2d::uniform(p), PadMode::Reflect)?,
            _ => x,
        };
        let pad = if spec.pad_mode == PadMode::Reflect { 0 } else { spec.pad };
        let geom = ConvGeom::new(self.shape(x), self.shape(w), spec.stride, pad, spec.groups)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.out_channels] {
                return Err(shape_err!("bias {:?} for {} channels", self.shape(b), geom.out_channels));
            }
        }
        let data = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&geom.out_shape(), data)?;
        self.push(value, Op::Conv2d { x, w, bias, geom })
    }

    pub fn pad(&mut self, x: Var, pad: Pad2d, mode: PadMode) -> Result<Var> {
        let (n, c, h, w) = self.value(x).nchw()?;
        let data = kernels::pad2d_forward(self.value(x).data(), n * c, h, w, pad, mode);
        let value = Tensor::new(
            &[n, c, h + pad.top + pad.bottom, w + pad.left + pad.right],
            data,
        )?;
        self.push(value, Op::Pad { x, pad, mode })
    }

    /// Spatial window `[top, top+h) × [left, left+w)` of an NCHW tensor.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let (n, c, ih, iw) = self.value(x).nchw()?;
        if top + h > ih || left + w > iw {
            return Err(shape_err!("crop {}x{}+{}+{} outside {}x{}", h, w, top, left, ih, iw));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in 0..h {
                let off = p * ih * iw + (top + y) * iw + left;
                data.extend_from_slice(&src[off..off + w]);
            }
        }
        let value = Tensor::new(&[n, c, h, w], data)?;
        self.push(value, Op::Crop { x, top, left })
    }

    pub fn pool(&mut self, x: Var, mode: PoolMode, over: PoolOver) -> Result<Var> {
        let dims = self.value(x).nchw()?;
        let (data, argmax) = kernels::pool_forward(self.value(x).data(), dims, mode, over);
        let shape = match over {
            PoolOver::Spatial => [dims.0, dims.1, 1, 1],
            PoolOver::Channel => [dims.0, 1, dims.2, dims.3],
        };
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::Pool { x, mode, over, argmax })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err!("softmax axis {} for shape {:?}", axis, shape));
        }
        let (o, d, i) = kernels::axis_split(&shape, axis);
        let data = kernels::softmax_forward(self.value(x).data(), o, d, i);
        self.push(Tensor::new(&shape, data)?, Op::Softmax { x, axis })
    }

    /// Normalise each pixel's channel vector, then apply the per-channel affine.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        let dims = self.value(x).nchw()?;
        if self.shape(gain) != [dims.1] || self.shape(offset) != [dims.1] {
            return Err(shape_err!(
                "layer norm affine {:?}/{:?} for {} channels",
                self.shape(gain),
                self.shape(offset),
                dims.1
            ));
        }
        let (y, mean, rstd) = kernels::layer_norm_forward(
            self.value(x).data(),
            dims,
            self.value(gain).data(),
            self.value(offset).data(),
        );
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(&shape, y)?,
            Op::LayerNorm {
                x,
                gain,
                offset,
                mean,
                rstd,
            },
        )
    }

    /// Unit L2 norm along the last axis.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().ok_or_else(|| shape_err!("l2_normalize of a scalar"))?;
        let (y, norms) = kernels::l2_normalize_forward(self.value(x).data(), len);
        self.push(Tensor::new(&shape, y)?, Op::L2Normalize { x, norms })
    }

    fn matmul_dims(&self, a: Var, b: Var, trans_b: bool) -> Result<(Vec<usize>, usize, usize, usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(shape_err!("matmul {:?} x {:?}", sa, sb));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(shape_err!("matmul inner extents {:?} x {:?} (trans_b={})", sa, sb, trans_b));
        }
        let batch = sa[..r - 2].iter().product();
        let mut out = sa[..r - 2].to_vec();
        out.extend_from_slice(&[m, n]);
        Ok((out, batch, m, k, n))
    }

    /// Batched product over the two trailing axes; `trans_b` uses `bᵀ`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (shape, batch, m, k, n) = self.matmul_dims(a, b, trans_b)?;
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), batch, m, k, n, trans_b);
        self.push(Tensor::new(&shape, data)?, Op::MatMul { a, b, trans_b })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let (n, _, h, w) = self.value(first).nchw()?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).nchw()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err!("concat {:?} with {:?}", self.shape(first), self.shape(p)));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(n * total * h * w);
        for b in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                data.extend_from_slice(&self.value(p).data()[b * c * h * w..(b + 1) * c * h * w]);
            }
        }
        let value = Tensor::new(&[n, total, h, w], data)?;
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).nchw()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(shape_err!("pixel_unshuffle by {} of {}x{}", r, h, w));
        }
        let data = kernels::pixel_unshuffle(self.value(x).data(), (n, c, h, w), r);
        let value = Tensor::new(&[n, c * r * r, h / r, w / r], data)?;
        self.push(value, Op::PixelUnshuffle(x, r))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).nchw()?;
        if r == 0 || c % (r * r) != 0 {
            return Err(shape_err!("pixel_shuffle by {} of {} channels", r, c));
        }
        let data = kernels::pixel_shuffle(self.value(x).data(), (n, c, h, w), r);
        let value = Tensor::new(&[n, c / (r * r), h * r, w * r], data)?;
        self.push(value, Op::PixelShuffle(x, r))
    }

    /// Bilinear resize of an NCHW tensor to `oh×ow` (corner alignment off).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let value = resize_bilinear(self.value(x), oh, ow)?;
        self.push(value, Op::Resize(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / T::of(v.len() as f64));
        self.push(value, Op::Mean(x))
    }

    /// `Re(IFFT(ifftshift(mask) ⊙ FFT(x)))` per plane of an NCHW tensor.
    /// `mask` is a centered `N×1×H×W` tensor shared across channels.
    pub fn freq_filter(&mut self, x: Var, mask: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).nchw()?;
        if self.shape(mask) != [n, 1, h, w] {
            return Err(shape_err!("mask {:?} for input {:?}", self.shape(mask), self.shape(x)));
        }
        let (y, spectra) =
            spectral::filter_forward(self.value(x).data(), n * c, h, w, self.value(mask).data(), n)?;
        let value = Tensor::new(&[n, c, h, w], y)?;
        self.push(value, Op::FreqFilter { x, mask, spectra })
    }

    /// Differentiable soft low-pass mask. `factors` is `N×2×1×1` holding (α, β)
    /// per sample; the result is a centered `N×1×H×W` mask with half-extents
    /// `α·H/k` and `β·W/k`.
    pub fn soft_mask(&mut self, factors: Var, h: usize, w: usize, k: f64, tau: f64) -> Result<Var> {
        let fs = self.shape(factors);
        if fs.len() != 4 || fs[1] != 2 || fs[2] != 1 || fs[3] != 1 {
            return Err(shape_err!("mask factors must be N×2×1×1, got {:?}", fs));
        }
        let n = fs[0];
        let f = self.value(factors).data();
        let mut data = Vec::with_capacity(n * h * w);
        for b in 0..n {
            let a = f[2 * b].as_f64() * h as f64 / k;
            let bb = f[2 * b + 1].as_f64() * w as f64 / k;
            data.extend_from_slice(spectral::soft_low_mask::<T>(h, w, a, bb, tau).data());
        }
        let value = Tensor::new(&[n, 1, h, w], data)?;
        self.push(value, Op::SoftMask { factors, k, tau })
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) -> Result<()> {
        if !self.wants(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(&data)
                .for_each(|(a, &d)| *a = *a + d),
            slot @ None => *slot = Some(Tensor::new(self.shape(v), data)?),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let idx = broadcast_index(av.shape(), bv.shape())?;
                let bi = |i: usize| idx.as_ref().map_or(i, |ix| ix[i]);
                let (ad, bd) = (av.data(), bv.data());
                if self.wants(*a) {
                    let ga = gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| match kind {
                            BinaryKind::Add | BinaryKind::Sub => gv,
                            BinaryKind::Mul => gv * bd[bi(i)],
                            BinaryKind::Div => gv / bd[bi(i)],
                        })
                        .collect();
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); bd.len()];
                    for (i, &gv) in gd.iter().enumerate() {
                        let j = bi(i);
                        let d = match kind {
                            BinaryKind::Add => gv,
                            BinaryKind::Sub => -gv,
                            BinaryKind::Mul => gv * ad[i],
                            BinaryKind::Div => -gv * ad[i] / (bd[j] * bd[j]),
                        };
                        gb[j] = gb[j] + d;
                    }
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, gd.to_vec())?,
            Op::MulScalar(x, s) => self.accumulate(grads, *x, gd.iter().map(|&v| v * *s).collect())?,
            Op::Unary(kind, x) => {
                let xd = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xd)
                    .zip(y)
                    .map(|((&gv, &xv), &yv)| {
                        gv * match kind {
                            Activation::Gelu => gelu_grad(xv),
                            Activation::Relu => {
                                if xv > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Sigmoid => yv * (T::one() - yv),
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, gx)?;
            }
            Op::Abs(x) => {
                let xd = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, gx)?;
            }
            Op::Conv2d { x, w, bias, geom } => {
                let want_b = bias.is_some_and(|b| self.wants(b));
                let (gx, gw, gb) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    self.wants(*x),
                    self.wants(*w),
                    want_b,
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx)?;
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw)?;
                }
                if let (Some(gb), Some(b)) = (gb, bias) {
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Pad { x, pad, mode } => {
                let (n, c, h, w) = self.value(*x).nchw()?;
                let gx = kernels::pad2d_backward(gd, n * c, h, w, *pad, *mode);
                self.accumulate(grads, *x, gx)?;
            }
            Op::Crop { x, top, left } => {
                let (n, c, ih, iw) = self.value(*x).nchw()?;
                let (_, _, h, w) = node.value.nchw()?;
                let mut gx = vec![T::zero(); n * c * ih * iw];
                for p in 0..n * c {
                    for yy in 0..h {
                        let off = p * ih * iw + (top + yy) * iw + left;
                        gx[off..off + w].copy_from_slice(&gd[(p * h + yy) * w..(p * h + yy + 1) * w]);
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::Pool { x, mode, over, argmax } => {
                let dims = self.value(*x).nchw()?;
                let gx = kernels::pool_backward(gd, dims, *mode, *over, argmax);
                self.accumulate(grads, *x, gx)?;
            }
            Op::Softmax { x, axis } => {
                let (o, d, i) = kernels::axis_split(node.value.shape(), *axis);
                let gx = kernels::softmax_backward(y, gd, o, d, i);
                self.accumulate(grads, *x, gx)?;
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                mean,
                rstd,
            } => {
                let dims = self.value(*x).nchw()?;
                let (gx, ggain, goff) = kernels::layer_norm_backward(
                    self.value(*x).data(),
                    dims,
                    self.value(*gain).data(),
                    mean,
                    rstd,
                    gd,
                );
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *gain, ggain)?;
                self.accumulate(grads, *offset, goff)?;
            }
            Op::L2Normalize { x, norms } => {
                let len = *node.value.shape().last().expect("rank >= 1");
                let gx = kernels::l2_normalize_backward(y, norms, gd, len);
                self.accumulate(grads, *x, gx)?;
            }
            Op::MatMul { a, b, trans_b } => {
                let (_, batch, m, k, n) = self.matmul_dims(*a, *b, *trans_b)?;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    // dA = G·Bᵀ (or G·B when B was used transposed)
                    let ga = kernels::matmul(gd, bd, batch, m, n, k, !*trans_b);
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let at = kernels::transpose_last2(ad, batch, m, k);
                    let gb = if *trans_b {
                        // dB (n×k) = Gᵀ·A
                        let gt = kernels::transpose_last2(gd, batch, m, n);
                        kernels::matmul(&gt, ad, batch, n, m, k, false)
                    } else {
                        // dB (k×n) = Aᵀ·G
                        kernels::matmul(&at, gd, batch, k, m, n, false)
                    };
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec())?,
            Op::Concat(parts) => {
                let (n, _, h, w) = node.value.nchw()?;
                let total = node.value.shape()[1];
                let mut c0 = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(n * c * h * w);
                        for b in 0..n {
                            let off = (b * total + c0) * h * w;
                            gp.extend_from_slice(&gd[off..off + c * h * w]);
                        }
                        self.accumulate(grads, p, gp)?;
                    }
                    c0 += c;
                }
            }
            Op::PixelUnshuffle(x, r) => {
                let gx = kernels::pixel_shuffle(gd, node.value.nchw()?, *r);
                self.accumulate(grads, *x, gx)?;
            }
            Op::PixelShuffle(x, r) => {
                let gx = kernels::pixel_unshuffle(gd, node.value.nchw()?, *r);
                self.accumulate(grads, *x, gx)?;
            }
            Op::Resize(x) => {
                let (n, c, h, w) = self.value(*x).nchw()?;
                let (_, _, oh, ow) = node.value.nchw()?;
                let gx = kernels::resize_bilinear_backward(gd, n * c, h, w, oh, ow);
                self.accumulate(grads, *x, gx)?;
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n])?;
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0] / T::of(n as f64); n])?;
            }
            Op::FreqFilter { x, mask, spectra } => {
                let (n, c, h, w) = node.value.nchw()?;
                let (gx, gm) = spectral::filter_backward(
                    gd,
                    spectra,
                    n * c,
                    h,
                    w,
                    self.value(*mask).data(),
                    n,
                    self.wants(*x),
                    self.wants(*mask),
                )?;
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx)?;
                }
                if let Some(gm) = gm {
                    self.accumulate(grads, *mask, gm)?;
                }
            }
            Op::SoftMask { factors, k, tau } => {
                let (n, _, h, w) = node.value.nchw()?;
                let f = self.value(*factors).data();
                let mut gf = vec![T::zero(); 2 * n];
                for b in 0..n {
                    let a = f[2 * b].as_f64() * h as f64 / k;
                    let bb = f[2 * b + 1].as_f64() * w as f64 / k;
                    let (mut ga, mut gb) = (0.0, 0.0);
                    for i in 0..h {
                        for j in 0..w {
                            let gv = gd[(b * h + i) * w + j].as_f64();
                            let (da, db) = spectral::soft_low_grad(
                                a,
                                bb,
                                i.abs_diff(h / 2) as f64,
                                j.abs_diff(w / 2) as f64,
                                *tau,
                            );
                            ga += gv * da;
                            gb += gv * db;
                        }
                    }
                    gf[2 * b] = T::of(ga * h as f64 / k);
                    gf[2 * b + 1] = T::of(gb * w as f64 / k);
                }
                self.accumulate(grads, *factors, gf)?;
            }
        }
        Ok(())
    }
}

/// Resize an NCHW tensor with bilinear sampling (corner alignment off),
/// outside any tape.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::EmptyInput);
    }
    let data = kernels::resize_bilinear(x.data(), n * c, h, w, oh, ow);
    Tensor::new(&[n, c, oh, ow], data)
}

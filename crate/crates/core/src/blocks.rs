//! Backbone building blocks: convolution and normalisation wrappers, transposed
//! (channel) attention, and the transformer block made of an attention and a
//! gated feed-forward sublayer.

use alloc::vec::Vec;

use crate::autodiff::{ConvSpec, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamBuilder, ParamId, Session};
use crate::tensor::Scalar;

/// A convolution weight with optional bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize, groups: usize, bias: bool) -> Self {
        b.nested(name, |b| Self {
            weight: b.conv("weight", cin, cout, k, groups),
            bias: bias.then(|| b.bias("bias", cout)),
            spec: ConvSpec::same(k).groups(groups),
        })
    }

    /// A convolution whose weights start at zero.
    pub fn zeroed(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        b.nested(name, |b| Self {
            weight: b.add("weight", &[cout, cin, k, k], Init::Const(0.0)),
            bias: None,
            spec: ConvSpec::same(k),
        })
    }

    pub fn pointwise(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        Self::new(b, name, cin, cout, 1, 1, bias)
    }

    /// 3×3 depth-wise convolution.
    pub fn depthwise(b: &mut ParamBuilder, name: &str, c: usize) -> Self {
        Self::new(b, name, c, c, 3, c, false)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight)?;
        let bias = self.bias.map(|id| s.param(id)).transpose()?;
        s.conv2d(x, w, bias, self.spec)
    }
}

/// Per-channel affine of a channel-wise layer norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl Norm {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize) -> Self {
        b.nested(name, |b| Self {
            gain: b.add("gain", &[c], Init::Const(1.0)),
            offset: b.add("offset", &[c], Init::Const(0.0)),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var) -> Result<Var> {
        let gain = s.param(self.gain)?;
        let offset = s.param(self.offset)?;
        s.layer_norm(x, gain, offset)
    }
}

/// Intermediate values of one attention evaluation, kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionTrace {
    /// Softmax weights, `N × heads × c_head × c_head`.
    pub attention: Var,
    /// Attention-weighted values before the output projection, `N×C×H×W`.
    pub mixed: Var,
    pub output: Var,
}

/// Multi-head attention across channels. Queries come from one source and
/// keys/values from another; each is a point-wise projection followed by a 3×3
/// depth-wise convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub channels: usize,
    pub heads: usize,
    pub normalize_qk: bool,
    pub q: Conv,
    pub q_dw: Conv,
    pub k: Conv,
    pub k_dw: Conv,
    pub v: Conv,
    pub v_dw: Conv,
    /// Learnable logit scale per head, shape `1×heads×1×1`.
    pub temperature: ParamId,
    pub out: Conv,
}

impl Attention {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, heads: usize, normalize_qk: bool) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::HeadMismatch { heads, channels });
        }
        Ok(b.nested(name, |b| Self {
            channels,
            heads,
            normalize_qk,
            q: Conv::pointwise(b, "q", channels, channels, false),
            q_dw: Conv::depthwise(b, "q_dw", channels),
            k: Conv::pointwise(b, "k", channels, channels, false),
            k_dw: Conv::depthwise(b, "k_dw", channels),
            v: Conv::pointwise(b, "v", channels, channels, false),
            v_dw: Conv::depthwise(b, "v_dw", channels),
            temperature: b.add("temperature", &[1, heads, 1, 1], Init::Const(1.0)),
            out: Conv::pointwise(b, "out", channels, channels, false),
        }))
    }

    fn project<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var, pw: &Conv, dw: &Conv, norm: bool) -> Result<Var> {
        let (n, c, h, w) = s.value(x).nchw()?;
        let y = pw.forward(s, x)?;
        let y = dw.forward(s, y)?;
        let y = s.reshape(y, &[n, self.heads, c / self.heads, h * w])?;
        if norm {
            s.l2_normalize(y)
        } else {
            Ok(y)
        }
    }

    pub fn trace<T: Scalar>(&self, s: &mut Session<'_, '_, T>, q_src: Var, kv_src: Var) -> Result<AttentionTrace> {
        if s.shape(q_src) != s.shape(kv_src) {
            return Err(crate::error::shape_err!(
                "attention sources {:?} and {:?}",
                s.shape(q_src),
                s.shape(kv_src)
            ));
        }
        let (n, c, h, w) = s.value(q_src).nchw()?;
        if c != self.channels {
            return Err(Error::HeadMismatch {
                heads: self.heads,
                channels: c,
            });
        }
        let q = self.project(s, q_src, &self.q, &self.q_dw, self.normalize_qk)?;
        let k = self.project(s, kv_src, &self.k, &self.k_dw, self.normalize_qk)?;
        let v = self.project(s, kv_src, &self.v, &self.v_dw, false)?;
        let logits = s.matmul(q, k, true)?;
        let temp = s.param(self.temperature)?;
        let logits = s.mul(logits, temp)?;
        let attention = s.softmax(logits, 3)?;
        let mixed = s.matmul(attention, v, false)?;
        let mixed = s.reshape(mixed, &[n, c, h, w])?;
        let output = self.out.forward(s, mixed)?;
        Ok(AttentionTrace {
            attention,
            mixed,
            output,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, q_src: Var, kv_src: Var) -> Result<Var> {
        Ok(self.trace(s, q_src, kv_src)?.output)
    }
}

/// Normalised self-attention sublayer with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdta {
    pub norm: Norm,
    pub attn: Attention,
}

impl Mdta {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, heads: usize, normalize_qk: bool) -> Result<Self> {
        b.nested(name, |b| {
            Ok(Self {
                norm: Norm::new(b, "norm", channels),
                attn: Attention::new(b, "attn", channels, heads, normalize_qk)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var) -> Result<Var> {
        let y = self.norm.forward(s, x)?;
        let a = self.attn.forward(s, y, y)?;
        s.add(x, a)
    }
}

/// Hidden width of the gated feed-forward sublayer.
pub fn hidden_channels(channels: usize, expansion: f64) -> usize {
    libm::round(channels as f64 * expansion) as usize
}

/// Gated feed-forward sublayer: two expanded branches, one passed through
/// GELU, multiplied together and contracted back, plus a residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Gdfn {
    pub norm: Norm,
    pub hidden: usize,
    pub gate_in: Conv,
    pub gate_dw: Conv,
    pub value_in: Conv,
    pub value_dw: Conv,
    pub out: Conv,
}

impl Gdfn {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, expansion: f64) -> Result<Self> {
        if expansion <= 1.0 {
            return Err(Error::InvalidConfig(alloc::format!("feed-forward expansion {expansion} must exceed 1")));
        }
        let hidden = hidden_channels(channels, expansion);
        Ok(b.nested(name, |b| Self {
            norm: Norm::new(b, "norm", channels),
            hidden,
            gate_in: Conv::pointwise(b, "gate_in", channels, hidden, false),
            gate_dw: Conv::depthwise(b, "gate_dw", hidden),
            value_in: Conv::pointwise(b, "value_in", channels, hidden, false),
            value_dw: Conv::depthwise(b, "value_dw", hidden),
            out: Conv::pointwise(b, "out", hidden, channels, false),
        }))
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var) -> Result<Var> {
        let y = self.norm.forward(s, x)?;
        let g = self.gate_in.forward(s, y)?;
        let g = self.gate_dw.forward(s, g)?;
        let g = s.gelu(g)?;
        let v = self.value_in.forward(s, y)?;
        let v = self.value_dw.forward(s, v)?;
        let gated = s.mul(g, v)?;
        let out = self.out.forward(s, gated)?;
        s.add(x, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub mdta: Mdta,
    pub gdfn: Gdfn,
}

impl TransformerBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, heads: usize, expansion: f64, normalize_qk: bool) -> Result<Self> {
        b.nested(name, |b| {
            Ok(Self {
                mdta: Mdta::new(b, "mdta", channels, heads, normalize_qk)?,
                gdfn: Gdfn::new(b, "gdfn", channels, expansion)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var) -> Result<Var> {
        let y = self.mdta.forward(s, x)?;
        self.gdfn.forward(s, y)
    }
}

/// `count` transformer blocks named `{name}.0`, `{name}.1`, ...
pub fn transformer_stack(
    b: &mut ParamBuilder,
    name: &str,
    count: usize,
    channels: usize,
    heads: usize,
    expansion: f64,
    normalize_qk: bool,
) -> Result<Vec<TransformerBlock>> {
    b.nested(name, |b| {
        (0..count)
            .map(|i| TransformerBlock::new(b, &alloc::format!("{i}"), channels, heads, expansion, normalize_qk))
            .collect()
    })
}

pub fn run_stack<T: Scalar>(blocks: &[TransformerBlock], s: &mut Session<'_, '_, T>, mut x: Var) -> Result<Var> {
    for tb in blocks {
        x = tb.forward(s, x)?;
    }
    Ok(x)
}

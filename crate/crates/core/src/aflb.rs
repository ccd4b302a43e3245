//! The adaptive frequency block: a guidance image is split into low and high
//! frequency parts by a predicted rectangular mask, each part queries the
//! decoder features, the two branches modulate each other, and the result is
//! merged back into the features.

use crate::autodiff::Var;
use crate::blocks::{Attention, Conv};
use crate::error::{shape_err, Result};
use crate::kernels::{PoolMode, PoolOver};
use crate::params::{ParamBuilder, Session};
use crate::spectral;
use crate::tensor::{Scalar, Tensor};

/// How the low-frequency mask is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MaskMode {
    /// Predicted factors, logistic-edged mask; gradients reach the predictor.
    LearnedSoft { tau: f64 },
    /// Predicted factors, binary mask; the predictor receives no gradient.
    LearnedHard,
    /// Square of the given side (half-extent `side / 2`), no predictor.
    Fixed { side: usize },
}

impl MaskMode {
    pub fn learned(self) -> bool {
        !matches!(self, MaskMode::Fixed { .. })
    }
}

/// At least two channels survive a reduction.
pub fn reduced(channels: usize, ratio: usize) -> usize {
    (channels / ratio.max(1)).max(2)
}

/// Predicts the two mask factors from the projected guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct Mgb {
    pub squeeze: Conv,
    pub head: Conv,
}

impl Mgb {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, r1: usize) -> Self {
        let mid = reduced(channels, r1);
        b.nested(name, |b| Self {
            squeeze: Conv::pointwise(b, "squeeze", channels, mid, true),
            head: Conv::pointwise(b, "head", mid, 2, true),
        })
    }

    /// `N×2×1×1` factors `(α, β)` in `(0, 1)`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, p: Var) -> Result<Var> {
        let pooled = s.pool(p, PoolMode::Avg, PoolOver::Spatial)?;
        let y = self.squeeze.forward(s, pooled)?;
        let y = s.gelu(y)?;
        let y = self.head.forward(s, y)?;
        s.sigmoid(y)
    }
}

/// Outputs of the frequency mining stage.
#[derive(Debug, Clone, Copy)]
pub struct MiningOutput {
    /// Guidance projected to the feature width.
    pub guidance: Var,
    pub low_mask: Var,
    pub guide_low: Var,
    pub guide_high: Var,
    pub x_low: Var,
    pub x_high: Var,
    /// Predicted `(α, β)`, absent in fixed-mask mode.
    pub factors: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fmim {
    pub channels: usize,
    pub project: Conv,
    pub mgb: Option<Mgb>,
    pub attn_low: Attention,
    pub attn_high: Attention,
}

impl Fmim {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let c = cfg.channels;
        b.nested(name, |b| {
            Ok(Self {
                channels: c,
                project: Conv::new(b, "project", 3, c, 3, 1, false),
                mgb: cfg.mask_mode.learned().then(|| Mgb::new(b, "mgb", c, cfg.r1)),
                attn_low: Attention::new(b, "attn_low", c, cfg.heads, cfg.normalize_qk)?,
                attn_high: Attention::new(b, "attn_high", c, cfg.heads, cfg.normalize_qk)?,
            })
        })
    }

    /// `image` must already match the spatial size of `x`. `mask_override`
    /// replaces the low-pass mask with an explicit centered `H×W` tensor.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, '_, T>,
        x: Var,
        image: Var,
        mode: MaskMode,
        k: usize,
        mask_override: Option<&Tensor<T>>,
    ) -> Result<MiningOutput> {
        let (n, _, h, w) = s.value(x).nchw()?;
        if s.value(image).nchw()? != (n, 3, h, w) {
            return Err(shape_err!("guidance {:?} for features {:?}", s.shape(image), s.shape(x)));
        }
        let guidance = self.project.forward(s, image)?;
        let factors = self.mgb.as_ref().map(|m| m.forward(s, guidance)).transpose()?;
        let low_mask = match (mask_override, mode, factors) {
            (Some(m), _, _) => {
                if m.shape() != [h, w] {
                    return Err(shape_err!("mask override {:?} for {}x{}", m.shape(), h, w));
                }
                let planes: alloc::vec::Vec<Tensor<T>> = (0..n).map(|_| m.clone()).collect();
                let stacked = Tensor::stack(&planes)?.reshape(&[n, 1, h, w])?;
                s.constant(stacked)?
            }
            (None, MaskMode::LearnedSoft { tau }, Some(f)) => s.soft_mask(f, h, w, k as f64, tau)?,
            (None, MaskMode::LearnedHard, Some(f)) => {
                let fv = s.value(f).clone();
                let mut planes = alloc::vec::Vec::with_capacity(n);
                for b in 0..n {
                    let (a, bb) = spectral::hard_half_extents(
                        fv.data()[2 * b].as_f64(),
                        fv.data()[2 * b + 1].as_f64(),
                        h,
                        w,
                        k as f64,
                    );
                    planes.push(spectral::hard_low_mask::<T>(h, w, a, bb));
                }
                let stacked = Tensor::stack(&planes)?.reshape(&[n, 1, h, w])?;
                s.constant(stacked)?
            }
            (None, MaskMode::Fixed { side }, _) => {
                let m = spectral::hard_low_mask::<T>(h, w, side / 2, side / 2);
                let planes: alloc::vec::Vec<Tensor<T>> = (0..n).map(|_| m.clone()).collect();
                let stacked = Tensor::stack(&planes)?.reshape(&[n, 1, h, w])?;
                s.constant(stacked)?
            }
            (None, _, None) => unreachable!("learned mask modes always build a predictor"),
        };
        let flipped = s.mul_scalar(low_mask, -T::one())?;
        let high_mask = s.add_scalar(flipped, T::one())?;
        let guide_low = s.freq_filter(guidance, low_mask)?;
        let guide_high = s.freq_filter(guidance, high_mask)?;
        let x_low = self.attn_low.forward(s, guide_low, x)?;
        let x_high = self.attn_high.forward(s, guide_high, x)?;
        Ok(MiningOutput {
            guidance,
            low_mask,
            guide_low,
            guide_high,
            x_low,
            x_high,
            factors,
        })
    }
}

/// Spatial map from the high branch gating the low branch.
#[derive(Debug, Clone, PartialEq)]
pub struct HlUnit {
    pub conv: Conv,
}

impl HlUnit {
    pub fn new(b: &mut ParamBuilder, name: &str) -> Self {
        b.nested(name, |b| Self {
            conv: Conv::new(b, "conv", 2, 1, 7, 1, true),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x_low: Var, x_high: Var) -> Result<Var> {
        if s.shape(x_low) != s.shape(x_high) {
            return Err(shape_err!("{:?} vs {:?}", s.shape(x_low), s.shape(x_high)));
        }
        let avg = s.pool(x_high, PoolMode::Avg, PoolOver::Channel)?;
        let max = s.pool(x_high, PoolMode::Max, PoolOver::Channel)?;
        let both = s.concat_channels(&[avg, max])?;
        let a = self.conv.forward(s, both)?;
        let a = s.sigmoid(a)?;
        s.mul(x_low, a)
    }
}

/// Channel descriptor from the low branch gating the high branch. The squeeze
/// and excite projections are shared by the average and max paths.
#[derive(Debug, Clone, PartialEq)]
pub struct LhUnit {
    pub down: Conv,
    pub up: Conv,
}

impl LhUnit {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, r2: usize) -> Self {
        let mid = reduced(channels, r2);
        b.nested(name, |b| Self {
            down: Conv::pointwise(b, "down", channels, mid, false),
            up: Conv::pointwise(b, "up", mid, channels, false),
        })
    }

    fn branch<T: Scalar>(&self, s: &mut Session<'_, '_, T>, v: Var) -> Result<Var> {
        let y = self.down.forward(s, v)?;
        let y = s.relu(y)?;
        self.up.forward(s, y)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x_low: Var, x_high: Var) -> Result<Var> {
        if s.shape(x_low) != s.shape(x_high) {
            return Err(shape_err!("{:?} vs {:?}", s.shape(x_low), s.shape(x_high)));
        }
        let avg = s.pool(x_low, PoolMode::Avg, PoolOver::Spatial)?;
        let max = s.pool(x_low, PoolMode::Max, PoolOver::Spatial)?;
        let a = self.branch(s, avg)?;
        let m = self.branch(s, max)?;
        let sum = s.add(a, m)?;
        let gate = s.sigmoid(sum)?;
        s.mul(x_high, gate)
    }
}

/// Fuse the modulated branches and inject them back into the features.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub fuse: Conv,
    pub attn: Attention,
}

impl Merge {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        b.nested(name, |b| {
            Ok(Self {
                fuse: Conv::pointwise(b, "fuse", cfg.channels, cfg.channels, true),
                attn: Attention::new(b, "attn", cfg.channels, cfg.heads, cfg.normalize_qk)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var, low: Var, high: Var) -> Result<Var> {
        let sum = s.add(low, high)?;
        let merged = self.fuse.forward(s, sum)?;
        let a = self.attn.forward(s, x, merged)?;
        s.add(x, a)
    }
}

/// Width and hyperparameters shared by the parts of one frequency block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub heads: usize,
    pub r1: usize,
    pub r2: usize,
    pub k: usize,
    pub mask_mode: MaskMode,
    pub normalize_qk: bool,
}

/// Everything an evaluation of [`Aflb`] produced.
#[derive(Debug, Clone, Copy)]
pub struct AflbOutput {
    pub output: Var,
    pub mining: MiningOutput,
    pub low_mod: Var,
    pub high_mod: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aflb {
    pub cfg: BlockConfig,
    pub fmim: Fmim,
    pub hl: HlUnit,
    pub lh: LhUnit,
    pub merge: Merge,
}

impl Aflb {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: BlockConfig) -> Result<Self> {
        b.nested(name, |b| {
            Ok(Self {
                cfg,
                fmim: Fmim::new(b, "fmim", &cfg)?,
                hl: HlUnit::new(b, "hl"),
                lh: LhUnit::new(b, "lh", cfg.channels, cfg.r2),
                merge: Merge::new(b, "merge", &cfg)?,
            })
        })
    }

    /// `image` is the full-resolution degraded input (`N×3×h×w`); it is
    /// resized to the feature resolution before use.
    pub fn forward_traced<T: Scalar>(
        &self,
        s: &mut Session<'_, '_, T>,
        x: Var,
        image: Var,
        mask_override: Option<&Tensor<T>>,
    ) -> Result<AflbOutput> {
        let (_, _, h, w) = s.value(x).nchw()?;
        let (_, _, ih, iw) = s.value(image).nchw()?;
        let guide = if (ih, iw) == (h, w) {
            image
        } else {
            s.resize_bilinear(image, h, w)?
        };
        let mining = self.fmim.forward(s, x, guide, self.cfg.mask_mode, self.cfg.k, mask_override)?;
        let low_mod = self.hl.forward(s, mining.x_low, mining.x_high)?;
        let high_mod = self.lh.forward(s, mining.x_low, mining.x_high)?;
        let output = self.merge.forward(s, x, low_mod, high_mod)?;
        Ok(AflbOutput {
            output,
            mining,
            low_mod,
            high_mod,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var, image: Var) -> Result<Var> {
        Ok(self.forward_traced(s, x, image, None)?.output)
    }
}

//! The four-level encoder/decoder restoration network.

use alloc::string::String;
use alloc::vec::Vec;

use crate::aflb::{Aflb, AflbOutput, BlockConfig, MaskMode};
use crate::autodiff::{Graph, Var};
use crate::blocks::{run_stack, transformer_stack, Conv, TransformerBlock};
use crate::error::{Error, Result};
use crate::kernels::{Pad2d, PadMode};
use crate::params::{ParamBuilder, ParamLayout, ParamStore, Session};
use crate::tensor::{Precision, Scalar, Tensor};

/// Decoder gaps that can host a frequency block, deepest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Gap {
    /// After the latent stage, at width 8C.
    Latent,
    /// After decoder level 3, at width 4C.
    Level3,
    /// After decoder level 2, at width 2C.
    Level2,
}

impl Gap {
    pub const ALL: [Gap; 3] = [Gap::Latent, Gap::Level3, Gap::Level2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Gap::Latent => "gap1",
            Gap::Level3 => "gap2",
            Gap::Level2 => "gap3",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Gap::ALL.into_iter().find(|g| g.name() == s)
    }
}

/// Default weight spread: `sqrt(1/6) · sqrt(2/fan_in) = 1/sqrt(3·fan_in)`, the
/// standard deviation of the usual uniform fan-in convolution initialiser.
pub const DEFAULT_INIT_GAIN: f64 = 0.408_248_290_463_863;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Transformer blocks per level, shallow to deep; the decoder reuses the
    /// counts of levels 1..3.
    pub tb_counts: [usize; 4],
    pub refinement_blocks: usize,
    pub heads: [usize; 4],
    pub gdfn_expansion: f64,
    pub r1: usize,
    pub r2: usize,
    /// Mask divisor: half-extents are `α·H/k` and `β·W/k`.
    pub k: usize,
    pub mask_mode: MaskMode,
    pub aflb: Vec<Gap>,
    pub precision: Precision,
    pub normalize_qk: bool,
    /// Scale of the initial weight spread relative to `sqrt(2 / fan_in)`.
    pub init_gain: f64,
    /// Start the final projection at zero so the untrained model returns its input.
    pub zero_output: bool,
}

impl ModelConfig {
    /// Full-size configuration with frequency blocks at all three gaps.
    pub fn full() -> Self {
        Self {
            base_channels: 48,
            tb_counts: [4, 6, 6, 8],
            refinement_blocks: 4,
            heads: [1, 2, 4, 8],
            gdfn_expansion: 2.66,
            r1: 4,
            r2: 8,
            k: 128,
            mask_mode: MaskMode::LearnedSoft { tau: 0.5 },
            aflb: Gap::ALL.to_vec(),
            precision: Precision::F32,
            normalize_qk: true,
            init_gain: DEFAULT_INIT_GAIN,
            zero_output: true,
        }
    }

    /// [`Self::full`] without frequency blocks.
    pub fn full_baseline() -> Self {
        Self {
            aflb: Vec::new(),
            ..Self::full()
        }
    }

    /// Small configuration for CPU experiments on 32×32 patches. The mask
    /// divisor is scaled with the patch size so that the mask covers the same
    /// fraction of the spectrum as the full-size setting on 128×128 patches.
    pub fn desk() -> Self {
        Self {
            base_channels: 8,
            tb_counts: [1, 1, 1, 1],
            refinement_blocks: 1,
            k: 32,
            ..Self::full()
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn has(&self, gap: Gap) -> bool {
        self.aflb.contains(&gap)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        for (level, &h) in self.heads.iter().enumerate() {
            if h == 0 || self.channels(level) % h != 0 {
                return bad(alloc::format!(
                    "{} heads do not divide {} channels at level {}",
                    h,
                    self.channels(level),
                    level + 1
                ));
            }
        }
        if self.gdfn_expansion <= 1.0 {
            return bad(alloc::format!("gdfn_expansion {} must exceed 1", self.gdfn_expansion));
        }
        if self.r1 == 0 || self.r2 == 0 || self.k == 0 {
            return bad("r1, r2 and k must be positive".into());
        }
        match self.mask_mode {
            MaskMode::LearnedSoft { tau } if !(tau > 0.0) => bad(alloc::format!("mask temperature {tau}")),
            _ => Ok(()),
        }?;
        let mut seen = self.aflb.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.aflb.len() {
            return bad("duplicate frequency block placement".into());
        }
        if !(self.init_gain >= 0.0) {
            return bad("init_gain must be non-negative".into());
        }
        Ok(())
    }

    fn block_config(&self, gap: Gap) -> BlockConfig {
        let (channels, heads) = match gap {
            Gap::Latent => (self.channels(3), self.heads[3]),
            Gap::Level3 => (self.channels(2), self.heads[2]),
            Gap::Level2 => (self.channels(1), self.heads[1]),
        };
        BlockConfig {
            channels,
            heads,
            r1: self.r1,
            r2: self.r2,
            k: self.k,
            mask_mode: self.mask_mode,
            normalize_qk: self.normalize_qk,
        }
    }
}

/// Halve the resolution and double the width: a 3×3 convolution to half the
/// channels followed by a 2× space-to-depth rearrangement.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsample {
    pub conv: Conv,
}

impl Downsample {
    fn new(b: &mut ParamBuilder, name: &str, c: usize) -> Self {
        Self {
            conv: Conv::new(b, name, c, c / 2, 3, 1, false),
        }
    }

    fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        s.pixel_unshuffle(y, 2)
    }
}

/// Double the resolution and halve the width: 3×3 convolution to twice the
/// channels, then a 2× depth-to-space rearrangement.
#[derive(Debug, Clone, PartialEq)]
pub struct Upsample {
    pub conv: Conv,
}

impl Upsample {
    fn new(b: &mut ParamBuilder, name: &str, c: usize) -> Self {
        Self {
            conv: Conv::new(b, name, c, c * 2, 3, 1, false),
        }
    }

    fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        s.pixel_shuffle(y, 2)
    }
}

/// Network structure. Weights live in a separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaIr {
    pub config: ModelConfig,
    pub embed: Conv,
    pub encoders: [Vec<TransformerBlock>; 3],
    pub downs: [Downsample; 3],
    pub latent: Vec<TransformerBlock>,
    /// Index 0 brings 8C→4C, 1 brings 4C→2C, 2 brings 2C→C.
    pub ups: [Upsample; 3],
    /// Skip-fusion after decoder levels 3 and 2.
    pub reduce: [Conv; 2],
    /// Decoder levels 3, 2, 1.
    pub decoders: [Vec<TransformerBlock>; 3],
    pub refinement: Vec<TransformerBlock>,
    pub output: Conv,
    pub aflb: [Option<Aflb>; 3],
}

/// Result of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Unclamped restoration at the input size.
    pub output: Var,
    /// Per-gap traces of the frequency blocks that ran.
    pub aflb: Vec<(Gap, AflbOutput)>,
}

/// Spatial extents are padded to a multiple of this so the deepest features
/// still have even size.
pub const SIZE_MULTIPLE: usize = 16;

impl AdaIr {
    /// Declare the architecture and its parameters.
    pub fn new(config: ModelConfig) -> Result<(Self, ParamLayout)> {
        config.validate()?;
        let cfg = &config;
        let c = |l| cfg.channels(l);
        let (e, q) = (cfg.gdfn_expansion, cfg.normalize_qk);
        let mut b = ParamBuilder::new(cfg.init_gain);
        let embed = Conv::new(&mut b, "embed", 3, c(0), 3, 1, false);
        let mut enc = Vec::new();
        let mut downs = Vec::new();
        for level in 0..3 {
            enc.push(transformer_stack(
                &mut b,
                &alloc::format!("encoder{}", level + 1),
                cfg.tb_counts[level],
                c(level),
                cfg.heads[level],
                e,
                q,
            )?);
            downs.push(Downsample::new(&mut b, &alloc::format!("down{}", level + 1), c(level)));
        }
        let latent = transformer_stack(&mut b, "latent", cfg.tb_counts[3], c(3), cfg.heads[3], e, q)?;
        let mut aflb: [Option<Aflb>; 3] = [None, None, None];
        let mut ups = Vec::new();
        let mut reduce = Vec::new();
        let mut decoders = Vec::new();
        for (i, gap) in Gap::ALL.into_iter().enumerate() {
            if cfg.has(gap) {
                aflb[i] = Some(Aflb::new(&mut b, gap.name(), cfg.block_config(gap))?);
            }
            let level = 2 - i; // decoder level index (0-based) being built
            ups.push(Upsample::new(&mut b, &alloc::format!("up{}", level + 1), c(level + 1)));
            let width = if level == 0 {
                c(1)
            } else {
                reduce.push(Conv::pointwise(&mut b, &alloc::format!("reduce{}", level + 1), c(level + 1), c(level), false));
                c(level)
            };
            decoders.push(transformer_stack(
                &mut b,
                &alloc::format!("decoder{}", level + 1),
                cfg.tb_counts[level],
                width,
                cfg.heads[level],
                e,
                q,
            )?);
        }
        let refinement = transformer_stack(&mut b, "refinement", cfg.refinement_blocks, c(1), cfg.heads[0], e, q)?;
        let output = if cfg.zero_output {
            Conv::zeroed(&mut b, "output", c(1), 3, 3)
        } else {
            Conv::new(&mut b, "output", c(1), 3, 3, 1, false)
        };
        let arr3 = |v: Vec<Vec<TransformerBlock>>| -> [Vec<TransformerBlock>; 3] { v.try_into().expect("three levels") };
        let net = Self {
            embed,
            encoders: arr3(enc),
            downs: downs.try_into().expect("three levels"),
            latent,
            ups: ups.try_into().expect("three levels"),
            reduce: reduce.try_into().expect("two reductions"),
            decoders: arr3(decoders),
            refinement,
            output,
            aflb,
            config,
        };
        Ok((net, b.finish()))
    }

    pub fn aflb(&self, gap: Gap) -> Option<&Aflb> {
        self.aflb[gap.index()].as_ref()
    }

    /// Training-mode forward: reflect-pad to [`SIZE_MULTIPLE`], run the
    /// network, add the input back, crop. No clamping.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, '_, T>, image: Var) -> Result<ForwardOutput> {
        self.forward_with(s, image, &[])
    }

    /// Like [`Self::forward`] with explicit low-pass masks for some gaps.
    pub fn forward_with<T: Scalar>(
        &self,
        s: &mut Session<'_, '_, T>,
        image: Var,
        mask_overrides: &[(Gap, Tensor<T>)],
    ) -> Result<ForwardOutput> {
        let (n, c, h, w) = s.value(image).nchw()?;
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::EmptyInput);
        }
        if c != 3 {
            return Err(crate::error::shape_err!("expected 3 input channels, got {}", c));
        }
        let pad = Pad2d {
            top: 0,
            left: 0,
            bottom: h.next_multiple_of(SIZE_MULTIPLE) - h,
            right: w.next_multiple_of(SIZE_MULTIPLE) - w,
        };
        let inp = if pad.bottom + pad.right > 0 {
            s.pad(image, pad, PadMode::Reflect)?
        } else {
            image
        };

        let mut skips = Vec::with_capacity(3);
        let mut x = self.embed.forward(s, inp)?;
        for level in 0..3 {
            x = run_stack(&self.encoders[level], s, x)?;
            skips.push(x);
            x = self.downs[level].forward(s, x)?;
        }
        x = run_stack(&self.latent, s, x)?;

        let mut traces = Vec::new();
        for (i, gap) in Gap::ALL.into_iter().enumerate() {
            if let Some(block) = &self.aflb[i] {
                let ov = mask_overrides.iter().find(|(g, _)| *g == gap).map(|(_, m)| m);
                let t = block.forward_traced(s, x, inp, ov)?;
                x = t.output;
                traces.push((gap, t));
            }
            x = self.ups[i].forward(s, x)?;
            let level = 2 - i;
            x = s.concat_channels(&[x, skips[level]])?;
            if level > 0 {
                x = self.reduce[i].forward(s, x)?;
            }
            x = run_stack(&self.decoders[i], s, x)?;
        }
        x = run_stack(&self.refinement, s, x)?;
        let residual = self.output.forward(s, x)?;
        let full = s.add(residual, inp)?;
        let output = if pad.bottom + pad.right > 0 {
            s.crop(full, 0, 0, h, w)?
        } else {
            full
        };
        Ok(ForwardOutput { output, aflb: traces })
    }

    /// Inference: no gradients recorded, output clamped to `[0, 1]`.
    pub fn restore<T: Scalar>(&self, params: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, params, false);
        let x = s.constant(image.clone())?;
        let out = self.forward(&mut s, x)?.output;
        Ok(s.value(out).map(|v| v.max(T::zero()).min(T::one())))
    }
}

/// Build the network and initialise its weights from `seed`.
pub fn build_model<T: Scalar>(config: ModelConfig, seed: u64) -> Result<(AdaIr, ParamStore<T>)> {
    let (net, layout) = AdaIr::new(config)?;
    Ok((net, ParamStore::materialize(layout, seed)))
}

/// Scalar counts grouped by network part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub total: usize,
    pub embed: usize,
    pub encoder: usize,
    pub latent: usize,
    pub decoder: usize,
    pub refinement: usize,
    pub output: usize,
    /// One entry per frequency block.
    pub aflb: Vec<(Gap, usize)>,
}

impl ParamBreakdown {
    pub fn aflb_total(&self) -> usize {
        self.aflb.iter().map(|(_, n)| n).sum()
    }

    /// Parameters outside the frequency blocks.
    pub fn backbone(&self) -> usize {
        self.total - self.aflb_total()
    }
}

/// Count parameters without materialising any weights.
pub fn count_parameters(layout: &ParamLayout) -> ParamBreakdown {
    let sum = |prefixes: &[&str]| prefixes.iter().map(|p| layout.count_prefix(p)).sum();
    ParamBreakdown {
        total: layout.count(),
        embed: sum(&["embed"]),
        encoder: sum(&["encoder1", "encoder2", "encoder3", "down1", "down2", "down3"]),
        latent: sum(&["latent"]),
        decoder: sum(&["up1", "up2", "up3", "reduce2", "reduce3", "decoder1", "decoder2", "decoder3"]),
        refinement: sum(&["refinement"]),
        output: sum(&["output"]),
        aflb: Gap::ALL
            .into_iter()
            .map(|g| (g, layout.count_prefix(g.name())))
            .filter(|(_, n)| *n > 0)
            .collect(),
    }
}

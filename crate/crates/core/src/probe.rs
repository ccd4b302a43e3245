//! Small fixed training experiments on synthetic data used to check that the
//! model can actually learn at desk scale.

use alloc::vec::Vec;

use crate::aflb::MaskMode;
use crate::degrade::{add_gaussian_noise, synth_blur, synthetic_scene, BlurKernel, DegradationSpec, RainSpec, SamplePair};
use crate::error::Result;
use crate::network::{build_model, ModelConfig};
use crate::tensor::{Scalar, Tensor};
use crate::train::{evaluate, train_loop, AdamState, EvalRecord, TrainConfig, TrainReport};

/// Image side of every probe sample; equal to the patch so crops are whole images.
pub const PROBE_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub report: TrainReport,
    /// Scores on the training pairs after the last step.
    pub eval: Vec<EvalRecord>,
}

impl ProbeOutcome {
    /// Final over initial training loss.
    pub fn loss_ratio(&self) -> f64 {
        let l = self.report.losses();
        match (l.first(), l.last()) {
            (Some(a), Some(b)) => b / a,
            _ => f64::NAN,
        }
    }

    /// Smallest restored-minus-degraded PSNR among pairs with `tag` (all pairs if `None`).
    pub fn min_gain(&self, tag: Option<&str>) -> f64 {
        self.eval
            .iter()
            .filter(|e| tag.is_none_or(|t| e.tag == t))
            .map(|e| e.psnr_output - e.psnr_input)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Four σ = 25 noise pairs on distinct synthetic scenes.
pub fn overfit_pairs() -> Result<Vec<SamplePair>> {
    (0..4)
        .map(|i| SamplePair::synthesize(synthetic_scene(PROBE_SIZE, PROBE_SIZE, i), &DegradationSpec::noise(25.0), 100 + i))
        .collect()
}

/// Two pairs each of noise, haze and rain.
pub fn mixed_pairs() -> Result<Vec<SamplePair>> {
    let specs = [
        DegradationSpec::noise(25.0),
        DegradationSpec::haze(1.0, 0.8),
        DegradationSpec::rain(RainSpec::default()),
    ];
    let mut pairs = Vec::new();
    for (j, spec) in specs.iter().enumerate() {
        for i in 0..2u64 {
            let seed = 10 * j as u64 + i;
            pairs.push(SamplePair::synthesize(synthetic_scene(PROBE_SIZE, PROBE_SIZE, 200 + seed), spec, 300 + seed)?);
        }
    }
    Ok(pairs)
}

/// Train a fresh model on `pairs` with every pair in every batch, then score it.
pub fn run_probe<T: Scalar>(config: ModelConfig, pairs: &[SamplePair], steps: usize, seed: u64) -> Result<ProbeOutcome> {
    let (net, mut params) = build_model::<T>(config, seed)?;
    let mut state = AdamState::new(&params);
    let cfg = TrainConfig {
        batch_size: pairs.len(),
        steps,
        patch: PROBE_SIZE,
        flips: false,
        seed,
        ..TrainConfig::default()
    };
    let report = train_loop(&net, &mut params, &mut state, pairs, &cfg, |_| Ok(()))?;
    let eval = evaluate(&net, &params, pairs)?;
    Ok(ProbeOutcome { report, eval })
}

/// Desk model, 200 steps on [`overfit_pairs`] with the given mask mode.
pub fn overfit_probe<T: Scalar>(mask_mode: MaskMode, seed: u64) -> Result<ProbeOutcome> {
    let config = ModelConfig {
        mask_mode,
        ..ModelConfig::desk()
    };
    run_probe::<T>(config, &overfit_pairs()?, 200, seed)
}

/// Desk model, 500 steps on [`mixed_pairs`].
pub fn all_in_one_probe<T: Scalar>(seed: u64) -> Result<ProbeOutcome> {
    run_probe::<T>(ModelConfig::desk(), &mixed_pairs()?, 500, seed)
}

/// Spectrum-analysis fixture: a flat grey image and the same image with
/// i.i.d. Gaussian noise, so the residual is white noise.
pub fn white_residual_pair(size: usize, seed: u64) -> Result<SamplePair> {
    let clean = Tensor::full(&[3, size, size], 0.5);
    SamplePair::synthesize(clean, &DegradationSpec::noise(25.0), seed)
}

/// Spectrum-analysis fixture whose residual is Gaussian-blurred noise, a
/// stand-in for the smooth residuals of haze or low light.
pub fn lowpass_residual_pair(size: usize, seed: u64) -> Result<SamplePair> {
    let clean = Tensor::full(&[3, size, size], 0.5);
    let noisy = add_gaussian_noise(&clean, 25.0, seed)?;
    let kernel = BlurKernel::Gaussian { size: 15, sigma: 3.0 }.build()?;
    SamplePair::new(clean, synth_blur(&noisy, &kernel)?, "lowpass")
}

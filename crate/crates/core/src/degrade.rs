//! Seeded synthetic degradations and training-batch assembly.
//!
//! Images are `3×H×W` tensors with values in `[0, 1]`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::kernels::reflect_index;
use crate::tensor::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image_dims(img: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(shape_err!("expected C×H×W image, got {:?}", img.shape())),
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn check_range(name: &'static str, value: f64, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidRange { name, value })
    }
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma_255 / 255`, then clip.
pub fn add_gaussian_noise(img: &Tensor<f64>, sigma_255: f64, seed: u64) -> Result<Tensor<f64>> {
    check_range("sigma", sigma_255, sigma_255 >= 0.0)?;
    if sigma_255 == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma_255 / 255.0).map_err(|_| Error::InvalidRange {
        name: "sigma",
        value: sigma_255,
    })?;
    let mut r = rng(seed);
    Ok(img.map(|v| clip(v + normal.sample(&mut r))))
}

/// Atmospheric scattering: `t = exp(−β·d)`, `out = img·t + A·(1 − t)`.
/// `depth` is `H×W` and shared by all channels.
pub fn synth_haze(img: &Tensor<f64>, beta: f64, airlight: f64, depth: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = image_dims(img)?;
    check_range("beta", beta, beta >= 0.0)?;
    check_range("airlight", airlight, (0.0..=1.0).contains(&airlight))?;
    if depth.shape() != [h, w] {
        return Err(shape_err!("depth {:?} for {}x{} image", depth.shape(), h, w));
    }
    if let Some(&d) = depth.data().iter().find(|&&d| !(d >= 0.0)) {
        return Err(Error::InvalidRange { name: "depth", value: d });
    }
    let mut out = img.clone();
    for ch in 0..c {
        for (i, &d) in depth.data().iter().enumerate() {
            let t = libm::exp(-beta * d);
            let v = &mut out.data_mut()[ch * h * w + i];
            *v = clip(*v * t + airlight * (1.0 - t));
        }
    }
    Ok(out)
}

/// Procedural depth: a vertical ramp from `far` at the top row to `near` at
/// the bottom, plus smooth seeded undulation of amplitude `wobble`.
pub fn haze_depth(h: usize, w: usize, near: f64, far: f64, wobble: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    const GRID: usize = 4;
    let coarse: Vec<f64> = (0..GRID * GRID).map(|_| r.random_range(-1.0..1.0)).collect();
    let fine = crate::kernels::resize_bilinear(&coarse, 1, GRID, GRID, h, w);
    let data = (0..h * w)
        .map(|i| {
            let y = (i / w) as f64 / (h.max(2) - 1) as f64;
            (far + (near - far) * y + wobble * fine[i]).max(0.0)
        })
        .collect();
    Tensor::new(&[h, w], data).expect("h*w values")
}

/// Parameters of the additive streak layer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RainSpec {
    pub count: usize,
    /// Streak length in pixels.
    pub length: f64,
    /// Direction from vertical, in degrees.
    pub angle: f64,
    /// Streak thickness in pixels (≥ 1).
    pub width: f64,
    /// Peak brightness added by a streak.
    pub intensity: f64,
}

impl Default for RainSpec {
    fn default() -> Self {
        Self {
            count: 60,
            length: 10.0,
            angle: 15.0,
            width: 1.0,
            intensity: 0.6,
        }
    }
}

/// The non-negative `H×W` streak layer that [`synth_rain`] adds.
pub fn rain_layer(h: usize, w: usize, spec: &RainSpec, seed: u64) -> Result<Tensor<f64>> {
    check_range("intensity", spec.intensity, spec.intensity >= 0.0)?;
    check_range("length", spec.length, spec.length >= 0.0)?;
    check_range("width", spec.width, spec.width >= 1.0)?;
    let mut layer = vec![0.0; h * w];
    let mut r = rng(seed);
    let theta = spec.angle.to_radians();
    let (dy, dx) = (libm::cos(theta), libm::sin(theta));
    // perpendicular offsets for thick streaks
    let thick = libm::ceil(spec.width) as usize;
    let mut splat = |y: f64, x: f64, v: f64| {
        let (y0, x0) = (libm::floor(y), libm::floor(x));
        let (fy, fx) = (y - y0, x - x0);
        for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as isize + oy, x0 as isize + ox);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    layer[yy as usize * w + xx as usize] += v * wy * wx;
                }
            }
        }
    };
    for _ in 0..spec.count {
        let y = r.random_range(0.0..h as f64);
        let x = r.random_range(0.0..w as f64);
        let len = spec.length * r.random_range(0.6..1.0);
        let strength = spec.intensity * r.random_range(0.5..1.0);
        let steps = (libm::ceil(len * 2.0) as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64 * len;
            // taper the ends so the blur along the axis is built in
            let taper = libm::sin(core::f64::consts::PI * s as f64 / steps as f64).max(0.2);
            for k in 0..thick {
                let off = k as f64 - (thick - 1) as f64 / 2.0;
                splat(y + t * dy - off * dx, x + t * dx + off * dy, strength * taper * 0.5);
            }
        }
    }
    // blur along the streak direction with a 3-tap kernel
    let mut blurred = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, wt) in [(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)] {
                let yy = libm::round(i as f64 + t * dy) as isize;
                let xx = libm::round(j as f64 + t * dx) as isize;
                acc += wt * layer[reflect_index(yy, h) * w + reflect_index(xx, w)];
            }
            blurred[i * w + j] = acc.min(spec.intensity.max(0.0));
        }
    }
    Tensor::new(&[h, w], blurred)
}

/// Add bright seeded streaks to every channel and clip.
pub fn synth_rain(img: &Tensor<f64>, spec: &RainSpec, seed: u64) -> Result<Tensor<f64>> {
    let (c, h, w) = image_dims(img)?;
    if spec.count == 0 {
        return Ok(img.clone());
    }
    let layer = rain_layer(h, w, spec, seed)?;
    let mut out = img.clone();
    for ch in 0..c {
        for (i, &v) in layer.data().iter().enumerate() {
            let p = &mut out.data_mut()[ch * h * w + i];
            *p = clip(*p + v);
        }
    }
    Ok(out)
}

/// `scale · img^gamma`.
pub fn synth_lowlight(img: &Tensor<f64>, gamma: f64, scale: f64) -> Result<Tensor<f64>> {
    check_range("gamma", gamma, gamma >= 1.0)?;
    check_range("scale", scale, scale > 0.0 && scale <= 1.0)?;
    Ok(img.map(|v| clip(scale * libm::pow(v, gamma))))
}

/// Reflect-padded correlation of each channel with an odd-sized `kh×kw` kernel
/// that sums to one.
pub fn synth_blur(img: &Tensor<f64>, kernel: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = image_dims(img)?;
    let (kh, kw) = match *kernel.shape() {
        [kh, kw] if kh % 2 == 1 && kw % 2 == 1 => (kh, kw),
        _ => return Err(shape_err!("blur kernel must be odd-sized 2D, got {:?}", kernel.shape())),
    };
    let total = kernel.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::UnnormalizedKernel(total));
    }
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..kh {
                    let yy = reflect_index(i as isize + a as isize - ry, h);
                    for b in 0..kw {
                        let xx = reflect_index(j as isize + b as isize - rx, w);
                        acc += kernel.data()[a * kw + b] * plane[yy * w + xx];
                    }
                }
                out[ch * h * w + i * w + j] = clip(acc);
            }
        }
    }
    Tensor::new(img.shape(), out)
}

/// Named blur kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "shape", rename_all = "snake_case"))]
pub enum BlurKernel {
    /// `1×size` box (horizontal) or `size×size` box.
    Box { size: usize, horizontal: bool },
    /// Normalised isotropic Gaussian of odd `size`.
    Gaussian { size: usize, sigma: f64 },
    /// Line of `length` taps at `angle` degrees inside a square support.
    Motion { length: usize, angle: f64 },
}

impl BlurKernel {
    pub fn build(&self) -> Result<Tensor<f64>> {
        match *self {
            BlurKernel::Box { size, horizontal } => {
                if size % 2 == 0 {
                    return Err(Error::InvalidArgument(alloc::format!("box size {size} must be odd")));
                }
                if horizontal {
                    Tensor::new(&[1, size], vec![1.0 / size as f64; size])
                } else {
                    Tensor::new(&[size, size], vec![1.0 / (size * size) as f64; size * size])
                }
            }
            BlurKernel::Gaussian { size, sigma } => {
                if size % 2 == 0 || !(sigma > 0.0) {
                    return Err(Error::InvalidArgument(alloc::format!("gaussian kernel {size}, sigma {sigma}")));
                }
                let r = (size / 2) as f64;
                let mut k: Vec<f64> = (0..size * size)
                    .map(|i| {
                        let (y, x) = ((i / size) as f64 - r, (i % size) as f64 - r);
                        libm::exp(-(x * x + y * y) / (2.0 * sigma * sigma))
                    })
                    .collect();
                let s: f64 = k.iter().sum();
                k.iter_mut().for_each(|v| *v /= s);
                Tensor::new(&[size, size], k)
            }
            BlurKernel::Motion { length, angle } => {
                let size = length.max(1) | 1;
                let r = (size / 2) as f64;
                let mut k = vec![0.0; size * size];
                let (dy, dx) = (libm::sin(angle.to_radians()), libm::cos(angle.to_radians()));
                let steps = 4 * size;
                for s in 0..=steps {
                    let t = (s as f64 / steps as f64 - 0.5) * (length.max(1) - 1) as f64;
                    let y = libm::round(r + t * dy) as usize;
                    let x = libm::round(r + t * dx) as usize;
                    k[y.min(size - 1) * size + x.min(size - 1)] += 1.0;
                }
                let s: f64 = k.iter().sum();
                k.iter_mut().for_each(|v| *v /= s);
                Tensor::new(&[size, size], k)
            }
        }
    }
}

/// One degradation with its parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum DegradationSpec {
    Noise {
        sigma: f64,
    },
    Haze {
        beta: f64,
        airlight: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_near"))]
        near: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_far"))]
        far: f64,
    },
    Rain(RainSpec),
    Blur {
        kernel: BlurKernel,
    },
    Lowlight {
        gamma: f64,
        scale: f64,
    },
    Composite {
        steps: Vec<DegradationSpec>,
    },
}

#[cfg(feature = "serde")]
fn default_near() -> f64 {
    0.3
}

#[cfg(feature = "serde")]
fn default_far() -> f64 {
    1.5
}

impl DegradationSpec {
    /// Gaussian noise at `sigma` on the 0–255 scale.
    pub fn noise(sigma: f64) -> Self {
        DegradationSpec::Noise { sigma }
    }

    /// Haze with the default depth range.
    pub fn haze(beta: f64, airlight: f64) -> Self {
        DegradationSpec::Haze {
            beta,
            airlight,
            near: 0.3,
            far: 1.5,
        }
    }

    pub fn rain(spec: RainSpec) -> Self {
        DegradationSpec::Rain(spec)
    }

    /// Short label used to group evaluation results.
    pub fn tag(&self) -> String {
        match self {
            DegradationSpec::Noise { .. } => "noise".into(),
            DegradationSpec::Haze { .. } => "haze".into(),
            DegradationSpec::Rain(_) => "rain".into(),
            DegradationSpec::Blur { .. } => "blur".into(),
            DegradationSpec::Lowlight { .. } => "lowlight".into(),
            DegradationSpec::Composite { steps } => {
                let parts: Vec<String> = steps.iter().map(|s| s.tag()).collect();
                parts.join("+")
            }
        }
    }

    pub fn apply(&self, img: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
        match self {
            DegradationSpec::Noise { sigma } => add_gaussian_noise(img, *sigma, seed),
            DegradationSpec::Haze {
                beta,
                airlight,
                near,
                far,
            } => {
                let (_, h, w) = image_dims(img)?;
                let depth = haze_depth(h, w, *near, *far, 0.15 * (far - near).abs(), seed);
                synth_haze(img, *beta, *airlight, &depth)
            }
            DegradationSpec::Rain(spec) => synth_rain(img, spec, seed),
            DegradationSpec::Blur { kernel } => synth_blur(img, &kernel.build()?),
            DegradationSpec::Lowlight { gamma, scale } => synth_lowlight(img, *gamma, *scale),
            DegradationSpec::Composite { steps } => compose_degradations(img, steps, seed),
        }
    }
}

/// Per-step seed so that composite members draw independent randomness.
fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Apply `specs` in order.
pub fn compose_degradations(img: &Tensor<f64>, specs: &[DegradationSpec], seed: u64) -> Result<Tensor<f64>> {
    let mut out = img.clone();
    for (i, spec) in specs.iter().enumerate() {
        out = spec.apply(&out, step_seed(seed, i))?;
    }
    Ok(out)
}

/// A clean image with its degraded counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub clean: Tensor<f64>,
    pub degraded: Tensor<f64>,
    pub tag: String,
}

impl SamplePair {
    pub fn new(clean: Tensor<f64>, degraded: Tensor<f64>, tag: impl Into<String>) -> Result<Self> {
        image_dims(&clean)?;
        if clean.shape() != degraded.shape() {
            return Err(shape_err!("clean {:?} vs degraded {:?}", clean.shape(), degraded.shape()));
        }
        Ok(Self {
            clean,
            degraded,
            tag: tag.into(),
        })
    }

    pub fn synthesize(clean: Tensor<f64>, spec: &DegradationSpec, seed: u64) -> Result<Self> {
        let degraded = spec.apply(&clean, seed)?;
        Self::new(clean, degraded, spec.tag())
    }
}

/// Batched patches: `degraded` and `clean` are `N×3×p×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub degraded: Tensor<f64>,
    pub clean: Tensor<f64>,
    pub tags: Vec<String>,
}

fn crop_flip(img: &Tensor<f64>, top: usize, left: usize, p: usize, flip_h: bool, flip_v: bool) -> Vec<f64> {
    let (c, _, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let h = img.shape()[1];
    let mut out = Vec::with_capacity(c * p * p);
    for ch in 0..c {
        for y in 0..p {
            let sy = top + if flip_v { p - 1 - y } else { y };
            for x in 0..p {
                let sx = left + if flip_h { p - 1 - x } else { x };
                out.push(img.data()[ch * h * w + sy * w + sx]);
            }
        }
    }
    out
}

/// One random `patch×patch` window (and optional flips) per pair, applied
/// identically to both members.
pub fn make_training_batch(pairs: &[&SamplePair], patch: usize, flips: bool, seed: u64) -> Result<Batch> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut r = rng(seed);
    let (mut deg, mut cln, mut tags) = (Vec::new(), Vec::new(), Vec::new());
    for pair in pairs {
        let (_, h, w) = image_dims(&pair.clean)?;
        if patch == 0 || patch > h || patch > w || patch % 2 != 0 {
            return Err(Error::PatchTooLarge { patch, height: h, width: w });
        }
        let top = r.random_range(0..=h - patch);
        let left = r.random_range(0..=w - patch);
        let (fh, fv) = if flips { (r.random_bool(0.5), r.random_bool(0.5)) } else { (false, false) };
        deg.extend(crop_flip(&pair.degraded, top, left, patch, fh, fv));
        cln.extend(crop_flip(&pair.clean, top, left, patch, fh, fv));
        tags.push(pair.tag.clone());
    }
    let shape = [pairs.len(), 3, patch, patch];
    Ok(Batch {
        degraded: Tensor::new(&shape, deg)?,
        clean: Tensor::new(&shape, cln)?,
        tags,
    })
}

/// A smooth synthetic clean image: blended colour gradients plus a few soft
/// discs and a stripe pattern, fully determined by `seed`.
pub fn synthetic_scene(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let base: [[f64; 3]; 4] = core::array::from_fn(|_| core::array::from_fn(|_| r.random_range(0.15..0.85)));
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                r.random_range(0.0..h as f64),
                r.random_range(0.0..w as f64),
                r.random_range(0.15..0.35) * h.min(w) as f64,
                core::array::from_fn(|_| r.random_range(-0.3..0.3)),
            )
        })
        .collect();
    let freq = r.random_range(1.0..3.0);
    let phase = r.random_range(0.0..core::f64::consts::TAU);
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h {
        let fy = i as f64 / h.max(2) as f64;
        for j in 0..w {
            let fx = j as f64 / w.max(2) as f64;
            let stripe = 0.08 * libm::sin(core::f64::consts::TAU * freq * (fx + 0.5 * fy) + phase);
            for (ch, plane) in data.chunks_mut(h * w).enumerate() {
                let mut v = base[0][ch] * (1.0 - fx) * (1.0 - fy)
                    + base[1][ch] * fx * (1.0 - fy)
                    + base[2][ch] * (1.0 - fx) * fy
                    + base[3][ch] * fx * fy
                    + stripe;
                for &(cy, cx, rad, col) in &discs {
                    let d2 = ((i as f64 - cy) * (i as f64 - cy) + (j as f64 - cx) * (j as f64 - cx)) / (rad * rad);
                    v += col[ch] / (1.0 + libm::exp((d2 - 1.0) * 6.0));
                }
                plane[i * w + j] = clip(v);
            }
        }
    }
    Tensor::new(&[3, h, w], data).expect("3*h*w values")
}

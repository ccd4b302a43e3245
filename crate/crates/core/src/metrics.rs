//! Image fidelity metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Returned when the two images are (numerically) identical.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over all elements.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse < 1e-12 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * libm::log10(peak * peak / mse))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = libm::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Channel mean of a `C×H×W` image (or of a single-sample `1×C×H×W` batch).
fn grayscale<T: Scalar>(img: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(shape_err!("expected a single C×H×W image, got {:?}", img.shape())),
    };
    let mut g = vec![0.0; h * w];
    for ch in 0..c {
        for (i, v) in g.iter_mut().enumerate() {
            *v += img.data()[ch * h * w + i].as_f64() / c as f64;
        }
    }
    Ok((g, h, w))
}

/// Valid-mode separable filtering of an `h×w` plane with the SSIM window.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * x[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(i + k) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity of the grayscale (channel-mean) images, Gaussian
/// window 11×11 with σ = 1.5, peak 1, statistics over fully covered windows.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    let (x, h, w) = grayscale(a)?;
    let (y, _, _) = grayscale(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(h, w));
    }
    let win = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mx = filter_valid(&x, h, w, &win);
    let my = filter_valid(&y, h, w, &win);
    let sxx = filter_valid(&prod(&x, &x), h, w, &win);
    let syy = filter_valid(&prod(&y, &y), h, w, &win);
    let sxy = filter_valid(&prod(&x, &y), h, w, &win);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

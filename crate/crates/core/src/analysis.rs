//! Frequency profile of the residual between a clean and a degraded image.
//!
//! The channel-averaged magnitude spectrum of the residual is centered,
//! resampled to a fixed 320×320 grid and summarised by the mean magnitude on
//! centered squares of half-side `L = 1..=160`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;

use crate::error::{shape_err, Result};
use crate::kernels::resize_bilinear;
use crate::spectral::fft1d;
use crate::tensor::Tensor;

/// Side of the normalised spectrum grid.
pub const GRID: usize = 320;
/// Number of squares, one per half-side `1..=CURVE_LEN`.
pub const CURVE_LEN: usize = GRID / 2;
/// Smallest half-side included in the flatness statistic.
pub const FLATNESS_FROM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveReport {
    pub tag: String,
    /// `curve[L - 1]` is the mean magnitude on square `L`.
    pub curve: Vec<f64>,
    /// Coefficient of variation of the curve over `L ∈ [8, 160]`.
    pub flatness: f64,
    /// Spearman rank correlation between curve value and `L` over all squares.
    pub monotonicity: f64,
    /// Whether squares are filled (`≤ L`) rather than perimeters (`= L`).
    pub filled: bool,
}

/// Square index of grid row/column `i`: rows 159 and 160 straddle the center
/// and both belong to square 1.
pub fn square_index(i: usize) -> usize {
    if i >= CURVE_LEN {
        i - CURVE_LEN + 1
    } else {
        CURVE_LEN - i
    }
}

/// Centered magnitude spectrum of one plane (DC moved to `(h/2, w/2)`; odd
/// extents allowed).
fn centered_magnitude(plane: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut row = vec![Complex::new(0.0, 0.0); w];
    for i in 0..h {
        row.copy_from_slice(&buf[i * w..(i + 1) * w]);
        fft1d(&mut row, false)?;
        buf[i * w..(i + 1) * w].copy_from_slice(&row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        fft1d(&mut col, false)?;
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[((i + h / 2) % h) * w + (j + w / 2) % w] = buf[i * w + j].norm();
        }
    }
    Ok(out)
}

/// Channel-averaged, centered residual magnitude resampled to `GRID×GRID`.
pub fn residual_spectrum(clean: &Tensor<f64>, degraded: &Tensor<f64>) -> Result<Tensor<f64>> {
    if clean.shape() != degraded.shape() {
        return Err(shape_err!("clean {:?} vs degraded {:?}", clean.shape(), degraded.shape()));
    }
    let (c, h, w) = match *clean.shape() {
        [c, h, w] if c > 0 && h > 0 && w > 0 => (c, h, w),
        _ => return Err(shape_err!("expected C×H×W image, got {:?}", clean.shape())),
    };
    let mut avg = vec![0.0; h * w];
    for ch in 0..c {
        let plane: Vec<f64> = (0..h * w)
            .map(|i| clean.data()[ch * h * w + i] - degraded.data()[ch * h * w + i])
            .collect();
        for (a, m) in avg.iter_mut().zip(centered_magnitude(&plane, h, w)?) {
            *a += m / c as f64;
        }
    }
    Tensor::new(&[GRID, GRID], resize_bilinear(&avg, 1, h, w, GRID, GRID))
}

/// Mean value on each square (perimeter, or filled square when `filled`).
pub fn square_curve(spectrum: &Tensor<f64>, filled: bool) -> Result<Vec<f64>> {
    if spectrum.shape() != [GRID, GRID] {
        return Err(shape_err!("expected {}x{} spectrum, got {:?}", GRID, GRID, spectrum.shape()));
    }
    let mut sums = vec![0.0; CURVE_LEN + 1];
    let mut counts = vec![0usize; CURVE_LEN + 1];
    for i in 0..GRID {
        for j in 0..GRID {
            let l = square_index(i).max(square_index(j));
            sums[l] += spectrum.data()[i * GRID + j];
            counts[l] += 1;
        }
    }
    if filled {
        for l in 1..=CURVE_LEN {
            sums[l] += sums[l - 1];
            counts[l] += counts[l - 1];
        }
    }
    Ok((1..=CURVE_LEN).map(|l| sums[l] / counts[l] as f64).collect())
}

/// Population coefficient of variation; zero for an all-zero series.
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    libm::sqrt(var) / mean.abs()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman correlation (Pearson correlation of average ranks). Zero when
/// either series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Full square-curve report for one image pair.
pub fn residual_spectrum_curve(
    clean: &Tensor<f64>,
    degraded: &Tensor<f64>,
    tag: &str,
    filled: bool,
) -> Result<CurveReport> {
    let spectrum = residual_spectrum(clean, degraded)?;
    let curve = square_curve(&spectrum, filled)?;
    let ls: Vec<f64> = (1..=CURVE_LEN).map(|l| l as f64).collect();
    Ok(CurveReport {
        tag: tag.into(),
        flatness: coefficient_of_variation(&curve[FLATNESS_FROM - 1..]),
        monotonicity: spearman(&curve, &ls),
        curve,
        filled,
    })
}

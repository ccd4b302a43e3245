//! Two-dimensional Fourier transforms, spectrum centering and the adaptive
//! rectangular low/high frequency masks.
//!
//! Conventions: the forward transform is unnormalised,
//! `F[u,v] = Σ x[h,w]·exp(−2πi(uh/H + vw/W))`, and the inverse carries the
//! `1/(HW)` factor. Masks live in the centered layout (DC at `(H/2, W/2)`).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Complex spectrum stored as two real tensors of identical shape. The two
/// trailing axes are the transformed `H×W` axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<T = f64> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Scalar> ComplexSpectrum<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() || re.rank() < 2 {
            return Err(shape_err!("spectrum parts {:?} and {:?}", re.shape(), im.shape()));
        }
        Ok(Self { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    fn dims(&self) -> (usize, usize, usize) {
        plane_dims(self.shape())
    }

    fn from_complex(shape: &[usize], data: &[Complex<T>]) -> Self {
        let re = data.iter().map(|c| c.re).collect();
        let im = data.iter().map(|c| c.im).collect();
        Self {
            re: Tensor::new(shape, re).expect("shape checked by caller"),
            im: Tensor::new(shape, im).expect("shape checked by caller"),
        }
    }

    fn to_complex(&self) -> Vec<Complex<T>> {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&re, &im)| Complex::new(re, im))
            .collect()
    }

    /// Magnitude `|F|` per bin.
    pub fn magnitude(&self) -> Tensor<T> {
        self.re
            .zip_map(&self.im, |a, b| (a * a + b * b).sqrt())
            .expect("parts share a shape")
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        let a = self.re.max_abs_diff(&other.re)?;
        let b = self.im.max_abs_diff(&other.im)?;
        Some(a.max(b))
    }
}

/// (planes, H, W) for a tensor whose trailing axes are a 2D grid.
fn plane_dims(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    (shape[..r - 2].iter().product(), h, w)
}

fn twiddle<T: Scalar>(k: usize, n: usize, sign: f64) -> Complex<T> {
    // Reduce the angle exactly before evaluating to keep large-n twiddles accurate.
    let ang = sign * 2.0 * PI * ((k % n) as f64) / n as f64;
    Complex::new(T::of(libm::cos(ang)), T::of(libm::sin(ang)))
}

fn smallest_factor(n: usize) -> usize {
    let mut p = 2;
    while p * p <= n {
        if n % p == 0 {
            return p;
        }
        p += 1;
    }
    n
}

/// In-place unnormalised 1D DFT. `inverse` flips the exponent sign only.
pub fn fft1d<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) -> Result<()> {
    let n = buf.len();
    if n == 0 {
        return Err(Error::UnsupportedSize(0));
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    if n.is_power_of_two() {
        radix2(buf, sign);
    } else {
        let out = mixed_radix(buf, sign);
        buf.copy_from_slice(&out);
    }
    Ok(())
}

fn radix2<T: Scalar>(buf: &mut [Complex<T>], sign: f64) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let tw: Vec<Complex<T>> = (0..half).map(|k| twiddle(k, len, sign)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * tw[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

/// Decimation-in-time on the smallest prime factor, direct DFT for primes.
fn mixed_radix<T: Scalar>(x: &[Complex<T>], sign: f64) -> Vec<Complex<T>> {
    let n = x.len();
    let p = smallest_factor(n);
    if p == n {
        return (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (j, &v)| {
                        acc + v * twiddle(j * k, n, sign)
                    })
            })
            .collect();
    }
    let m = n / p;
    let subs: Vec<Vec<Complex<T>>> = (0..p)
        .map(|r| {
            let sub: Vec<Complex<T>> = (0..m).map(|j| x[j * p + r]).collect();
            if m.is_power_of_two() {
                let mut s = sub;
                radix2(&mut s, sign);
                s
            } else {
                mixed_radix(&sub, sign)
            }
        })
        .collect();
    (0..n)
        .map(|k| {
            subs.iter()
                .enumerate()
                .fold(Complex::new(T::zero(), T::zero()), |acc, (r, s)| {
                    acc + s[k % m] * twiddle(r * k, n, sign)
                })
        })
        .collect()
}

fn fft2_planes<T: Scalar>(data: &mut [Complex<T>], h: usize, w: usize, inverse: bool) -> Result<()> {
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for plane in data.chunks_mut(h * w) {
        for row in plane.chunks_mut(w) {
            fft1d(row, inverse)?;
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = plane[y * w + x];
            }
            fft1d(&mut col, inverse)?;
            for y in 0..h {
                plane[y * w + x] = col[y];
            }
        }
    }
    Ok(())
}

/// Forward 2D transform over the two trailing axes, one plane at a time.
pub fn fft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    if x.rank() < 2 {
        return Err(shape_err!("fft2 needs rank >= 2, got {:?}", x.shape()));
    }
    let (_, h, w) = plane_dims(x.shape());
    let mut buf: Vec<Complex<T>> = x.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_planes(&mut buf, h, w, false)?;
    Ok(ComplexSpectrum::from_complex(x.shape(), &buf))
}

/// Inverse 2D transform with `1/(HW)` normalisation. Returns the real part and
/// the largest discarded imaginary magnitude.
pub fn ifft2<T: Scalar>(spec: &ComplexSpectrum<T>) -> Result<(Tensor<T>, f64)> {
    let (_, h, w) = spec.dims();
    let mut buf = spec.to_complex();
    fft2_planes(&mut buf, h, w, true)?;
    let inv = T::of(1.0 / (h * w) as f64);
    let mut max_im = 0.0f64;
    let re = buf
        .iter()
        .map(|c| {
            max_im = max_im.max((c.im * inv).abs().as_f64());
            c.re * inv
        })
        .collect();
    Ok((Tensor::new(spec.shape(), re)?, max_im))
}

fn roll_planes<T: Scalar>(x: &Tensor<T>, dy: usize, dx: usize) -> Tensor<T> {
    let (_, h, w) = plane_dims(x.shape());
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        for y in 0..h {
            for xx in 0..w {
                dst[((y + dy) % h) * w + (xx + dx) % w] = src[y * w + xx];
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

fn check_even(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err!("need a 2D grid, got {:?}", shape));
    }
    let (_, h, w) = plane_dims(shape);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddExtent(h, w));
    }
    Ok((h, w))
}

/// Move the DC bin from `(0, 0)` to `(H/2, W/2)` on every trailing plane.
pub fn fftshift_tensor<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = check_even(x.shape())?;
    Ok(roll_planes(x, h / 2, w / 2))
}

/// Inverse of [`fftshift_tensor`]; identical permutation on even extents.
pub fn ifftshift_tensor<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = check_even(x.shape())?;
    Ok(roll_planes(x, h - h / 2, w - w / 2))
}

pub fn fftshift<T: Scalar>(f: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    Ok(ComplexSpectrum {
        re: fftshift_tensor(&f.re)?,
        im: fftshift_tensor(&f.im)?,
    })
}

pub fn ifftshift<T: Scalar>(f: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    Ok(ComplexSpectrum {
        re: ifftshift_tensor(&f.re)?,
        im: ifftshift_tensor(&f.im)?,
    })
}

/// Direct quadruple-loop DFT in `f64`, the reference every fast path is checked against.
pub fn dft2_oracle(x: &Tensor<f64>) -> Result<ComplexSpectrum<f64>> {
    if x.rank() < 2 {
        return Err(shape_err!("dft2 needs rank >= 2, got {:?}", x.shape()));
    }
    let (_, h, w) = plane_dims(x.shape());
    let mut re = Vec::with_capacity(x.len());
    let mut im = Vec::with_capacity(x.len());
    for plane in x.data().chunks(h * w) {
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        // exact rational phase (uy/H + vx/W) mod 1
                        let num = ((u * y) % h) * w + ((v * xx) % w) * h;
                        let ang = -2.0 * PI * (num % (h * w)) as f64 / (h * w) as f64;
                        let val = plane[y * w + xx];
                        sr += val * libm::cos(ang);
                        si += val * libm::sin(ang);
                    }
                }
                re.push(sr);
                im.push(si);
            }
        }
    }
    ComplexSpectrum::new(Tensor::new(x.shape(), re)?, Tensor::new(x.shape(), im)?)
}

/// How the low-frequency rectangle is materialised.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MaskShape {
    /// Binary rectangle with rounded half-extents.
    Hard,
    /// Product of two logistic ramps with temperature `tau`; differentiable in α and β.
    Soft { tau: f64 },
}

/// Complementary centered masks selecting low (`m_low`) and high (`m_high`) frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask<T = f64> {
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub shape: MaskShape,
    pub m_low: Tensor<T>,
    pub m_high: Tensor<T>,
}

/// Half-extents `(a, b)` of the hard rectangle, rounded half away from zero.
pub fn hard_half_extents(alpha: f64, beta: f64, h: usize, w: usize, k: f64) -> (usize, usize) {
    (
        libm::round(alpha * h as f64 / k) as usize,
        libm::round(beta * w as f64 / k) as usize,
    )
}

/// Hard low-pass mask with explicit half-extents: ones on rows `H/2−a ..= H/2+a`
/// and columns `W/2−b ..= W/2+b` (clipped to the grid).
pub fn hard_low_mask<T: Scalar>(h: usize, w: usize, a: usize, b: usize) -> Tensor<T> {
    let (ch, cw) = (h / 2, w / 2);
    let mut m = vec![T::zero(); h * w];
    for i in 0..h {
        if i.abs_diff(ch) > a {
            continue;
        }
        for j in 0..w {
            if j.abs_diff(cw) <= b {
                m[i * w + j] = T::one();
            }
        }
    }
    Tensor::new(&[h, w], m).expect("h*w values")
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Soft low-pass weight at centered offsets `(di, dj)` for continuous half-extents `(a, b)`.
pub fn soft_low_value(a: f64, b: f64, di: f64, dj: f64, tau: f64) -> f64 {
    logistic((a + 0.5 - di) / tau) * logistic((b + 0.5 - dj) / tau)
}

/// Partial derivatives of [`soft_low_value`] with respect to `a` and `b`.
pub fn soft_low_grad(a: f64, b: f64, di: f64, dj: f64, tau: f64) -> (f64, f64) {
    let sa = logistic((a + 0.5 - di) / tau);
    let sb = logistic((b + 0.5 - dj) / tau);
    (sa * (1.0 - sa) / tau * sb, sb * (1.0 - sb) / tau * sa)
}

/// Soft low-pass mask over an `h×w` centered grid.
pub fn soft_low_mask<T: Scalar>(h: usize, w: usize, a: f64, b: f64, tau: f64) -> Tensor<T> {
    let (ch, cw) = (h / 2, w / 2);
    let mut m = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let v = soft_low_value(a, b, i.abs_diff(ch) as f64, j.abs_diff(cw) as f64, tau);
            m.push(T::of(v));
        }
    }
    Tensor::new(&[h, w], m).expect("h*w values")
}

/// Build the complementary low/high masks sized by the factors `alpha`, `beta`.
pub fn build_frequency_masks<T: Scalar>(
    alpha: f64,
    beta: f64,
    h: usize,
    w: usize,
    k: f64,
    shape: MaskShape,
) -> Result<FrequencyMask<T>> {
    for (name, value) in [("alpha", alpha), ("beta", beta)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidRange { name, value });
        }
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddExtent(h, w));
    }
    if k <= 0.0 {
        return Err(Error::InvalidArgument(alloc::format!("mask divisor k = {k}")));
    }
    let m_low = match shape {
        MaskShape::Hard => {
            let (a, b) = hard_half_extents(alpha, beta, h, w, k);
            hard_low_mask(h, w, a, b)
        }
        MaskShape::Soft { tau } => {
            if tau <= 0.0 {
                return Err(Error::InvalidArgument(alloc::format!("mask temperature tau = {tau}")));
            }
            soft_low_mask(h, w, alpha * h as f64 / k, beta * w as f64 / k, tau)
        }
    };
    let m_high = m_low.map(|v| T::one() - v);
    Ok(FrequencyMask {
        alpha,
        beta,
        k,
        shape,
        m_low,
        m_high,
    })
}

/// Mask a centered spectrum and return the real spatial reconstruction.
///
/// `mask` is either `H×W` (shared by every plane) or has one `H×W` plane per
/// leading index of its own shape, broadcast over the spectrum's channel axis
/// (`N×1×H×W` against `N×C×H×W`).
pub fn mask_apply_invert<T: Scalar>(f: &ComplexSpectrum<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (planes, h, w) = f.dims();
    let mplanes = mask_planes(mask, planes, h, w)?;
    let per_mask = planes / mplanes;
    let mut re = f.re.data().to_vec();
    let mut im = f.im.data().to_vec();
    for p in 0..planes {
        let m = &mask.data()[(p / per_mask) * h * w..(p / per_mask + 1) * h * w];
        for i in 0..h * w {
            re[p * h * w + i] = re[p * h * w + i] * m[i];
            im[p * h * w + i] = im[p * h * w + i] * m[i];
        }
    }
    let masked = ComplexSpectrum::new(Tensor::new(f.shape(), re)?, Tensor::new(f.shape(), im)?)?;
    Ok(ifft2(&ifftshift(&masked)?)?.0)
}

fn mask_planes<T: Scalar>(mask: &Tensor<T>, planes: usize, h: usize, w: usize) -> Result<usize> {
    let ms = mask.shape();
    if ms.len() < 2 || ms[ms.len() - 2] != h || ms[ms.len() - 1] != w {
        return Err(shape_err!("mask {:?} against {}x{} spectrum", ms, h, w));
    }
    let mplanes = mask.len() / (h * w);
    if mplanes == 0 || planes % mplanes != 0 {
        return Err(shape_err!("mask {:?} cannot broadcast over {} planes", ms, planes));
    }
    Ok(mplanes)
}

/// Forward pass of the differentiable spatial-domain frequency filter:
/// `y = Re(IFFT(ifftshift(mask) ⊙ FFT(x)))` per plane. Returns `y` and the
/// unshifted spectra of `x` (needed for the mask gradient).
pub fn filter_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    mask: &[T],
    mask_planes: usize,
) -> Result<(Vec<T>, Vec<Complex<T>>)> {
    let per_mask = planes / mask_planes;
    let unshift = unshift_masks(mask, mask_planes, h, w);
    let mut spectra: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_planes(&mut spectra, h, w, false)?;
    let mut buf = spectra.clone();
    for (p, plane) in buf.chunks_mut(h * w).enumerate() {
        let m = &unshift[(p / per_mask) * h * w..(p / per_mask + 1) * h * w];
        plane.iter_mut().zip(m).for_each(|(c, &mv)| *c = *c * mv);
    }
    fft2_planes(&mut buf, h, w, true)?;
    let inv = T::of(1.0 / (h * w) as f64);
    Ok((buf.iter().map(|c| c.re * inv).collect(), spectra))
}

/// Adjoint of [`filter_forward`]: gradient w.r.t. the input planes and w.r.t.
/// the centered masks (summed over the planes that share each mask).
#[allow(clippy::too_many_arguments)]
pub fn filter_backward<T: Scalar>(
    g: &[T],
    spectra: &[Complex<T>],
    planes: usize,
    h: usize,
    w: usize,
    mask: &[T],
    mask_planes: usize,
    want_x: bool,
    want_mask: bool,
) -> Result<(Option<Vec<T>>, Option<Vec<T>>)> {
    let per_mask = planes / mask_planes;
    let hw = h * w;
    let inv = T::of(1.0 / hw as f64);
    let unshift = unshift_masks(mask, mask_planes, h, w);
    let mut gspec: Vec<Complex<T>> = g.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_planes(&mut gspec, h, w, false)?;
    let gmask = want_mask.then(|| {
        let mut gm = vec![T::zero(); mask_planes * hw];
        for p in 0..planes {
            let dst = &mut gm[(p / per_mask) * hw..(p / per_mask + 1) * hw];
            for i in 0..hw {
                let s = spectra[p * hw + i];
                let gg = gspec[p * hw + i];
                // Re(S · conj(G)) / HW
                dst[i] = dst[i] + (s.re * gg.re + s.im * gg.im) * inv;
            }
        }
        // back to the centered layout
        let mut centered = vec![T::zero(); gm.len()];
        for (src, dst) in gm.chunks(hw).zip(centered.chunks_mut(hw)) {
            for y in 0..h {
                for x in 0..w {
                    dst[((y + h / 2) % h) * w + (x + w / 2) % w] = src[y * w + x];
                }
            }
        }
        centered
    });
    let gx = if want_x {
        for (p, plane) in gspec.chunks_mut(hw).enumerate() {
            let m = &unshift[(p / per_mask) * hw..(p / per_mask + 1) * hw];
            plane.iter_mut().zip(m).for_each(|(c, &mv)| *c = *c * mv);
        }
        fft2_planes(&mut gspec, h, w, true)?;
        Some(gspec.iter().map(|c| c.re * inv).collect())
    } else {
        None
    };
    Ok((gx, gmask))
}

fn unshift_masks<T: Scalar>(mask: &[T], mplanes: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); mask.len()];
    for p in 0..mplanes {
        let src = &mask[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // centered (y, x) holds unshifted bin (y - h/2, x - w/2)
                dst[((y + h - h / 2) % h) * w + (x + w - w / 2) % w] = src[y * w + x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| libm::sin(i as f64 * 0.37) + 0.1 * i as f64).collect()).unwrap()
    }

    #[test]
    fn impulse_transforms_to_all_ones() {
        let mut x = Tensor::<f64>::zeros(&[4, 4]);
        x.data_mut()[0] = 1.0;
        let f = fft2(&x).unwrap();
        assert!(f.re.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(f.im.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn constant_image_has_only_dc() {
        let x = Tensor::<f64>::full(&[4, 8], 0.75);
        let f = fft2(&x).unwrap();
        assert!((f.re.data()[0] - 0.75 * 32.0).abs() < 1e-12);
        let rest = f.magnitude().data()[1..].iter().cloned().fold(0.0, f64::max);
        assert!(rest < 1e-12);
    }

    #[test]
    fn all_ones_spectrum_inverts_to_impulse() {
        let spec = ComplexSpectrum::new(Tensor::<f64>::ones(&[4, 4]), Tensor::zeros(&[4, 4])).unwrap();
        let (x, im) = ifft2(&spec).unwrap();
        assert!((x.data()[0] - 1.0).abs() < 1e-15);
        assert!(x.data()[1..].iter().all(|v| v.abs() < 1e-15));
        assert!(im < 1e-15);
    }

    #[test]
    fn mixed_radix_sizes_match_oracle() {
        for &(h, w) in &[(6, 10), (3, 5), (12, 9), (7, 4)] {
            let x = ramp(&[h, w]);
            let fast = fft2(&x).unwrap();
            let slow = dft2_oracle(&x).unwrap();
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-9, "{h}x{w}");
        }
    }

    #[test]
    fn shift_moves_dc_to_center() {
        let mut x = Tensor::<f64>::zeros(&[4, 4]);
        x.data_mut()[0] = 1.0;
        let s = fftshift_tensor(&x).unwrap();
        assert_eq!(s.data()[2 * 4 + 2], 1.0);
        assert_eq!(ifftshift_tensor(&s).unwrap(), x);
        assert_eq!(fftshift_tensor(&Tensor::<f64>::zeros(&[3, 4])), Err(Error::OddExtent(3, 4)));
    }

    #[test]
    fn hard_mask_extents_follow_rounded_factors() {
        let m = build_frequency_masks::<f64>(1.0, 1.0, 128, 128, 128.0, MaskShape::Hard).unwrap();
        assert_eq!(m.m_low.sum(), 9.0);
        assert_eq!(m.m_low.data()[63 * 128 + 63], 1.0);
        assert_eq!(m.m_low.data()[65 * 128 + 65], 1.0);
        let dc = build_frequency_masks::<f64>(0.0, 0.0, 128, 128, 128.0, MaskShape::Hard).unwrap();
        assert_eq!(dc.m_low.sum(), 1.0);
        assert_eq!(dc.m_low.data()[64 * 128 + 64], 1.0);
        assert_eq!(dc.m_high.sum(), 128.0 * 128.0 - 1.0);
        // 0.5 rounds away from zero
        assert_eq!(hard_half_extents(0.5, 0.25, 2, 2, 2.0), (1, 0));
    }

    #[test]
    fn mask_factor_range_is_checked() {
        let err = build_frequency_masks::<f64>(1.2, 0.5, 8, 8, 128.0, MaskShape::Hard).unwrap_err();
        assert!(matches!(err, Error::InvalidRange { name: "alpha", .. }));
        assert!(build_frequency_masks::<f64>(0.5, -0.1, 8, 8, 128.0, MaskShape::Hard).is_err());
        assert_eq!(
            build_frequency_masks::<f64>(0.5, 0.5, 8, 6 + 1, 128.0, MaskShape::Hard).unwrap_err(),
            Error::OddExtent(8, 7)
        );
    }

    #[test]
    fn soft_mask_converges_to_hard_away_from_edges() {
        let (h, w, k) = (32, 32, 8.0);
        for &(alpha, beta) in &[(0.3, 0.7), (0.9, 0.1), (0.55, 0.55)] {
            let soft = build_frequency_masks::<f64>(alpha, beta, h, w, k, MaskShape::Soft { tau: 1e-3 }).unwrap();
            let (a, b) = (alpha * h as f64 / k, beta * w as f64 / k);
            for i in 0..h {
                for j in 0..w {
                    let di = i.abs_diff(h / 2) as f64;
                    let dj = j.abs_diff(w / 2) as f64;
                    // boundary bins sit within 0.05 of a ramp midpoint
                    if (di - (a + 0.5)).abs() < 0.05 || (dj - (b + 0.5)).abs() < 0.05 {
                        continue;
                    }
                    let hard = if di <= a + 0.5 && dj <= b + 0.5 { 1.0 } else { 0.0 };
                    assert!((soft.m_low.data()[i * w + j] - hard).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn soft_mask_gradient_matches_difference() {
        let (a, b, di, dj, tau) = (1.3, 0.4, 1.0, 0.0, 0.3);
        let (ga, gb) = soft_low_grad(a, b, di, dj, tau);
        let h = 1e-6;
        let na = (soft_low_value(a + h, b, di, dj, tau) - soft_low_value(a - h, b, di, dj, tau)) / (2.0 * h);
        let nb = (soft_low_value(a, b + h, di, dj, tau) - soft_low_value(a, b - h, di, dj, tau)) / (2.0 * h);
        assert!((ga - na).abs() < 1e-8 && (gb - nb).abs() < 1e-8);
    }

    #[test]
    fn identity_and_zero_masks() {
        let x = ramp(&[2, 8, 8]);
        let f = fftshift(&fft2(&x).unwrap()).unwrap();
        let full = mask_apply_invert(&f, &Tensor::ones(&[8, 8])).unwrap();
        assert!(full.max_abs_diff(&x).unwrap() < 1e-12);
        let none = mask_apply_invert(&f, &Tensor::zeros(&[8, 8])).unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filter_matches_mask_apply_invert() {
        let x = ramp(&[2, 3, 8, 8]);
        let masks: Vec<f64> = (0..2 * 64).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
        let mask = Tensor::new(&[2, 1, 8, 8], masks.clone()).unwrap();
        let (y, _) = filter_forward(x.data(), 6, 8, 8, &masks, 2).unwrap();
        let f = fftshift(&fft2(&x).unwrap()).unwrap();
        let reference = mask_apply_invert(&f, &mask).unwrap();
        let diff = y.iter().zip(reference.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}

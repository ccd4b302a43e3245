//! Fast transform against a direct DFT, and algebra of the frequency masks.

use std::f64::consts::PI;

use adair_core::spectral::{
    build_frequency_masks, dft2_oracle, fft2, fftshift, fftshift_tensor, ifft2, ifftshift_tensor, mask_apply_invert,
    MaskShape,
};
use adair_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POW2: [usize; 5] = [2, 4, 8, 16, 32];

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Textbook DFT of one real plane, independent of the library oracle.
fn direct_dft(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            for y in 0..h {
                for z in 0..w {
                    let ang = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * z) as f64 / w as f64);
                    re[u * w + v] += x[y * w + z] * ang.cos();
                    im[u * w + v] += x[y * w + z] * ang.sin();
                }
            }
        }
    }
    (re, im)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn fft_matches_direct_dft_on_power_of_two_grids() {
    for (i, &h) in POW2.iter().enumerate() {
        for (j, &w) in POW2.iter().enumerate() {
            let x = random(&[h, w], (10 * i + j) as u64);
            let f = fft2(&x).unwrap();
            let (re, im) = direct_dft(x.data(), h, w);
            let err = max_diff(f.re.data(), &re).max(max_diff(f.im.data(), &im));
            assert!(err < 1e-10, "{h}x{w}: {err:e}");
        }
    }
}

#[test]
fn fft_matches_direct_dft_on_mixed_radix_grids() {
    for (h, w) in [(6, 10), (12, 9), (3, 5), (20, 14)] {
        let x = random(&[h, w], (h * w) as u64);
        let f = fft2(&x).unwrap();
        let (re, im) = direct_dft(x.data(), h, w);
        let err = max_diff(f.re.data(), &re).max(max_diff(f.im.data(), &im));
        assert!(err < 1e-10, "{h}x{w}: {err:e}");
    }
}

#[test]
fn library_oracle_agrees_with_direct_dft() {
    let x = random(&[2, 6, 8], 3);
    let o = dft2_oracle(&x).unwrap();
    for p in 0..2 {
        let plane = &x.data()[p * 48..(p + 1) * 48];
        let (re, _) = direct_dft(plane, 6, 8);
        assert!(max_diff(&o.re.data()[p * 48..(p + 1) * 48], &re) < 1e-12);
    }
}

#[test]
fn parseval_and_round_trip() {
    for &n in &POW2 {
        let x = random(&[3, n, n], n as u64);
        let f = fft2(&x).unwrap();
        let space: f64 = x.data().iter().map(|v| v * v).sum();
        let freq: f64 = f.magnitude().data().iter().map(|m| m * m).sum::<f64>() / (n * n) as f64;
        assert!((space - freq).abs() / space < 1e-9, "parseval at {n}");
        let (back, imag) = ifft2(&f).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-10);
        assert!(imag < 1e-10);
    }
}

#[test]
fn shift_moves_dc_to_center_and_inverts() {
    let x = Tensor::<f64>::ones(&[8, 6]);
    let f = fftshift(&fft2(&x).unwrap()).unwrap();
    let mag = f.magnitude();
    assert!((mag.data()[4 * 6 + 3] - 48.0).abs() < 1e-12);
    assert!(mag.data().iter().enumerate().all(|(i, &v)| i == 27 || v.abs() < 1e-12));
    let y = random(&[2, 8, 6], 1);
    assert_eq!(ifftshift_tensor(&fftshift_tensor(&y).unwrap()).unwrap(), y);
}

#[test]
fn hard_masks_partition_the_spectrum() {
    for (alpha, beta) in [(0.0, 0.0), (0.3, 0.7), (1.0, 1.0), (0.51, 0.2)] {
        let m = build_frequency_masks::<f64>(alpha, beta, 16, 12, 4.0, MaskShape::Hard).unwrap();
        for (l, h) in m.m_low.data().iter().zip(m.m_high.data()) {
            assert_eq!(l + h, 1.0);
            assert!(*l == 0.0 || *l == 1.0);
        }
        // symmetric about the center bin: value at center+d equals center−d
        let (ch, cw) = (8usize, 6usize);
        for di in 0..ch {
            for dj in 0..cw {
                let a = m.m_low.data()[(ch + di) * 12 + cw + dj];
                let b = m.m_low.data()[(ch - di) * 12 + cw - dj];
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn masked_reconstructions_are_real_and_linear() {
    let x = random(&[3, 16, 16], 5);
    let f = fftshift(&fft2(&x).unwrap()).unwrap();
    for shape in [MaskShape::Hard, MaskShape::Soft { tau: 0.5 }] {
        let m = build_frequency_masks::<f64>(0.4, 0.6, 16, 16, 4.0, shape).unwrap();
        let low = mask_apply_invert(&f, &m.m_low).unwrap();
        let high = mask_apply_invert(&f, &m.m_high).unwrap();
        let sum = low.zip_map(&high, |a, b| a + b).unwrap();
        assert!(sum.max_abs_diff(&x).unwrap() < 1e-10, "{shape:?}");
    }
    // imaginary residual of a masked inverse transform of a real input
    let m = build_frequency_masks::<f64>(0.4, 0.6, 16, 16, 4.0, MaskShape::Hard).unwrap();
    let mut masked = f.clone();
    for p in 0..3 {
        for i in 0..256 {
            masked.re.data_mut()[p * 256 + i] *= m.m_low.data()[i];
            masked.im.data_mut()[p * 256 + i] *= m.m_low.data()[i];
        }
    }
    let unshifted = adair_core::spectral::ifftshift(&masked).unwrap();
    let (_, imag) = ifft2(&unshifted).unwrap();
    assert!(imag < 1e-10, "imaginary residual {imag:e}");
}

#[test]
fn mask_validation() {
    assert!(build_frequency_masks::<f64>(1.2, 0.5, 8, 8, 4.0, MaskShape::Hard).is_err());
    assert!(build_frequency_masks::<f64>(0.5, 0.5, 7, 8, 4.0, MaskShape::Hard).is_err());
    assert!(build_frequency_masks::<f64>(0.5, 0.5, 8, 8, 0.0, MaskShape::Hard).is_err());
}

//! PSNR and SSIM against direct formula implementations written here.

use adair_core::degrade::{add_gaussian_noise, synthetic_scene};
use adair_core::metrics::{psnr, ssim, PSNR_CAP};
use adair_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[c, h, w], (0..c * h * w).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

/// Direct two-dimensional windowed SSIM, no separable filtering.
fn ssim_direct(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let gray = |t: &Tensor<f64>| -> Vec<f64> {
        (0..h * w)
            .map(|i| (0..c).map(|ch| t.data()[ch * h * w + i]).sum::<f64>() / c as f64)
            .collect()
    };
    let (x, y) = (gray(a), gray(b));
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for top in 0..=h - 11 {
        for left in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wgt = win[i][j] / total;
                    let (p, q) = (x[(top + i) * w + left + j], y[(top + i) * w + left + j]);
                    mx += wgt * p;
                    my += wgt * q;
                    sxx += wgt * p * p;
                    syy += wgt * q * q;
                    sxy += wgt * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn ssim_matches_direct_formula() {
    let a = synthetic_scene(32, 32, 1);
    let b = add_gaussian_noise(&a, 30.0, 2).unwrap();
    let d = (ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs();
    assert!(d < 1e-8, "difference {d:e}");
    let c = random_image(3, 20, 27, 3);
    assert!((ssim(&a.clone(), &a).unwrap() - 1.0).abs() < 1e-12);
    let e = random_image(3, 20, 27, 4);
    assert!((ssim(&c, &e).unwrap() - ssim_direct(&c, &e)).abs() < 1e-8);
}

#[test]
fn psnr_matches_direct_formula() {
    let a = random_image(3, 9, 13, 5);
    let b = random_image(3, 9, 13, 6);
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    let expected = 10.0 * (1.0 / mse).log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - expected).abs() < 1e-12);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    assert!(psnr(&a, &Tensor::zeros(&[3, 9, 12]), 1.0).is_err());
}

#[test]
fn psnr_falls_as_noise_grows() {
    let clean = Tensor::<f64>::full(&[3, 32, 32], 0.5);
    let mut last = f64::INFINITY;
    for sigma in [1.0, 5.0, 10.0, 20.0, 40.0] {
        let p = psnr(&clean, &add_gaussian_noise(&clean, sigma, 7).unwrap(), 1.0).unwrap();
        assert!(p < last, "sigma {sigma}: {p} !< {last}");
        last = p;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_symmetric_and_bounded(seed_a in 0u64..1000, seed_b in 0u64..1000, h in 11usize..20, w in 11usize..20) {
        let a = random_image(3, h, w, seed_a);
        let b = random_image(3, h, w, seed_b + 1000);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!(ab < 1.0);
    }
}

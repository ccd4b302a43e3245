//! Randomised invariants of the tensor, transform and mask machinery.

use adair_core::spectral::{build_frequency_masks, fft2, ifft2, MaskShape};
use adair_core::{Graph, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_round_trip_any_size(x in (1usize..13, 1usize..13).prop_flat_map(|(h, w)| tensor(vec![2, h, w]))) {
        let (back, imag) = ifft2(&fft2(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-10);
        prop_assert!(imag < 1e-10);
    }

    #[test]
    fn shuffles_are_inverse(x in (1usize..3, 1usize..4, 1usize..4).prop_flat_map(|(n, h, w)| tensor(vec![n, 4, 2 * h, 2 * w]))) {
        let mut g = Graph::new();
        let v = g.constant(x.clone()).unwrap();
        let down = g.pixel_unshuffle(v, 2).unwrap();
        let up = g.pixel_shuffle(down, 2).unwrap();
        prop_assert_eq!(g.value(up), &x);
    }

    #[test]
    fn soft_and_hard_masks_are_complementary(alpha in 0.0f64..1.0, beta in 0.0f64..1.0, h in 1usize..9, w in 1usize..9, tau in 0.1f64..2.0) {
        for shape in [MaskShape::Hard, MaskShape::Soft { tau }] {
            let m = build_frequency_masks::<f64>(alpha, beta, 2 * h, 2 * w, 4.0, shape).unwrap();
            for (l, hi) in m.m_low.data().iter().zip(m.m_high.data()) {
                prop_assert!((0.0..=1.0).contains(l));
                prop_assert!((l + hi - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn broadcast_gradient_sums_over_expanded_axes(x in tensor(vec![2, 3, 2, 2]), b in tensor(vec![1, 3, 1, 1])) {
        let mut g = Graph::new();
        let xv = g.constant(x).unwrap();
        let bv = g.leaf(b, true).unwrap();
        let y = g.add(xv, bv).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        let gb = grads.get(bv).unwrap();
        prop_assert!(gb.data().iter().all(|&v| v == 8.0));
    }
}

//! Every differentiable tape operation against central differences in f64.

use adair_core::gradcheck::{finite_diff_check, DEFAULT_STEP};
use adair_core::kernels::{Pad2d, PadMode, PoolMode, PoolOver};
use adair_core::{ConvSpec, Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TOL: f64 = 1e-4;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Check `f` at `x` with the objective `Σ f(x) ⊙ R` for a fixed random `R`.
fn check<F>(name: &str, x: &Tensor<f64>, f: F)
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let shape = {
        let mut g = Graph::new();
        let v = g.constant(x.clone()).unwrap();
        let y = f(&mut g, v).unwrap();
        g.shape(y).to_vec()
    };
    let r = randn(&shape, 99);
    let err = finite_diff_check(
        |g, x| {
            let y = f(g, x)?;
            let w = g.constant(r.clone())?;
            let p = g.mul(y, w)?;
            g.sum(p)
        },
        x,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < TOL, "{name}: relative error {err:.3e}");
}

#[test]
fn broadcasting_binary_ops() {
    let big = randn(&[2, 4, 3, 3], 1);
    let small = uniform(&[1, 4, 1, 1], 0.5, 2.0, 2);
    let ops: [(&str, fn(&mut Graph<f64>, Var, Var) -> Result<Var>); 4] = [
        ("add", |g, a, b| g.add(a, b)),
        ("sub", |g, a, b| g.sub(a, b)),
        ("mul", |g, a, b| g.mul(a, b)),
        ("div", |g, a, b| g.div(a, b)),
    ];
    for (name, op) in ops {
        check(&format!("{name} lhs"), &big, |g, a| {
            let b = g.constant(small.clone())?;
            op(g, a, b)
        });
        check(&format!("{name} rhs"), &small, |g, b| {
            let a = g.constant(big.clone())?;
            op(g, a, b)
        });
    }
}

#[test]
fn scalar_and_pointwise_ops() {
    let x = randn(&[2, 3, 4, 4], 3);
    check("add_scalar", &x, |g, x| g.add_scalar(x, 0.7));
    check("mul_scalar", &x, |g, x| g.mul_scalar(x, -1.3));
    check("gelu", &x, |g, x| g.gelu(x));
    check("relu", &x, |g, x| g.relu(x));
    check("sigmoid", &x, |g, x| g.sigmoid(x));
    check("abs", &x, |g, x| g.abs(x));
}

#[test]
fn convolutions() {
    let x = randn(&[2, 4, 6, 6], 4);
    let w = randn(&[6, 2, 3, 3], 5);
    let b = randn(&[6], 6);
    let spec = ConvSpec::same(3).groups(2);
    check("conv x", &x, |g, x| {
        let (w, b) = (g.constant(w.clone())?, g.constant(b.clone())?);
        g.conv2d(x, w, Some(b), spec)
    });
    check("conv w", &w, |g, w| {
        let (x, b) = (g.constant(x.clone())?, g.constant(b.clone())?);
        g.conv2d(x, w, Some(b), spec)
    });
    check("conv bias", &b, |g, b| {
        let (x, w) = (g.constant(x.clone())?, g.constant(w.clone())?);
        g.conv2d(x, w, Some(b), spec)
    });
    let strided = ConvSpec { stride: 2, ..ConvSpec::same(3) };
    let wd = randn(&[3, 4, 3, 3], 7);
    check("conv stride 2", &x, |g, x| {
        let w = g.constant(wd.clone())?;
        g.conv2d(x, w, None, strided)
    });
    check("conv reflect", &x, |g, x| {
        let w = g.constant(wd.clone())?;
        g.conv2d(x, w, None, ConvSpec::same(3).reflect())
    });
    let dw = randn(&[4, 1, 3, 3], 8);
    check("depthwise", &x, |g, x| {
        let w = g.constant(dw.clone())?;
        g.conv2d(x, w, None, ConvSpec::same(3).groups(4))
    });
    // kernel much wider than the plane, as in the 7×7 spatial gate on 2×2 maps
    let tiny = randn(&[1, 2, 2, 2], 9);
    let wide = randn(&[1, 2, 7, 7], 10);
    check("wide kernel x", &tiny, |g, x| {
        let w = g.constant(wide.clone())?;
        g.conv2d(x, w, None, ConvSpec::same(7))
    });
    check("wide kernel w", &wide, |g, w| {
        let x = g.constant(tiny.clone())?;
        g.conv2d(x, w, None, ConvSpec::same(7))
    });
}

#[test]
fn padding_cropping_pooling() {
    let x = randn(&[2, 3, 5, 6], 11);
    let pad = Pad2d {
        top: 1,
        bottom: 2,
        left: 3,
        right: 0,
    };
    check("pad zero", &x, |g, x| g.pad(x, pad, PadMode::Zero));
    check("pad reflect", &x, |g, x| g.pad(x, pad, PadMode::Reflect));
    check("crop", &x, |g, x| g.crop(x, 1, 2, 3, 3));
    for mode in [PoolMode::Avg, PoolMode::Max] {
        for over in [PoolOver::Spatial, PoolOver::Channel] {
            check(&format!("pool {mode:?} {over:?}"), &x, |g, x| g.pool(x, mode, over));
        }
    }
}

#[test]
fn normalisations_and_softmax() {
    let x = randn(&[2, 4, 3, 3], 12);
    check("softmax last", &x, |g, x| g.softmax(x, 3));
    check("softmax channel", &x, |g, x| g.softmax(x, 1));
    check("l2_normalize", &x, |g, x| g.l2_normalize(x));
    let gain = uniform(&[4], 0.5, 1.5, 13);
    let offset = randn(&[4], 14);
    check("layer_norm x", &x, |g, x| {
        let (a, b) = (g.constant(gain.clone())?, g.constant(offset.clone())?);
        g.layer_norm(x, a, b)
    });
    check("layer_norm gain", &gain, |g, a| {
        let (x, b) = (g.constant(x.clone())?, g.constant(offset.clone())?);
        g.layer_norm(x, a, b)
    });
    check("layer_norm offset", &offset, |g, b| {
        let (x, a) = (g.constant(x.clone())?, g.constant(gain.clone())?);
        g.layer_norm(x, a, b)
    });
}

#[test]
fn matmul_both_layouts() {
    let a = randn(&[2, 2, 3, 5], 15);
    let bt = randn(&[2, 2, 4, 5], 16);
    let b = randn(&[2, 2, 5, 4], 17);
    check("matmul a (b transposed)", &a, |g, a| {
        let b = g.constant(bt.clone())?;
        g.matmul(a, b, true)
    });
    check("matmul b (transposed)", &bt, |g, b| {
        let a = g.constant(a.clone())?;
        g.matmul(a, b, true)
    });
    check("matmul a", &a, |g, a| {
        let b = g.constant(b.clone())?;
        g.matmul(a, b, false)
    });
    check("matmul b", &b, |g, b| {
        let a = g.constant(a.clone())?;
        g.matmul(a, b, false)
    });
}

#[test]
fn layout_ops_and_reductions() {
    let x = randn(&[2, 4, 6, 6], 18);
    check("reshape", &x, |g, x| g.reshape(x, &[2, 2, 2, 36]));
    check("pixel_unshuffle", &x, |g, x| g.pixel_unshuffle(x, 2));
    check("pixel_shuffle", &x, |g, x| g.pixel_shuffle(x, 2));
    let other = randn(&[2, 1, 6, 6], 19);
    check("concat first", &x, |g, x| {
        let o = g.constant(other.clone())?;
        g.concat_channels(&[x, o])
    });
    check("concat second", &other, |g, o| {
        let x = g.constant(x.clone())?;
        g.concat_channels(&[x, o, x])
    });
    check("sum", &x, |g, x| g.sum(x));
    check("mean", &x, |g, x| g.mean(x));
    check("resize down", &x, |g, x| g.resize_bilinear(x, 3, 4));
    check("resize up", &x, |g, x| g.resize_bilinear(x, 9, 8));
}

#[test]
fn frequency_ops() {
    let x = randn(&[2, 3, 6, 6], 20);
    let mask = uniform(&[2, 1, 6, 6], 0.0, 1.0, 21);
    check("freq_filter x", &x, |g, x| {
        let m = g.constant(mask.clone())?;
        g.freq_filter(x, m)
    });
    check("freq_filter mask", &mask, |g, m| {
        let x = g.constant(x.clone())?;
        g.freq_filter(x, m)
    });
    let factors = uniform(&[2, 2, 1, 1], 0.1, 0.9, 22);
    check("soft_mask", &factors, |g, f| g.soft_mask(f, 6, 6, 4.0, 0.5));
    check("soft_mask into filter", &factors, |g, f| {
        let m = g.soft_mask(f, 6, 6, 4.0, 0.5)?;
        let x = g.constant(x.clone())?;
        g.freq_filter(x, m)
    });
}

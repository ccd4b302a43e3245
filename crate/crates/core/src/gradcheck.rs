//! Central finite-difference verification of tape gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::aflb::{Aflb, BlockConfig, HlUnit, LhUnit, MaskMode, Merge, Mgb};
use crate::autodiff::{Graph, Var};
use crate::blocks::{Attention, Gdfn, Mdta, TransformerBlock};
use crate::error::{Error, Result};
use crate::network::{AdaIr, ModelConfig};
use crate::params::{ParamBuilder, ParamLayout, ParamStore, Session};
use crate::tensor::Tensor;

/// Step used by every gradient check in the crate.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradient magnitude below which errors are measured in absolute terms.
/// Central differences in `f64` carry round-off noise of roughly
/// `1e-16 · |f| / h`, i.e. about `1e-9` for unit-scale objectives at the
/// default step, so a relative comparison is meaningless for smaller values.
pub const GRAD_FLOOR: f64 = 1e-5;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`
    /// over the checked coordinates.
    pub max_rel_err: f64,
    /// Coordinate attaining the maximum.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn eval<F>(f: &mut F, x: Tensor<f64>) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x, false)?;
    let out = f(&mut g, xv)?;
    g.value(out).item().ok_or_else(|| Error::NonScalarLoss(g.shape(out).to_vec()))
}

/// Compare the tape gradient of the scalar function `f` at `x` with central
/// differences of step `h`. `coords` restricts the comparison to a subset of
/// flat indices; `None` checks all of them.
pub fn finite_diff_check_at<F>(mut f: F, x: &Tensor<f64>, h: f64, coords: Option<&[usize]>) -> Result<GradCheck>
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true)?;
    let out = f(&mut g, xv)?;
    let grad = g.backward(out)?.wrt(xv);

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut check = GradCheck {
        max_rel_err: 0.0,
        worst: 0,
        analytic: Vec::with_capacity(coords.len()),
        numeric: Vec::with_capacity(coords.len()),
    };
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&mut f, plus)? - eval(&mut f, minus)?) / (2.0 * h);
        let analytic = grad.data()[i];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        if err > check.max_rel_err || check.analytic.is_empty() {
            check.max_rel_err = err.max(check.max_rel_err);
            check.worst = i;
        }
        check.analytic.push(analytic);
        check.numeric.push(numeric);
    }
    Ok(check)
}

/// Maximum relative error over all coordinates of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    finite_diff_check_at(f, x, h, None).map(|c| c.max_rel_err)
}

/// Finite-difference agreement of one building block, over its input(s) and
/// a sample of its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub input_err: f64,
    pub param_err: f64,
    pub tolerance: f64,
    /// Where the largest error occurred, with the analytic and numeric values.
    pub worst: String,
}

impl BlockReport {
    pub fn max_err(&self) -> f64 {
        self.input_err.max(self.param_err)
    }

    pub fn passed(&self) -> bool {
        self.max_err() < self.tolerance
    }

    fn absorb(mut self, other: BlockReport) -> Self {
        if other.max_err() > self.max_err() {
            self.worst = other.worst;
        }
        self.input_err = self.input_err.max(other.input_err);
        self.param_err = self.param_err.max(other.param_err);
        self
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// How many coordinates of each tensor to probe.
#[derive(Clone, Copy)]
struct Budget {
    input: usize,
    per_param: usize,
    params: usize,
}

const SMALL: Budget = Budget {
    input: usize::MAX,
    per_param: 4,
    params: usize::MAX,
};

fn pick(rng: &mut ChaCha8Rng, len: usize, budget: usize) -> Vec<usize> {
    if len <= budget {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, budget).into_vec()
    }
}

/// Check `f` (mapping one input node to an output node) against central
/// differences. The scalar objective is `Σ out ⊙ R` for a fixed random `R`.
/// Every weight is jittered first so that zero biases, unit gains and other
/// symmetric starting points cannot hide errors.
fn check_block<F>(
    name: &str,
    layout: ParamLayout,
    input: Tensor<f64>,
    rng: &mut ChaCha8Rng,
    tolerance: f64,
    budget: Budget,
    f: F,
) -> Result<BlockReport>
where
    F: Fn(&mut Session<'_, '_, f64>, Var) -> Result<Var>,
{
    let mut store = ParamStore::<f64>::materialize(layout, rng.random());
    for v in store.values_mut() {
        let jitter = random(rng, v.shape(), 0.1);
        *v = v.zip_map(&jitter, |a, b| a + b)?;
    }
    let store = store;
    let out_shape = {
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, false);
        let x = s.constant(input.clone())?;
        let y = f(&mut s, x)?;
        s.shape(y).to_vec()
    };
    let weights = random(rng, &out_shape, 1.0);
    let objective = |s: &mut Session<'_, '_, f64>, y: Var| -> Result<Var> {
        let r = s.constant(weights.clone())?;
        let p = s.mul(y, r)?;
        s.sum(p)
    };

    let coords = pick(rng, input.len(), budget.input);
    let describe = |what: &str, c: &GradCheck, coords: &[usize]| {
        let k = coords.iter().position(|&i| i == c.worst).unwrap_or(0);
        alloc::format!("{what}[{}]: analytic {:.6e}, numeric {:.6e}", c.worst, c.analytic[k], c.numeric[k])
    };
    let input_check = finite_diff_check_at(
        |g, x| {
            let mut s = Session::new(g, &store, false);
            let y = f(&mut s, x)?;
            objective(&mut s, y)
        },
        &input,
        DEFAULT_STEP,
        Some(&coords),
    )?;
    let input_err = input_check.max_rel_err;
    let mut worst = describe("input", &input_check, &coords);

    let ids: Vec<_> = store.ids().collect();
    let chosen = pick(rng, ids.len(), budget.params);
    let mut param_err = 0.0f64;
    for i in chosen {
        let id = ids[i];
        let value = store.get(id).clone();
        let coords = pick(rng, value.len(), budget.per_param);
        let check = finite_diff_check_at(
            |g, w| {
                let mut s = Session::new(g, &store, false);
                s.bind(id, w)?;
                let x = s.constant(input.clone())?;
                let y = f(&mut s, x)?;
                objective(&mut s, y)
            },
            &value,
            DEFAULT_STEP,
            Some(&coords),
        )?;
        if check.max_rel_err > param_err.max(input_err) {
            worst = describe(store.name(id), &check, &coords);
        }
        param_err = param_err.max(check.max_rel_err);
    }
    Ok(BlockReport {
        name: name.to_string(),
        input_err,
        param_err,
        tolerance,
        worst,
    })
}

/// Tolerance of every block check except the whole network.
pub const BLOCK_TOLERANCE: f64 = 1e-4;
/// Tolerance of the whole-network check.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Run the finite-difference suite over every building block at `1×4×8×8`
/// and over the small network on a `1×3×8×8` image.
pub fn block_suite(seed: u64) -> Result<Vec<BlockReport>> {
    const C: usize = 4;
    const HEADS: usize = 2;
    let feat = [1, C, 8, 8];
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let tol = BLOCK_TOLERANCE;
    let mut out = Vec::new();

    {
        let mut b = ParamBuilder::new(1.0);
        let mgb = Mgb::new(&mut b, "mgb", C, 4);
        let x = random(rng, &feat, 1.0);
        out.push(check_block("mgb", b.finish(), x, rng, tol, SMALL, |s, x| mgb.forward(s, x))?);
    }
    {
        let mut b = ParamBuilder::new(1.0);
        let attn = Attention::new(&mut b, "attn", C, HEADS, true)?;
        let layout = b.finish();
        let other = random(rng, &feat, 1.0);
        let (x1, x2) = (random(rng, &feat, 1.0), random(rng, &feat, 1.0));
        let q = check_block("cross_attention", layout.clone(), x1, rng, tol, SMALL, |s, q| {
            let kv = s.constant(other.clone())?;
            attn.forward(s, q, kv)
        })?;
        let kv = check_block("cross_attention", layout, x2, rng, tol, SMALL, |s, kv| {
            let q = s.constant(other.clone())?;
            attn.forward(s, q, kv)
        })?;
        out.push(q.absorb(kv));
    }
    {
        let mut b = ParamBuilder::new(1.0);
        let hl = HlUnit::new(&mut b, "hl");
        let layout = b.finish();
        let other = random(rng, &feat, 1.0);
        let (x1, x2) = (random(rng, &feat, 1.0), random(rng, &feat, 1.0));
        let low = check_block("hl", layout.clone(), x1, rng, tol, SMALL, |s, x| {
            let h = s.constant(other.clone())?;
            hl.forward(s, x, h)
        })?;
        let high = check_block("hl", layout, x2, rng, tol, SMALL, |s, x| {
            let l = s.constant(other.clone())?;
            hl.forward(s, l, x)
        })?;
        out.push(low.absorb(high));
    }
    {
        let mut b = ParamBuilder::new(1.0);
        let lh = LhUnit::new(&mut b, "lh", C, 2);
        let layout = b.finish();
        let other = random(rng, &feat, 1.0);
        let (x1, x2) = (random(rng, &feat, 1.0), random(rng, &feat, 1.0));
        let low = check_block("lh", layout.clone(), x1, rng, tol, SMALL, |s, x| {
            let h = s.constant(other.clone())?;
            lh.forward(s, x, h)
        })?;
        let high = check_block("lh", layout, x2, rng, tol, SMALL, |s, x| {
            let l = s.constant(other.clone())?;
            lh.forward(s, l, x)
        })?;
        out.push(low.absorb(high));
    }
    let cfg = BlockConfig {
        channels: C,
        heads: HEADS,
        r1: 4,
        r2: 2,
        k: 4,
        mask_mode: MaskMode::LearnedSoft { tau: 0.5 },
        normalize_qk: true,
    };
    {
        let mut b = ParamBuilder::new(1.0);
        let merge = Merge::new(&mut b, "merge", &cfg)?;
        let layout = b.finish();
        let (o1, o2) = (random(rng, &feat, 1.0), random(rng, &feat, 1.0));
        let (x1, x2) = (random(rng, &feat, 1.0), random(rng, &feat, 1.0));
        let via_x = check_block("merge", layout.clone(), x1, rng, tol, SMALL, |s, x| {
            let (l, h) = (s.constant(o1.clone())?, s.constant(o2.clone())?);
            merge.forward(s, x, l, h)
        })?;
        let via_branch = check_block("merge", layout, x2, rng, tol, SMALL, |s, l| {
            let (x, h) = (s.constant(o1.clone())?, s.constant(o2.clone())?);
            merge.forward(s, x, l, h)
        })?;
        out.push(via_x.absorb(via_branch));
    }
    {
        let mut b = ParamBuilder::new(1.0);
        let m = Mdta::new(&mut b, "mdta", C, HEADS, true)?;
        let x = random(rng, &feat, 1.0);
        out.push(check_block("mdta", b.finish(), x, rng, tol, SMALL, |s, x| m.forward(s, x))?);
    }
    {
        let mut b = ParamBuilder::new(1.0);
        let m = Gdfn::new(&mut b, "gdfn", C, 2.66)?;
        let x = random(rng, &feat, 1.0);
        out.push(check_block("gdfn", b.finish(), x, rng, tol, SMALL, |s, x| m.forward(s, x))?);
    }
    {
        let mut b = ParamBuilder::new(1.0);
        let m = TransformerBlock::new(&mut b, "tb", C, HEADS, 2.66, true)?;
        let x = random(rng, &feat, 1.0);
        out.push(check_block("transformer_block", b.finish(), x, rng, tol, SMALL, |s, x| m.forward(s, x))?);
    }
    {
        let mut b = ParamBuilder::new(1.0);
        let block = Aflb::new(&mut b, "aflb", cfg)?;
        let layout = b.finish();
        let image = random(rng, &[1, 3, 8, 8], 0.3).map(|v| v + 0.5);
        let feats = random(rng, &feat, 1.0);
        let (x1, x2) = (random(rng, &feat, 1.0), image.map(|v| 1.0 - v));
        let via_x = check_block("aflb_soft_mask", layout.clone(), x1, rng, tol, SMALL, |s, x| {
            let img = s.constant(image.clone())?;
            block.forward(s, x, img)
        })?;
        let via_image = check_block("aflb_soft_mask", layout, x2, rng, tol, SMALL, |s, img| {
            let x = s.constant(feats.clone())?;
            block.forward(s, x, img)
        })?;
        out.push(via_x.absorb(via_image));
    }
    {
        let config = ModelConfig {
            zero_output: false,
            ..ModelConfig::desk()
        };
        let (net, layout) = AdaIr::new(config)?;
        let image = random(rng, &[1, 3, 8, 8], 0.2).map(|v| v + 0.5);
        let budget = Budget {
            input: 48,
            per_param: 2,
            params: 40,
        };
        out.push(check_block("desk_model", layout, image, rng, MODEL_TOLERANCE, budget, |s, x| {
            Ok(net.forward(s, x)?.output)
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_no_error() {
        let x = Tensor::from_f64(&[4], &[0.1, -2.0, 3.5, 7.0]).unwrap();
        let err = finite_diff_check(|g, x| g.sum(x), &x, DEFAULT_STEP).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // abs has gradient 0 at exactly 0 but the difference quotient sees 0 too;
        // use a point where the quotient straddles the kink instead.
        let x = Tensor::from_f64(&[1], &[1e-7]).unwrap();
        let check = finite_diff_check_at(
            |g, x| {
                let a = g.abs(x)?;
                g.sum(a)
            },
            &x,
            DEFAULT_STEP,
            None,
        )
        .unwrap();
        assert!(check.max_rel_err > 0.5);
    }
}

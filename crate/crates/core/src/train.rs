//! L1 objective, Adam, and the seeded training loop.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::degrade::{make_training_batch, SamplePair};
use crate::error::{shape_err, Error, Result};
use crate::metrics::{psnr, ssim};
use crate::network::{AdaIr, Gap};
use crate::params::{ParamStore, Session};
use crate::tensor::{Scalar, Tensor};

/// Mean absolute difference between two equally shaped nodes.
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(shape_err!("prediction {:?} vs target {:?}", g.shape(pred), g.shape(target)));
    }
    let d = g.sub(pred, target)?;
    let a = g.abs(d)?;
    g.mean(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name, value: f64, ok: bool| if ok { Ok(()) } else { Err(Error::InvalidRange { name, value }) };
        range("lr", self.lr, self.lr >= 0.0)?;
        range("beta1", self.beta1, (0.0..1.0).contains(&self.beta1))?;
        range("beta2", self.beta2, (0.0..1.0).contains(&self.beta2))?;
        range("eps", self.eps, self.eps > 0.0)
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> AdamState<U> {
        AdamState {
            m: self.m.iter().map(Tensor::cast).collect(),
            v: self.v.iter().map(Tensor::cast).collect(),
            t: self.t,
        }
    }
}

/// One bias-corrected Adam update. A parameter whose gradient is identically
/// zero (for instance one the loss never reached) keeps its value and moments.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(shape_err!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != p.shape() {
            return Err(shape_err!("gradient {:?} for parameter {:?}", g.shape(), p.shape()));
        }
        if g.data().iter().all(|v| v.is_zero()) {
            continue;
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j].as_f64();
            let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * gj * gj;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            let step = cfg.lr * (mj / c1) / (libm::sqrt(vj / c2) + cfg.eps);
            *w = T::of(w.as_f64() - step);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub patch: usize,
    pub flips: bool,
    pub seed: u64,
    /// Emit a checkpoint event every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 4,
            steps: 200,
            patch: 32,
            flips: true,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// What happened in one optimisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    pub loss: f64,
    /// PSNR of the clamped prediction against the batch targets.
    pub psnr: f64,
    /// Mask factors `(α, β)` predicted per gap for every batch sample.
    pub factors: Vec<(Gap, Vec<f64>)>,
}

pub enum TrainEvent<'a, T> {
    Step(&'a StepRecord),
    Checkpoint {
        step: usize,
        params: &'a ParamStore<T>,
        state: &'a AdamState<T>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Smallest and largest mask factor seen over the run.
    pub fn factor_range(&self) -> Option<(f64, f64)> {
        let all = self
            .records
            .iter()
            .flat_map(|r| r.factors.iter().flat_map(|(_, f)| f.iter().copied()));
        all.fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

fn mix(seed: u64, step: usize) -> u64 {
    let mut z = seed.wrapping_add((step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// L2 norm of the weights of each top-level part of the network.
pub fn block_norms<T: Scalar>(params: &ParamStore<T>) -> Vec<(String, f64)> {
    let mut names: Vec<String> = Vec::new();
    for id in params.ids() {
        let top = params.name(id).split('.').next().unwrap_or("").to_string();
        if !names.contains(&top) {
            names.push(top);
        }
    }
    names
        .into_iter()
        .map(|n| {
            let norm = params.norm_prefix(&alloc::format!("{n}."));
            (n, norm)
        })
        .collect()
}

/// One forward/backward/update on an explicit batch. Returns the loss, the
/// batch PSNR and the mask factors.
pub fn train_step<T: Scalar>(
    net: &AdaIr,
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    degraded: &Tensor<T>,
    clean: &Tensor<T>,
    adam: &AdamConfig,
) -> Result<(f64, f64, Vec<(Gap, Vec<f64>)>)> {
    let mut g = Graph::new();
    let (loss, batch_psnr, factors, grads) = {
        let mut s = Session::new(&mut g, params, true);
        let x = s.constant(degraded.clone())?;
        let y = s.constant(clean.clone())?;
        let out = net.forward(&mut s, x)?;
        let loss = l1_loss(&mut s, out.output, y)?;
        let lv = s.value(loss).item().expect("scalar loss").as_f64();
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let clamped = s.value(out.output).map(|v| v.max(T::zero()).min(T::one()));
        let batch_psnr = psnr(&clamped, clean, 1.0)?;
        let factors = out
            .aflb
            .iter()
            .filter_map(|(gap, t)| t.mining.factors.map(|f| (*gap, s.value(f).data().iter().map(|v| v.as_f64()).collect())))
            .collect();
        let grads = s.backward(loss)?;
        (lv, batch_psnr, factors, s.param_grads(&grads))
    };
    adam_step(params, &grads, state, adam)?;
    Ok((loss, batch_psnr, factors))
}

/// Train on seeded random patches of `data`.
///
/// Each step draws `batch_size` pairs (all of them, in order, when the set is
/// no larger than a batch), crops and flips them, and applies one Adam update.
/// Non-finite values abort with [`Error::NaNLoss`] carrying per-part weight norms.
pub fn train_loop<T: Scalar>(
    net: &AdaIr,
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    data: &[SamplePair],
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_, T>) -> Result<()>,
) -> Result<TrainReport> {
    use rand::{seq::index::sample, SeedableRng};
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    cfg.adam.validate()?;
    let mut report = TrainReport::default();
    for step in 1..=cfg.steps {
        let step_seed = mix(cfg.seed, step);
        let chosen: Vec<&SamplePair> = if data.len() <= cfg.batch_size {
            data.iter().collect()
        } else {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(step_seed);
            let mut idx = sample(&mut r, data.len(), cfg.batch_size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &data[i]).collect()
        };
        let batch = make_training_batch(&chosen, cfg.patch, cfg.flips, step_seed)?;
        let (deg, cln) = (batch.degraded.cast::<T>(), batch.clean.cast::<T>());
        let (loss, batch_psnr, factors) = match train_step(net, params, state, &deg, &cln, &cfg.adam) {
            Err(Error::NonFinite(_)) => {
                return Err(Error::NaNLoss {
                    step,
                    norms: block_norms(params),
                })
            }
            other => other?,
        };
        let record = StepRecord {
            step,
            loss,
            psnr: batch_psnr,
            factors,
        };
        on_event(TrainEvent::Step(&record))?;
        report.records.push(record);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            on_event(TrainEvent::Checkpoint {
                step,
                params,
                state,
            })?;
        }
    }
    Ok(report)
}

/// Quality of the degraded input and of the restoration for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub tag: String,
    pub psnr_input: f64,
    pub psnr_output: f64,
    pub ssim_input: Option<f64>,
    pub ssim_output: Option<f64>,
}

/// Restore every pair at full size and score it.
pub fn evaluate<T: Scalar>(net: &AdaIr, params: &ParamStore<T>, data: &[SamplePair]) -> Result<Vec<EvalRecord>> {
    data.iter()
        .map(|pair| {
            let shape = pair.degraded.shape();
            let input = pair.degraded.cast::<T>().reshape(&[1, shape[0], shape[1], shape[2]])?;
            let restored = net.restore(params, &input)?.reshape(shape)?.cast::<f64>();
            Ok(EvalRecord {
                tag: pair.tag.clone(),
                psnr_input: psnr(&pair.degraded, &pair.clean, 1.0)?,
                psnr_output: psnr(&restored, &pair.clean, 1.0)?,
                ssim_input: ssim(&pair.degraded, &pair.clean).ok(),
                ssim_output: ssim(&restored, &pair.clean).ok(),
            })
        })
        .collect()
}

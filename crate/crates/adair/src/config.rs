//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be known. An
//! optional `preset` line (desk, full, full-baseline) must come first and
//! resets the model settings before the remaining keys are applied.

use std::fmt::Write as _;

use adair_core::aflb::MaskMode;
use adair_core::network::{Gap, ModelConfig};
use adair_core::train::TrainConfig;
use adair_core::Precision;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "base_channels",
    "tb_counts",
    "refinement_blocks",
    "heads",
    "gdfn_expansion",
    "r1",
    "r2",
    "k",
    "mask_mode",
    "mask_tau",
    "mask_side",
    "aflb",
    "precision",
    "normalize_qk",
    "init_gain",
    "zero_output",
];

pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "steps",
    "patch",
    "flips",
    "seed",
    "checkpoint_every",
];

fn preset(name: &str) -> Option<ModelConfig> {
    match name {
        "desk" => Some(ModelConfig::desk()),
        "full" => Some(ModelConfig::full()),
        "full-baseline" => Some(ModelConfig::full_baseline()),
        _ => None,
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn four(v: &str) -> std::result::Result<[usize; 4], String> {
    let items: Vec<usize> = v.split(',').map(|s| num(s.trim())).collect::<std::result::Result<_, _>>()?;
    items.try_into().map_err(|_| format!("expected four comma-separated values, got {v:?}"))
}

fn gaps(v: &str) -> std::result::Result<Vec<Gap>, String> {
    if v == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| Gap::from_name(s.trim()).ok_or_else(|| format!("unknown placement {s:?} (gap1, gap2, gap3 or none)")))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Set one key. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "preset" => *m = preset(value).ok_or_else(|| format!("unknown preset {value:?}"))?,
            "base_channels" => m.base_channels = num(value)?,
            "tb_counts" => m.tb_counts = four(value)?,
            "refinement_blocks" => m.refinement_blocks = num(value)?,
            "heads" => m.heads = four(value)?,
            "gdfn_expansion" => m.gdfn_expansion = num(value)?,
            "r1" => m.r1 = num(value)?,
            "r2" => m.r2 = num(value)?,
            "k" => m.k = num(value)?,
            "mask_mode" => {
                m.mask_mode = match value {
                    "learned-soft" => MaskMode::LearnedSoft { tau: 0.5 },
                    "learned-hard" => MaskMode::LearnedHard,
                    "fixed" => MaskMode::Fixed { side: 10 },
                    _ => return Err(format!("unknown mask mode {value:?}")),
                }
            }
            "mask_tau" => match &mut m.mask_mode {
                MaskMode::LearnedSoft { tau } => *tau = num(value)?,
                _ => return Err("mask_tau needs mask_mode = learned-soft".into()),
            },
            "mask_side" => match &mut m.mask_mode {
                MaskMode::Fixed { side } => *side = num(value)?,
                _ => return Err("mask_side needs mask_mode = fixed".into()),
            },
            "aflb" => m.aflb = gaps(value)?,
            "precision" => {
                m.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("unknown precision {value:?}")),
                }
            }
            "normalize_qk" => m.normalize_qk = flag(value)?,
            "init_gain" => m.init_gain = num(value)?,
            "zero_output" => m.zero_output = flag(value)?,
            "lr" => t.adam.lr = num(value)?,
            "beta1" => t.adam.beta1 = num(value)?,
            "beta2" => t.adam.beta2 = num(value)?,
            "eps" => t.adam.eps = num(value)?,
            "batch_size" => t.batch_size = num(value)?,
            "steps" => t.steps = num(value)?,
            "patch" => t.patch = num(value)?,
            "flips" => t.flips = flag(value)?,
            "seed" => t.seed = num(value)?,
            "checkpoint_every" => t.checkpoint_every = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parse a whole file on top of the desk defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text, &[MODEL_KEYS, TRAIN_KEYS].concat())?;
        Ok(cfg)
    }

    /// Apply `key = value` lines, accepting only `allowed` keys (plus `preset`).
    pub fn apply(&mut self, text: &str, allowed: &[&str]) -> Result<()> {
        let mut first = true;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" && !first {
                return Err(err("preset must precede every other key".into()));
            }
            if key != "preset" && !allowed.contains(&key) {
                return Err(err(format!("unknown key {key:?}")));
            }
            self.set(key, value).map_err(err)?;
            first = false;
        }
        self.model.validate()?;
        self.train.adam.validate()?;
        Ok(())
    }

    /// Apply `key=value` command-line overrides.
    pub fn override_with(&mut self, pairs: &[String]) -> Result<()> {
        self.apply(&pairs.join("\n"), &[MODEL_KEYS, TRAIN_KEYS].concat())
    }
}

/// Model settings as config text; parsing it back gives the same configuration.
pub fn model_to_text(m: &ModelConfig) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
    line("base_channels", m.base_channels.to_string());
    line("tb_counts", join(&m.tb_counts));
    line("refinement_blocks", m.refinement_blocks.to_string());
    line("heads", join(&m.heads));
    line("gdfn_expansion", m.gdfn_expansion.to_string());
    line("r1", m.r1.to_string());
    line("r2", m.r2.to_string());
    line("k", m.k.to_string());
    match m.mask_mode {
        MaskMode::LearnedSoft { tau } => {
            line("mask_mode", "learned-soft".into());
            line("mask_tau", tau.to_string());
        }
        MaskMode::LearnedHard => line("mask_mode", "learned-hard".into()),
        MaskMode::Fixed { side } => {
            line("mask_mode", "fixed".into());
            line("mask_side", side.to_string());
        }
    }
    let placement: Vec<&str> = m.aflb.iter().map(|g| g.name()).collect();
    line("aflb", if placement.is_empty() { "none".into() } else { placement.join(",") });
    line("precision", m.precision.name().into());
    line("normalize_qk", m.normalize_qk.to_string());
    line("init_gain", m.init_gain.to_string());
    line("zero_output", m.zero_output.to_string());
    s
}

/// Parse text produced by [`model_to_text`]; training keys are rejected.
pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply(text, MODEL_KEYS)?;
    Ok(cfg.model)
}

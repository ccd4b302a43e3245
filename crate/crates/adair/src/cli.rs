//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 a check ran and failed.

use std::ffi::OsString;
use std::io::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use adair_core::analysis::residual_spectrum_curve;
use adair_core::degrade::SamplePair;
use adair_core::gradcheck::block_suite;
use adair_core::network::{count_parameters, AdaIr, ModelConfig};
use adair_core::params::ParamStore;
use adair_core::probe::mixed_pairs;
use adair_core::train::{evaluate, train_loop, AdamState, EvalRecord, TrainEvent};
use adair_core::{Precision, Scalar, Tensor};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{io, Error, Result};
use crate::image::{read_image, write_image};
use crate::manifest::{load_pairs, read_manifest};
use crate::report::{curve_svg, write_curve_csv, write_loss_csv};

/// Seed fallback when `--seed` is absent.
pub const SEED_ENV: &str = "ADAIR_SEED";

#[derive(Debug, Parser)]
#[command(name = "adair", version, about = "All-in-one image restoration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Restore one image or every .ppm in a directory.
    Restore(RestoreArgs),
    /// Score a checkpoint on a dataset, per degradation tag.
    Eval(EvalArgs),
    /// Residual spectrum curve of a clean/degraded pair.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient checks of every building block.
    Gradcheck(GradcheckArgs),
    /// Parameter counts of a configuration.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset manifest; the built-in synthetic noise/haze/rain set when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Continue from this checkpoint, including optimiser state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A .ppm file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub degraded: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Average over filled squares instead of square outlines.
    #[arg(long)]
    pub filled: bool,
    #[arg(long, default_value = "residual")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Count the configuration with every frequency block removed.
    #[arg(long)]
    pub no_aflb: bool,
}

enum Outcome {
    Ok,
    CheckFailed,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::CheckFailed) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Restore(a) => restore(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Params(a) => params(a),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config {
                line: 0,
                message: format!("{SEED_ENV}={v:?} is not an unsigned integer"),
            }),
        Err(_) => Ok(None),
    }
}

fn run_config(args: &ModelArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::parse(&fs::read_to_string(path).map_err(io(path))?)?,
        None => RunConfig::default(),
    };
    cfg.override_with(&args.set)?;
    Ok(cfg)
}

fn dataset(manifest: Option<&Path>) -> Result<Vec<SamplePair>> {
    match manifest {
        Some(path) => load_pairs(&read_manifest(path)?),
        None => Ok(mixed_pairs()?),
    }
}

fn train(a: TrainArgs) -> Result<Outcome> {
    let mut cfg = run_config(&a.model)?;
    if let Some(seed) = resolve_seed(a.seed)? {
        cfg.train.seed = seed;
    }
    let data = dataset(a.manifest.as_deref())?;
    match cfg.model.precision {
        Precision::F32 => train_as::<f32>(&a, &cfg, &data),
        Precision::F64 => train_as::<f64>(&a, &cfg, &data),
    }
}

fn train_as<T: Scalar>(a: &TrainArgs, cfg: &RunConfig, data: &[SamplePair]) -> Result<Outcome> {
    let (net, mut params, mut state) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint::<T>(path)?;
            if ck.config != cfg.model {
                return Err(Error::ConfigMismatch(format!("{} was trained with a different model", path.display())));
            }
            let net = ck.network()?;
            let state = ck.adam.unwrap_or_else(|| AdamState::new(&ck.params));
            (net, ck.params, state)
        }
        None => {
            let (net, params) = adair_core::network::build_model::<T>(cfg.model.clone(), cfg.train.seed)?;
            let state = AdamState::new(&params);
            (net, params, state)
        }
    };
    let mut validation = Vec::new();
    let mut save_err = None;
    let result = train_loop(&net, &mut params, &mut state, data, &cfg.train, |event| {
        match event {
            TrainEvent::Step(r) => println!("step {} loss {:.6} psnr {:.2}", r.step, r.loss, r.psnr),
            TrainEvent::Checkpoint { step, params, state } => {
                let scores = evaluate(&net, params, data)?;
                let mean = scores.iter().map(|e| e.psnr_output).sum::<f64>() / scores.len() as f64;
                println!("checkpoint {step} psnr_val {mean:.2}");
                validation.push((step, mean));
                if let Err(e) = save_checkpoint(&a.out, &cfg.model, params, Some(state)) {
                    let message = e.to_string();
                    save_err = Some(e);
                    return Err(adair_core::Error::Interrupted(message));
                }
            }
        }
        Ok(())
    });
    if let Some(e) = save_err {
        return Err(e);
    }
    let report = result?;
    save_checkpoint(&a.out, &cfg.model, &params, Some(&state))?;
    if let Some(path) = &a.csv {
        write_loss_csv(File::create(path).map_err(io(path))?, &report.records, &validation)?;
    }
    Ok(Outcome::Ok)
}

/// Load weights in the precision the stored model asks for.
fn with_checkpoint<R>(
    path: &Path,
    f32_fn: impl FnOnce(Checkpoint<f32>) -> Result<R>,
    f64_fn: impl FnOnce(Checkpoint<f64>) -> Result<R>,
) -> Result<R> {
    let ck = load_checkpoint::<f64>(path)?;
    match ck.config.precision {
        Precision::F64 => f64_fn(ck),
        Precision::F32 => f32_fn(Checkpoint {
            config: ck.config,
            precision: ck.precision,
            params: ck.params.cast(),
            adam: ck.adam.map(|s| s.cast()),
        }),
    }
}

fn restore(a: RestoreArgs) -> Result<Outcome> {
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(io(&a.input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
            .collect();
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    fs::create_dir_all(&a.output).map_err(io(&a.output))?;
    let go = |net: AdaIr, run: &dyn Fn(&AdaIr, &Tensor<f64>) -> Result<Tensor<f64>>| -> Result<Outcome> {
        for path in &inputs {
            let img = read_image(path)?;
            let out = run(&net, &img)?;
            let dest = a.output.join(path.file_name().unwrap_or_default());
            write_image(&dest, &out)?;
            println!("{} -> {}", path.display(), dest.display());
        }
        Ok(Outcome::Ok)
    };
    with_checkpoint(
        &a.checkpoint,
        |ck| go(ck.network()?, &|net, img| restore_image(net, &ck.params, img)),
        |ck| go(ck.network()?, &|net, img| restore_image(net, &ck.params, img)),
    )
}

/// Restore one `[C, H, W]` image.
pub fn restore_image<T: Scalar>(net: &AdaIr, params: &ParamStore<T>, img: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = img.shape().to_vec();
    let input = img.cast::<T>().reshape(&[1, s[0], s[1], s[2]])?;
    Ok(net.restore(params, &input)?.reshape(&s)?.cast())
}

fn eval(a: EvalArgs) -> Result<Outcome> {
    let data = dataset(a.manifest.as_deref())?;
    let records = with_checkpoint(
        &a.checkpoint,
        |ck| Ok(evaluate(&ck.network()?, &ck.params, &data)?),
        |ck| Ok(evaluate(&ck.network()?, &ck.params, &data)?),
    )?;
    for line in summarize(&records) {
        println!("{line}");
    }
    Ok(Outcome::Ok)
}

/// One line per tag, in first-seen order, with mean scores.
pub fn summarize(records: &[EvalRecord]) -> Vec<String> {
    let mut tags: Vec<&str> = Vec::new();
    for r in records {
        if !tags.contains(&r.tag.as_str()) {
            tags.push(&r.tag);
        }
    }
    let mean = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    tags.into_iter()
        .map(|tag| {
            let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.tag == tag).collect();
            format!(
                "{tag}: n={} psnr {:.2} -> {:.2} ssim {:.4} -> {:.4}",
                rs.len(),
                mean(rs.iter().map(|r| r.psnr_input).collect()),
                mean(rs.iter().map(|r| r.psnr_output).collect()),
                mean(rs.iter().filter_map(|r| r.ssim_input).collect()),
                mean(rs.iter().filter_map(|r| r.ssim_output).collect()),
            )
        })
        .collect()
}

fn analyze(a: AnalyzeArgs) -> Result<Outcome> {
    let clean = read_image(&a.clean)?;
    let degraded = read_image(&a.degraded)?;
    let report = residual_spectrum_curve(&clean, &degraded, &a.tag, a.filled)?;
    write_curve_csv(File::create(&a.out).map_err(io(&a.out))?, &report)?;
    if let Some(path) = &a.svg {
        fs::write(path, curve_svg(std::slice::from_ref(&report))).map_err(io(path))?;
    }
    println!(
        "{}: flatness {:.4} monotonicity {:.4}",
        report.tag, report.flatness, report.monotonicity
    );
    Ok(Outcome::Ok)
}

fn gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let reports = block_suite(seed)?;
    let mut ok = true;
    for r in &reports {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{verdict} {:<24} input {:.2e} params {:.2e} tol {:.0e} worst {}",
            r.name, r.input_err, r.param_err, r.tolerance, r.worst
        );
        ok &= r.passed();
    }
    Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
}

fn params(a: ParamsArgs) -> Result<Outcome> {
    let cfg = run_config(&a.model)?;
    let model = if a.no_aflb {
        ModelConfig { aflb: Vec::new(), ..cfg.model }
    } else {
        cfg.model
    };
    let (_, layout) = AdaIr::new(model)?;
    let b = count_parameters(&layout);
    let mut text = String::new();
    let mut line = |name: &str, n: usize| text += &format!("{name} {n}\n");
    line("total", b.total);
    line("embed", b.embed);
    line("encoder", b.encoder);
    line("latent", b.latent);
    line("decoder", b.decoder);
    line("refinement", b.refinement);
    line("output", b.output);
    for (gap, n) in &b.aflb {
        line(gap.name(), *n);
    }
    line("aflb", b.aflb_total());
    line("backbone", b.backbone());
    // a closed pipe (e.g. `| head`) is not an error
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(Outcome::Ok)
}

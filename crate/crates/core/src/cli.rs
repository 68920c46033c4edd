//! The `edmik` command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{self, load_camera, read_records, to_samples, write_records, Camera, GenerateOptions, Sample};
use crate::distgeo::pack_upper;
use crate::error::{Error, Result};
use crate::evalx::evaluate;
use crate::kinematics::{config_to_edm, load_chain, reconstruct, wrap_angle, KinematicChain};
use crate::model::{infer, train, Checkpoint, LossMode, TrainConfig};

/// Tolerance of the `roundtrip` self-check, in radians.
pub const ROUNDTRIP_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "edmik", version, about = "Joint angles from 2D keypoints via distance-matrix regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Chain file, or `fixture` for the bundled 7-DoF chain.
    #[arg(long, default_value = "fixture")]
    pub chain: PathBuf,
    /// Random seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "EDMIK_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
}

impl Common {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic samples.
    Generate(GenerateArgs),
    /// Train the regression network.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Recover the joint angles of one record.
    Infer(InferArgs),
    /// Check Θ → EDM → cMDS → alignment → IK on random configurations.
    Roundtrip(RoundtripArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Camera file (repeatable), or `cam0` for the bundled camera.
    #[arg(long = "camera", required = true)]
    pub cameras: Vec<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    /// Isotropic pixel noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// File name inside the output directory.
    #[arg(long, default_value = "dataset.jsonl")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training records.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation records; without it the last `--val-fraction` of `--data` is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Camera whose image diagonal normalizes the inputs.
    #[arg(long, default_value = "cam0")]
    pub camera: PathBuf,
    /// `key = value` file with TrainConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keep samples with invisible keypoints.
    #[arg(long)]
    pub keep_invisible: bool,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub warmup_iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub decay_epoch: Option<usize>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `full` or `edm_only`.
    #[arg(long)]
    pub loss: Option<LossMode>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub keep_invisible: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Record file; the record at `--index` is used.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Also print the predicted packed EDM.
    #[arg(long)]
    pub emit_edm: bool,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
}

/// Parses the process arguments and runs the command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => cmd_train(&a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => cmd_eval(&a).map(|_| ExitCode::SUCCESS),
        Command::Infer(a) => cmd_infer(&a).map(|_| ExitCode::SUCCESS),
        Command::Roundtrip(a) => cmd_roundtrip(&a),
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<PathBuf> {
    let chain = load_chain(&a.common.chain)?;
    let cameras: Vec<Camera> = a.cameras.iter().map(load_camera).collect::<Result<_>>()?;
    let opts = GenerateOptions {
        count: a.count as usize,
        seed: a.common.seed(),
        noise_sigma: a.noise,
    };
    let records = dataset::generate(&chain, &cameras, &opts)?;
    create_out_dir(&a.common.out)?;
    let path = a.common.out.join(&a.name);
    write_records(&path, &records)?;
    println!(
        "wrote {} samples to {} ({:.1}% fully visible)",
        records.len(),
        path.display(),
        100.0 * dataset::visible_fraction(&records)
    );
    Ok(path)
}

/// Reads `key = value` lines into `cfg`; `#` starts a comment.
pub fn apply_config_file(cfg: &mut TrainConfig, text: &str, origin: &Path) -> Result<()> {
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: origin.to_path_buf(),
            line: k + 1,
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err("expected `key = value`".into()))?;
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        let r: std::result::Result<(), String> = match key {
            "learning_rate" => num(value).map(|x| cfg.learning_rate = x),
            "warmup_iterations" => num(value).map(|x| cfg.warmup_iterations = x),
            "batch_size" => num(value).map(|x| cfg.batch_size = x),
            "dropout" => num(value).map(|x| cfg.dropout = x),
            "epochs" => num(value).map(|x| cfg.epochs = x),
            "decay_epoch" => num(value).map(|x| cfg.decay_epoch = x),
            "decay_factor" => num(value).map(|x| cfg.decay_factor = x),
            "lambda" => num(value).map(|x| cfg.lambda = x),
            "loss" => value.parse::<LossMode>().map(|x| cfg.loss = x).map_err(|e| e.to_string()),
            "seed" => num(value).map(|x| cfg.seed = x),
            other => Err(format!("unknown key {other:?}")),
        };
        r.map_err(err)?;
    }
    Ok(())
}

/// Defaults, then the config file, then command-line flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        apply_config_file(&mut cfg, &text, path)?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field.clone() { cfg.$field = v; } )* };
    }
    set!(learning_rate, warmup_iterations, batch_size, dropout, epochs, decay_epoch, decay_factor, lambda, loss);
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_samples(path: &Path, chain: &KinematicChain, diagonal: f64, keep_invisible: bool) -> Result<Vec<Sample>> {
    let records = read_records(path, chain)?;
    to_samples(&records, chain, diagonal, keep_invisible)
}

pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let chain = load_chain(&a.common.chain)?;
    let camera = load_camera(&a.camera)?;
    let cfg = resolve_train_config(a)?;
    let diagonal = camera.image_diagonal();
    let mut train_set = load_samples(&a.data, &chain, diagonal, a.keep_invisible)?;
    let val_set = match &a.val {
        Some(p) => load_samples(p, &chain, diagonal, a.keep_invisible)?,
        None => {
            if !(0.0..1.0).contains(&a.val_fraction) {
                return Err(Error::InvalidArgument("val-fraction must lie in [0, 1)".into()));
            }
            let held = (a.val_fraction * train_set.len() as f64).round() as usize;
            train_set.split_off(train_set.len() - held)
        }
    };
    if train_set.is_empty() {
        return Err(Error::InvalidArgument(format!("no usable training samples in {}", a.data.display())));
    }

    create_out_dir(&a.common.out)?;
    let log_path = a.common.out.join("metrics.jsonl");
    let log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let mut log_err = None;
    let outcome = train(&train_set, &val_set, &chain, &cfg, diagonal, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        println!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let ckpt_path = a.common.out.join("checkpoint.bin");
    outcome.best.save(&ckpt_path)?;
    println!(
        "saved checkpoint from epoch {} to {}",
        outcome.best_epoch,
        ckpt_path.display()
    );
    Ok(ckpt_path)
}

fn check_chain(ckpt: &Checkpoint, chain: &KinematicChain) -> Result<()> {
    if ckpt.chain_name != chain.name() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint was trained for chain {:?}, not {:?}",
            ckpt.chain_name,
            chain.name()
        )));
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<PathBuf> {
    let chain = load_chain(&a.common.chain)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    check_chain(&ckpt, &chain)?;
    let samples = load_samples(&a.data, &chain, ckpt.image_diagonal, a.keep_invisible)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("no usable samples in {}", a.data.display())));
    }
    let report = evaluate(&ckpt, &samples, &chain)?;
    for msg in &report.failure_messages {
        eprintln!("warning: {msg}");
    }
    create_out_dir(&a.common.out)?;
    let path = a.common.out.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;

    println!("samples: {} evaluated, {} failed, {} mirrored", report.evaluated, report.failures, report.mirrored);
    if let (Some(all), Some(top)) = (report.angle_mae, report.angle_mae_top50) {
        println!(
            "angle MAE: {:.4} ± {:.4} rad ({:.3} [10°]); top 50%: {:.4} ± {:.4} rad ({:.3} [10°])",
            all.mean,
            all.std,
            all.mean.to_degrees() / 10.0,
            top.mean,
            top.std,
            top.mean.to_degrees() / 10.0
        );
    }
    if let Some(e) = report.edm_mae {
        println!("EDM MAE: {:.5} ± {:.5} m²", e.mean, e.std);
    }
    if let Some(r) = report.pearson_edm_angle {
        println!("pearson(EDM MAE, angle MAE): {r:.3}");
    }
    println!("report written to {}", path.display());
    Ok(path)
}

pub fn cmd_infer(a: &InferArgs) -> Result<Vec<f64>> {
    let chain = load_chain(&a.common.chain)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    check_chain(&ckpt, &chain)?;
    let records = read_records(&a.input, &chain)?;
    let record = records.get(a.index).ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no record {}", a.input.display(), a.index))
    })?;
    let input = dataset::input_edm_from_2d(&record.kp2d, ckpt.image_diagonal);
    let (edm, config) = infer(&ckpt, &input, &chain).map_err(|e| match e {
        Error::Degenerate(msg) => Error::Degenerate(format!("record {}: {msg}", a.index)),
        other => other,
    })?;
    let angles = config.into_vec();
    println!("{}", join(&angles));
    if a.emit_edm {
        println!("{}", join(pack_upper(&edm).as_slice()));
    }
    Ok(angles)
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

/// Outcome of [`roundtrip_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripSummary {
    pub trials: usize,
    pub max_error: f64,
    pub failures: usize,
}

/// Θ → EDM → cMDS → alignment → IK for `trials` seeded configurations.
pub fn roundtrip_check(chain: &KinematicChain, trials: usize, seed: u64) -> Result<RoundtripSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let theta = dataset::sample_configuration(chain, &mut rng);
        let edm = config_to_edm(chain, &theta)?;
        let err = match reconstruct(&edm, chain) {
            Ok(rec) => rec
                .config
                .as_slice()
                .iter()
                .zip(theta.as_slice())
                .map(|(a, b)| wrap_angle(a - b).abs())
                .fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        if err.is_nan() || err > ROUNDTRIP_TOL {
            failures += 1;
        }
        max_error = max_error.max(err);
    }
    Ok(RoundtripSummary {
        trials,
        max_error,
        failures,
    })
}

pub fn cmd_roundtrip(a: &RoundtripArgs) -> Result<ExitCode> {
    let chain = load_chain(&a.common.chain)?;
    let s = roundtrip_check(&chain, a.trials as usize, a.common.seed())?;
    let status = if s.failures == 0 { "pass" } else { "FAIL" };
    println!(
        "{status}: {} trials, max error {:.3e} rad, {} above {ROUNDTRIP_TOL:e}",
        s.trials, s.max_error, s.failures
    );
    Ok(if s.failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

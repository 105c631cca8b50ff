//! Command-line driver for the `mvpconv` library.
//!
//! Every subcommand is reachable through [`run_command`], which returns the
//! process exit code: 0 on success, 1 on a runtime failure, 2 on a usage
//! error (bad flags, missing config file).

pub mod ablation;
pub mod bench;
pub mod data;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mvpconv::gradcheck;
use mvpconv::model::{build_model, SegModelConfig};
use mvpconv::nn::Checkpoint;
use mvpconv::pointcloud::{Encoding, PointCloud, ShapeKind};
use mvpconv::train::{evaluate, split_dataset, train_loop, write_history, TrainConfig};
use mvpconv::{DType, Real};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mvpconv::Error),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Contents of a `--config` file. Both sections are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: SegModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reads a config file; a missing file is a usage error naming the path.
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::Usage(format!("config file not found: {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| mvpconv::Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// `--seed` drives the model init, the shuffle and the synthetic data.
    pub fn reseed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.shuffle_seed = seed;
        self.train.dataset.seed = seed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingArg {
    Text,
    Binary,
}

impl From<EncodingArg> for Encoding {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Text => Encoding::Text,
            EncodingArg::Binary => Encoding::Binary,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f32")]
    pub dtype: DTypeArg,
}

impl Common {
    fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvpconv", version, about = "Point-voxel convolution: data, training, checks and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic labeled clouds and a manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "quad")]
        kind: String,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long, default_value_t = 40)]
        clouds: usize,
        #[arg(long, value_enum, default_value = "binary")]
        encoding: EncodingArg,
    },
    /// Train a model; writes history.csv, best.mvpc, final.mvpc and config.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `gen-data`; otherwise the config's synthetic dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the held-out split; writes eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare tape gradients with finite differences for every layer.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Forward latency per voxel resolution; writes bench.csv.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2048)]
        points: usize,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
        resolutions: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Train and evaluate one ablation grid; writes ablation.csv and ablation.json.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        grid: ablation::Grid,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| mvpconv::Error::io(dir, e).into())
}

pub fn write_json<V: Serialize>(value: &V, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| mvpconv::Error::io(path, e).into())
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::GenData {
            common,
            kind,
            points,
            clouds,
            encoding,
        } => {
            let kind: ShapeKind = kind.parse()?;
            let seed = common.seed.unwrap_or(common.run_config()?.train.dataset.seed);
            let manifest = data::write_dataset(&common.out, kind, points, clouds, seed, encoding.into())?;
            println!("wrote {} clouds to {}", manifest.files.len(), common.out.display());
            Ok(0)
        }
        Command::Train { common, data, epochs } => {
            let mut cfg = common.run_config()?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            match DType::from(common.dtype) {
                DType::F32 => train_command::<f32>(&cfg, data.as_deref(), &common.out),
                DType::F64 => train_command::<f64>(&cfg, data.as_deref(), &common.out),
            }
        }
        Command::Eval {
            common,
            checkpoint,
            data,
        } => {
            let cfg = common.run_config()?;
            match DType::from(common.dtype) {
                DType::F32 => eval_command::<f32>(&cfg, &checkpoint, data.as_deref(), &common.out),
                DType::F64 => eval_command::<f64>(&cfg, &checkpoint, data.as_deref(), &common.out),
            }
        }
        Command::Gradcheck { common } => {
            let reports = gradcheck::run_suite(common.seed.unwrap_or(1))?;
            println!("{:<22} {:>12} {:>12} {:>8}  status", "layer", "max_rel_err", "max_abs_err", "checked");
            for r in &reports {
                println!(
                    "{:<22} {:>12.3e} {:>12.3e} {:>8}  {}",
                    r.layer,
                    r.max_rel_err,
                    r.max_abs_err,
                    r.checked,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            Ok(if reports.iter().all(|r| r.passed()) { 0 } else { 1 })
        }
        Command::Bench {
            common,
            points,
            resolutions,
            trials,
        } => {
            let mut cfg = common.run_config()?;
            if common.config.is_none() {
                cfg.model = ablation::desk_model();
            }
            let seed = common.seed.unwrap_or(cfg.model.seed);
            let rows = match DType::from(common.dtype) {
                DType::F32 => bench::bench_latency::<f32>(&cfg.model, points, &resolutions, trials, seed)?,
                DType::F64 => bench::bench_latency::<f64>(&cfg.model, points, &resolutions, trials, seed)?,
            };
            create_dir(&common.out)?;
            let path = common.out.join("bench.csv");
            bench::write_csv(&rows, &path)?;
            print!("{}", bench::to_csv(&rows));
            Ok(0)
        }
        Command::Ablate {
            common,
            grid,
            epochs,
            trials,
        } => {
            let mut cfg = match &common.config {
                Some(_) => common.run_config()?,
                None => {
                    let mut c = ablation::desk_defaults();
                    if let Some(seed) = common.seed {
                        c.reseed(seed);
                    }
                    c
                }
            };
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let report = ablation::run_ablation(&cfg, grid, trials)?;
            create_dir(&common.out)?;
            ablation::write_report(&report, &common.out)?;
            print!("{}", ablation::to_csv(&report));
            Ok(0)
        }
    }
}

fn load_clouds<T: Real>(cfg: &RunConfig, data: Option<&Path>) -> CliResult<(Vec<PointCloud<T>>, Vec<PointCloud<T>>)> {
    let clouds = match data {
        Some(dir) => data::read_dataset(dir)?.iter().map(PointCloud::cast).collect(),
        None => cfg.train.dataset.generate()?,
    };
    Ok(split_dataset(clouds, cfg.train.eval_fraction)?)
}

fn train_command<T: Real>(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> CliResult<i32> {
    create_dir(out)?;
    let mut tc = cfg.train.clone();
    tc.checkpoint_dir = Some(out.to_path_buf());
    let (train, eval) = load_clouds::<T>(cfg, data)?;
    let (model, mut params) = build_model::<T>(&cfg.model)?;
    let outcome = train_loop(&model, &mut params, &train, &eval, &tc)?;
    write_history(&outcome.history, out.join("history.csv"))?;
    write_json(&RunConfig { model: cfg.model.clone(), train: tc }, &out.join("config.json"))?;
    write_json(&outcome.final_eval, &out.join("eval.json"))?;
    for r in &outcome.history {
        println!(
            "epoch {:>4}  loss {:.5}  miou {:.4}  acc {:.4}  {:.2}s",
            r.epoch, r.loss, r.miou, r.accuracy, r.seconds
        );
    }
    println!(
        "best epoch {} miou {:.4}; final miou {:.4} acc {:.4}",
        outcome.best_epoch, outcome.best_eval.miou, outcome.final_eval.miou, outcome.final_eval.accuracy
    );
    Ok(0)
}

fn eval_command<T: Real>(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> CliResult<i32> {
    let (model, mut params) = build_model::<T>(&cfg.model)?;
    Checkpoint::load(checkpoint)?.restore_params(&mut params)?;
    let (_, eval) = load_clouds::<T>(cfg, data)?;
    let result = evaluate(&model, &params, &eval, cfg.train.batch_size)?;
    create_dir(out)?;
    write_json(&result, &out.join("eval.json"))?;
    println!("miou {:.6}  accuracy {:.6}  clouds {}", result.miou, result.accuracy, eval.len());
    Ok(0)
}

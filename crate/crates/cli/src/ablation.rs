//! Ablation grids over block architecture and output aggregation.
//!
//! Every configuration of a grid is trained from the same seed on the same
//! clouds. Training may run in parallel worker slots (capped by
//! `MVP_THREADS`); latency is measured afterwards, one model at a time.

use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mvpconv::model::{build_model, SegModelConfig};
use mvpconv::mvpconv::Variant;
use mvpconv::train::{split_dataset, train_loop, DatasetSpec, TrainConfig};
use mvpconv::Error;

use crate::bench::{summarize, time_forward};
use crate::{write_json, CliResult, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Initializing neuron alone (three forms) against the full block.
    Table4,
    /// Output aggregation variants A to H.
    Table5,
    /// With and without the 1×1×1 convolution.
    Table6,
}

impl Grid {
    pub fn name(self) -> &'static str {
        match self {
            Grid::Table4 => "table4",
            Grid::Table5 => "table5",
            Grid::Table6 => "table6",
        }
    }
}

/// Desk-scale base model: default blocks at 0.25× width.
pub fn desk_model() -> SegModelConfig {
    SegModelConfig {
        width_multiplier: 0.25,
        seed: 7,
        ..Default::default()
    }
}

/// Desk-scale defaults: 512-point quad clouds, 32 train and 8 eval, 50 epochs.
pub fn desk_defaults() -> RunConfig {
    RunConfig {
        model: desk_model(),
        train: TrainConfig {
            epochs: 50,
            dataset: DatasetSpec {
                n_points: 512,
                n_clouds: 40,
                seed: 7,
                ..Default::default()
            },
            eval_fraction: 0.2,
            shuffle_seed: 7,
            ..Default::default()
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub id: String,
    pub model: SegModelConfig,
}

fn init_only(base: &SegModelConfig) -> SegModelConfig {
    let mut m = base.clone();
    m.block.transmission_enabled = false;
    m.block.variant = Variant::B;
    m
}

/// Configurations of one grid, derived from `base`.
pub fn grid_entries(base: &SegModelConfig, grid: Grid) -> Vec<GridEntry> {
    let entry = |id: &str, model: SegModelConfig| GridEntry { id: id.to_string(), model };
    match grid {
        Grid::Table4 => {
            let init = init_only(base);
            let mut wide = init.clone();
            for b in &mut wide.blocks {
                b.1 = (b.1 * 3).div_ceil(2);
            }
            let mut deep = init.clone();
            deep.block.conv3d_depth = 3;
            let mut full = base.clone();
            full.block.transmission_enabled = true;
            full.block.variant = Variant::G;
            vec![
                entry("init", init),
                entry("init_1.5xR", wide),
                entry("init_3xConv3D", deep),
                entry("init+trans", full),
            ]
        }
        Grid::Table5 => Variant::ALL
            .iter()
            .map(|&v| {
                let mut m = base.clone();
                m.block.variant = v;
                entry(&v.to_string(), m)
            })
            .collect(),
        Grid::Table6 => [("with_1x1", true), ("without_1x1", false)]
            .into_iter()
            .map(|(id, on)| {
                let mut m = base.clone();
                m.block.use_1x1_conv = on;
                entry(id, m)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config_id: String,
    pub variant: Variant,
    pub transmission: bool,
    pub use_1x1_conv: bool,
    pub conv3d_depth: usize,
    /// Block resolutions joined by `/`.
    pub resolutions: String,
    pub param_count: usize,
    pub miou: Option<f64>,
    pub accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub median_latency_ms: Option<f64>,
    pub train_seconds: Option<f64>,
    pub desk_scale: bool,
    /// Why the configuration was not run, if it was not.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub grid: Grid,
    pub epochs: usize,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Worker slots: `MVP_THREADS` if set and positive, else the logical CPU count.
pub fn worker_threads() -> usize {
    std::env::var("MVP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

struct Trained {
    model: mvpconv::model::SegModel,
    params: mvpconv::nn::ParamSet<f32>,
    miou: f64,
    accuracy: f64,
    final_loss: f64,
    seconds: f64,
}

pub fn run_ablation(cfg: &RunConfig, grid: Grid, trials: usize) -> CliResult<AblationReport> {
    cfg.train.validate()?;
    let clouds = cfg.train.dataset.generate::<f32>()?;
    let (train, eval) = split_dataset(clouds, cfg.train.eval_fraction)?;
    let entries = grid_entries(&cfg.model, grid);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let trained: Vec<Result<Option<Trained>, Error>> = pool.install(|| {
        entries
            .par_iter()
            .map(|entry| {
                if let Err(e) = entry.model.validate() {
                    return match e {
                        Error::Config(_) => Ok(None),
                        other => Err(other),
                    };
                }
                let start = Instant::now();
                let (model, mut params) = build_model::<f32>(&entry.model)?;
                let outcome = train_loop(&model, &mut params, &train, &eval, &cfg.train)?;
                Ok(Some(Trained {
                    model,
                    params,
                    miou: outcome.final_eval.miou,
                    accuracy: outcome.final_eval.accuracy,
                    final_loss: outcome.history.last().map_or(f64::NAN, |r| r.loss),
                    seconds: start.elapsed().as_secs_f64(),
                }))
            })
            .collect()
    });

    // Latency runs only after every worker has finished.
    let probe = eval.first().unwrap_or(&train[0]);
    let mut rows = Vec::with_capacity(entries.len());
    for (entry, result) in entries.iter().zip(trained) {
        let m = &entry.model;
        let mut row = AblationRow {
            config_id: entry.id.clone(),
            variant: m.block.variant,
            transmission: m.block.transmission_enabled,
            use_1x1_conv: m.block.use_1x1_conv,
            conv3d_depth: m.block.conv3d_depth,
            resolutions: m.blocks.iter().map(|b| b.1.to_string()).collect::<Vec<_>>().join("/"),
            param_count: m.param_count(),
            miou: None,
            accuracy: None,
            final_loss: None,
            median_latency_ms: None,
            train_seconds: None,
            desk_scale: true,
            skipped: None,
        };
        match result? {
            None => row.skipped = Some(entry.model.validate().err().map_or_else(String::new, |e| e.to_string())),
            Some(t) => {
                let latency = summarize(&time_forward(&t.model, &t.params, probe, trials.max(1))?).median;
                row.miou = Some(t.miou);
                row.accuracy = Some(t.accuracy);
                row.final_loss = Some(t.final_loss);
                row.median_latency_ms = Some(latency);
                row.train_seconds = Some(t.seconds);
            }
        }
        rows.push(row);
    }
    Ok(AblationReport {
        grid,
        epochs: cfg.train.epochs,
        seed: cfg.model.seed,
        rows,
    })
}

pub const CSV_HEADER: &str = "grid,config_id,variant,transmission,use_1x1_conv,conv3d_depth,resolutions,param_count,miou,accuracy,final_loss,median_latency_ms,train_seconds,desk_scale,skipped";

/// One `ablation.csv` line: a row plus its grid name.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    grid: Grid,
    config_id: String,
    variant: Variant,
    transmission: bool,
    use_1x1_conv: bool,
    conv3d_depth: usize,
    resolutions: String,
    param_count: usize,
    miou: Option<f64>,
    accuracy: Option<f64>,
    final_loss: Option<f64>,
    median_latency_ms: Option<f64>,
    train_seconds: Option<f64>,
    desk_scale: bool,
    skipped: Option<String>,
}

impl CsvRecord {
    fn new(grid: Grid, r: &AblationRow) -> Self {
        let r = r.clone();
        CsvRecord {
            grid,
            config_id: r.config_id,
            variant: r.variant,
            transmission: r.transmission,
            use_1x1_conv: r.use_1x1_conv,
            conv3d_depth: r.conv3d_depth,
            resolutions: r.resolutions,
            param_count: r.param_count,
            miou: r.miou,
            accuracy: r.accuracy,
            final_loss: r.final_loss,
            median_latency_ms: r.median_latency_ms,
            train_seconds: r.train_seconds,
            desk_scale: r.desk_scale,
            skipped: r.skipped,
        }
    }

    fn into_row(self) -> AblationRow {
        AblationRow {
            config_id: self.config_id,
            variant: self.variant,
            transmission: self.transmission,
            use_1x1_conv: self.use_1x1_conv,
            conv3d_depth: self.conv3d_depth,
            resolutions: self.resolutions,
            param_count: self.param_count,
            miou: self.miou,
            accuracy: self.accuracy,
            final_loss: self.final_loss,
            median_latency_ms: self.median_latency_ms,
            train_seconds: self.train_seconds,
            desk_scale: self.desk_scale,
            skipped: self.skipped,
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Format {
        line,
        detail: e.to_string(),
    }
}

pub fn to_csv(report: &AblationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(CsvRecord::new(report.grid, r)).expect("in-memory csv write");
    }
    if report.rows.is_empty() {
        return format!("{CSV_HEADER}\n");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// Rows of an `ablation.csv`.
pub fn parse_csv(text: &str) -> CliResult<Vec<AblationRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Format {
            line: 1,
            detail: "unexpected ablation header".into(),
        }
        .into());
    }
    reader
        .deserialize::<CsvRecord>()
        .map(|r| r.map(CsvRecord::into_row).map_err(|e| csv_error(e).into()))
        .collect()
}

/// Writes `ablation.csv` and `ablation.json` into `dir`, creating it if needed.
pub fn write_report(report: &AblationReport, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("ablation.csv");
    std::fs::write(&csv, to_csv(report)).map_err(|e| Error::io(&csv, e))?;
    write_json(report, &dir.join("ablation.json"))
}

//! Forward-pass latency per voxel resolution.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use mvpconv::model::{build_model, SegModel, SegModelConfig};
use mvpconv::nn::ParamSet;
use mvpconv::pointcloud::{generate_synthetic, PointCloud, ShapeKind};
use mvpconv::{Error, Real};

use crate::CliResult;

/// Untimed runs before each measured series.
pub const WARMUP: usize = 3;
pub const MIN_TRIALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub resolution: usize,
    pub n_points: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
}

/// Median, mean and nearest-rank 95th percentile.
pub fn summarize(samples: &[f64]) -> Summary {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Summary {
        median,
        mean: s.iter().sum::<f64>() / n as f64,
        p95: s[rank - 1],
    }
}

/// Wall-clock milliseconds of `trials` eval-mode forwards after the warmup.
pub fn time_forward<T: Real>(model: &SegModel, params: &ParamSet<T>, cloud: &PointCloud<T>, trials: usize) -> CliResult<Vec<f64>> {
    for _ in 0..WARMUP {
        model.logits(params, cloud)?;
    }
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        let logits = model.logits(params, cloud)?;
        out.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(logits);
    }
    Ok(out)
}

/// Every block of `model_cfg` is set to each resolution in turn; the input
/// cloud is the same for all of them.
pub fn bench_latency<T: Real>(
    model_cfg: &SegModelConfig,
    n_points: usize,
    resolutions: &[usize],
    trials: usize,
    seed: u64,
) -> CliResult<Vec<BenchRow>> {
    if trials < MIN_TRIALS {
        return Err(Error::Config(format!("bench needs at least {MIN_TRIALS} trials, got {trials}")).into());
    }
    if resolutions.is_empty() {
        return Err(Error::Config("no resolutions to bench".into()).into());
    }
    let cloud: PointCloud<T> = generate_synthetic(ShapeKind::Quad, n_points, 1, seed)?[0].cast();
    let mut rows = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        let mut cfg = model_cfg.clone();
        for b in &mut cfg.blocks {
            b.1 = r;
        }
        let (model, params) = build_model::<T>(&cfg)?;
        let s = summarize(&time_forward(&model, &params, &cloud, trials)?);
        rows.push(BenchRow {
            resolution: r,
            n_points,
            median_ms: s.median,
            mean_ms: s.mean,
            p95_ms: s.p95,
            trials,
        });
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "resolution,n_points,median_ms,mean_ms,p95_ms,trials";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.resolution, r.n_points, r.median_ms, r.mean_ms, r.p95_ms, r.trials
        );
    }
    out
}

pub fn write_csv(rows: &[BenchRow], path: &Path) -> CliResult<()> {
    std::fs::write(path, to_csv(rows)).map_err(|e| Error::io(path, e).into())
}

pub fn parse_csv(text: &str) -> CliResult<Vec<BenchRow>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some(CSV_HEADER) {
        return Err(Error::Format {
            line: 1,
            detail: format!("expected header {CSV_HEADER:?}"),
        }
        .into());
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Format {
                line: i + 1,
                detail: format!("bad bench row {l:?}"),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad().into());
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(BenchRow {
                resolution: int(f[0])?,
                n_points: int(f[1])?,
                median_ms: real(f[2])?,
                mean_ms: real(f[3])?,
                p95_ms: real(f[4])?,
                trials: int(f[5])?,
            })
        })
        .collect()
}

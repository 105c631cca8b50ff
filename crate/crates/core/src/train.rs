//! Training loop, evaluation and history CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metrics::{compute_miou, EvalResult};
use crate::model::{argmax_classes, SegModel};
use crate::nn::{cross_entropy, AdamConfig, AdamState, Checkpoint, Ctx, Mode, ParamSet};
use crate::pointcloud::{generate_synthetic, PointCloud, ShapeKind};
use crate::tensor::Real;

/// Synthetic dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub kind: ShapeKind,
    pub n_points: usize,
    pub n_clouds: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: ShapeKind::Quad,
            n_points: 512,
            n_clouds: 40,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn generate<T: Real>(&self) -> Result<Vec<PointCloud<T>>> {
        Ok(generate_synthetic(self.kind, self.n_points, self.n_clouds, self.seed)?
            .iter()
            .map(PointCloud::cast)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dataset: DatasetSpec,
    /// Fraction of clouds, taken from the end, held out for evaluation.
    pub eval_fraction: f64,
    /// Directory for `best.mvpc` and `final.mvpc`; nothing is written when absent.
    pub checkpoint_dir: Option<PathBuf>,
    /// Seeds the per-epoch shuffle of training clouds.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 100,
            lr: 1e-3,
            dataset: DatasetSpec::default(),
            eval_fraction: 0.2,
            checkpoint_dir: None,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "batch_size ({}) and epochs ({}) must be at least 1",
                self.batch_size, self.epochs
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::Config(format!("eval_fraction {} outside [0, 1)", self.eval_fraction)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Deterministic split: the last `round(n · fraction)` clouds are held out.
pub fn split_dataset<T: Real>(clouds: Vec<PointCloud<T>>, eval_fraction: f64) -> Result<(Vec<PointCloud<T>>, Vec<PointCloud<T>>)> {
    let n = clouds.len();
    let n_eval = (n as f64 * eval_fraction).round() as usize;
    if n_eval >= n || (eval_fraction > 0.0 && n_eval == 0) {
        return Err(Error::Config(format!(
            "eval_fraction {eval_fraction} of {n} clouds leaves an empty split"
        )));
    }
    let mut train = clouds;
    let eval = train.split_off(n - n_eval);
    Ok((train, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub loss: f64,
    pub miou: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

pub const HISTORY_HEADER: &str = "epoch,loss,miou,accuracy,seconds";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.loss, r.miou, r.accuracy, r.seconds);
    }
    out
}

pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HISTORY_HEADER => {}
        _ => {
            return Err(Error::Format {
                line: 1,
                detail: format!("expected header {HISTORY_HEADER:?}"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |detail: String| Error::Format { line: i + 1, detail };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("not a number: {s:?}")));
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(format!("bad epoch {:?}", f[0])))?,
                loss: real(f[1])?,
                miou: real(f[2])?,
                accuracy: real(f[3])?,
                seconds: real(f[4])?,
            })
        })
        .collect()
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

fn labels_of<T: Real>(cloud: &PointCloud<T>) -> Result<&[usize]> {
    cloud
        .labels()
        .ok_or_else(|| Error::Config("training and evaluation need labeled clouds".into()))
}

fn batches<T: Real>(clouds: &[&PointCloud<T>], batch_size: usize) -> Result<Vec<PointCloud<T>>> {
    clouds.chunks(batch_size).map(PointCloud::stack).collect()
}

/// Eval-mode metrics over `clouds`, processed `batch_size` at a time.
pub fn evaluate<T: Real>(
    model: &SegModel,
    params: &ParamSet<T>,
    clouds: &[PointCloud<T>],
    batch_size: usize,
) -> Result<EvalResult> {
    let start = Instant::now();
    if clouds.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let refs: Vec<&PointCloud<T>> = clouds.iter().collect();
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for batch in batches(&refs, batch_size.max(1))? {
        preds.extend(argmax_classes(&model.logits(params, &batch)?));
        labels.extend_from_slice(labels_of(&batch)?);
    }
    let mut result = compute_miou(&preds, &labels, clouds.len(), clouds[0].points(), model.config.num_classes)?;
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub final_eval: EvalResult,
    pub best_eval: EvalResult,
    pub best_epoch: usize,
    pub adam: AdamState<T>,
}

/// Mean loss of one train-mode step; applies running-stat updates and one
/// Adam step.
fn train_step<T: Real>(
    model: &SegModel,
    params: &mut ParamSet<T>,
    adam: &mut AdamState<T>,
    batch: &PointCloud<T>,
) -> Result<f64> {
    let tape = Tape::new();
    let (loss, grads, updates) = {
        let mut cx = Ctx::new(&tape, params, Mode::Train);
        let logits = model.forward_cloud(&mut cx, batch)?;
        let loss = cross_entropy(logits, labels_of(batch)?)?;
        let lv = loss.value().item().as_f64();
        if !lv.is_finite() {
            return Ok(lv);
        }
        let mut g = tape.backward(loss)?;
        let grads = cx.param_grads(&mut g);
        (lv, grads, cx.into_updates())
    };
    params.apply_updates(updates);
    adam.step(params, &grads)?;
    Ok(loss)
}

/// Trains for `tc.epochs` epochs, evaluating after each. With a checkpoint
/// directory, `best.mvpc` tracks the highest eval mIoU and `final.mvpc`
/// holds the last parameters plus optimizer state.
pub fn train_loop<T: Real>(
    model: &SegModel,
    params: &mut ParamSet<T>,
    train: &[PointCloud<T>],
    eval: &[PointCloud<T>],
    tc: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training clouds".into()));
    }
    let eval_set = if eval.is_empty() { train } else { eval };
    if let Some(dir) = &tc.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.shuffle_seed);
    let mut adam = AdamState::new(params, tc.adam());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, EvalResult)> = None;
    let mut last_eval = None;

    for epoch in 1..=tc.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let shuffled: Vec<&PointCloud<T>> = order.iter().map(|&i| &train[i]).collect();
        let mut total = 0.0;
        for (bi, batch) in batches(&shuffled, tc.batch_size)?.iter().enumerate() {
            let loss = train_step(model, params, &mut adam, batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi, loss });
            }
            total += loss * batch.batch() as f64;
        }
        let result = evaluate(model, params, eval_set, tc.batch_size)?;
        history.push(EpochRecord {
            epoch,
            loss: total / train.len() as f64,
            miou: result.miou,
            accuracy: result.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(_, b)| result.miou > b.miou) {
            if let Some(dir) = &tc.checkpoint_dir {
                Checkpoint::capture(params, None).save(dir.join("best.mvpc"))?;
            }
            best = Some((epoch, result.clone()));
        }
        last_eval = Some(result);
    }
    if let Some(dir) = &tc.checkpoint_dir {
        Checkpoint::capture(params, Some(&adam)).save(dir.join("final.mvpc"))?;
    }
    let (best_epoch, best_eval) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        final_eval: last_eval.expect("at least one epoch"),
        best_eval,
        best_epoch,
        adam,
    })
}

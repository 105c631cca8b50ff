//! PointNet-style segmentation network built from MVPConv blocks.
//!
//! ```text
//! x₀ = features                                    [B × C_in × N]
//! xᵢ = block_i(xᵢ₋₁)                               [B × C₂ⁱ × N]
//! g  = maxpool_N(mlp(x_last → global_dim))         [B × global_dim]
//! h  = concat(x₁, …, x_L, broadcast_N(g))
//! logits = linear(mlp(…mlp(h)) → K)                [B × K × N]
//! ```
//!
//! Trainable parameter count:
//! `Σ blocks + mlp(C₂ᴸ, G) + Σ mlp(classifier) + (c_last·K + K)` with
//! `mlp(a, b) = a·b + 3·b`.

use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{broadcast_points, concat_channels, max_over_points, Tape, Var};
use crate::error::{Error, Result};
use crate::mvpconv::{MVPConvBlock, MVPConvConfig, Variant};
use crate::nn::{Ctx, Mode, ParamSet, PointwiseLinear, SharedMlp};
use crate::pointcloud::{normalize_points, scale_to_grid, PointCloud};
use crate::tensor::{Real, Tensor};
use crate::voxel::PointVoxelMap;

/// Options shared by every block of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockOptions {
    pub use_1x1_conv: bool,
    pub conv3d_depth: usize,
    pub variant: Variant,
    pub transmission_enabled: bool,
}

impl Default for BlockOptions {
    fn default() -> Self {
        let c = MVPConvConfig::new(1, 1, 2);
        BlockOptions {
            use_1x1_conv: c.use_1x1_conv,
            conv3d_depth: c.conv3d_depth,
            variant: c.variant,
            transmission_enabled: c.transmission_enabled,
        }
    }
}

/// Model configuration; the JSON form uses these field names, and any
/// omitted field takes its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegModelConfig {
    /// `(C₂, r)` per block, before the width multiplier.
    pub blocks: Vec<(usize, usize)>,
    pub width_multiplier: f64,
    pub global_dim: usize,
    /// Hidden widths of the shared-MLP classifier, before the final linear map.
    pub classifier: Vec<usize>,
    pub num_classes: usize,
    pub in_channels: usize,
    pub leaky_slope: f64,
    pub seed: u64,
    pub block: BlockOptions,
}

impl Default for SegModelConfig {
    fn default() -> Self {
        SegModelConfig {
            blocks: vec![(16, 8), (32, 8), (64, 4)],
            width_multiplier: 1.0,
            global_dim: 128,
            classifier: vec![64],
            num_classes: 4,
            in_channels: 3,
            leaky_slope: 0.1,
            seed: 0,
            block: BlockOptions::default(),
        }
    }
}

/// `round(c · w)`, at least one.
pub fn scale_width(channels: usize, multiplier: f64) -> usize {
    ((channels as f64 * multiplier).round() as usize).max(1)
}

impl SegModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("model needs at least one block".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::Config(format!("width_multiplier {} must be positive", self.width_multiplier)));
        }
        if self.in_channels == 0 || self.global_dim == 0 || self.classifier.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        self.block_configs().iter().try_for_each(MVPConvConfig::validate)
    }

    /// Per-block configurations with the width multiplier applied.
    pub fn block_configs(&self) -> Vec<MVPConvConfig> {
        let mut c_in = self.in_channels;
        self.blocks
            .iter()
            .map(|&(c, r)| {
                let c_out = scale_width(c, self.width_multiplier);
                let cfg = MVPConvConfig {
                    c_in,
                    c_out,
                    resolution: r,
                    leaky_slope: self.leaky_slope,
                    use_1x1_conv: self.block.use_1x1_conv,
                    conv3d_depth: self.block.conv3d_depth,
                    variant: self.block.variant,
                    transmission_enabled: self.block.transmission_enabled,
                };
                c_in = c_out;
                cfg
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let blocks = self.block_configs();
        let mlp = SharedMlp::param_count;
        let last = blocks.last().map_or(self.in_channels, |b| b.c_out);
        let mut width = blocks.iter().map(|b| b.c_out).sum::<usize>() + self.global_dim;
        let mut n = blocks.iter().map(MVPConvConfig::param_count).sum::<usize>() + mlp(last, self.global_dim);
        for &c in &self.classifier {
            n += mlp(width, c);
            width = c;
        }
        n + PointwiseLinear::param_count(width, self.num_classes)
    }
}

#[derive(Debug, Clone)]
pub struct SegModel {
    pub config: SegModelConfig,
    pub blocks: Vec<MVPConvBlock>,
    global: SharedMlp,
    classifier: Vec<SharedMlp>,
    head: PointwiseLinear,
}

/// Builds the model and its parameters. Initial values are drawn in f64
/// from `config.seed`, so both dtypes start from the same point.
pub fn build_model<T: Real>(config: &SegModelConfig) -> Result<(SegModel, ParamSet<T>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::<f64>::new();
    let blocks = config
        .block_configs()
        .into_iter()
        .enumerate()
        .map(|(i, c)| MVPConvBlock::new(&mut params, &mut rng, &format!("block{i}"), c))
        .collect::<Result<Vec<_>>>()?;
    let last = blocks.last().expect("validated").config.c_out;
    let global = SharedMlp::new(&mut params, &mut rng, "global", last, config.global_dim)?;
    let mut width = blocks.iter().map(|b| b.config.c_out).sum::<usize>() + config.global_dim;
    let mut classifier = Vec::new();
    for (i, &c) in config.classifier.iter().enumerate() {
        classifier.push(SharedMlp::new(&mut params, &mut rng, &format!("classifier{i}"), width, c)?);
        width = c;
    }
    let head = PointwiseLinear::new(&mut params, &mut rng, "head", width, config.num_classes)?;
    let model = SegModel {
        config: config.clone(),
        blocks,
        global,
        classifier,
        head,
    };
    Ok((model, params.cast()))
}

impl SegModel {
    /// One point-voxel map per distinct block resolution.
    fn maps<T: Real>(&self, positions: &Tensor<T>) -> Result<Vec<(usize, Rc<PointVoxelMap>)>> {
        let coords = normalize_points(positions)?;
        let mut maps: Vec<(usize, Rc<PointVoxelMap>)> = Vec::new();
        for b in &self.blocks {
            let r = b.config.resolution;
            if maps.iter().all(|(mr, _)| *mr != r) {
                let grid = scale_to_grid(&coords, r)?;
                maps.push((r, Rc::new(PointVoxelMap::new(&grid, r)?)));
            }
        }
        Ok(maps)
    }

    /// Logits `[B × K × N]` for positions `[B × N × 3]` and a feature variable.
    pub fn forward<'t, T: Real>(
        &self,
        cx: &mut Ctx<'t, '_, T>,
        positions: &Tensor<T>,
        features: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let maps = self.maps(positions)?;
        let n = positions.shape()[1];
        let mut x = features;
        let mut parts = Vec::with_capacity(self.blocks.len() + 1);
        for b in &self.blocks {
            let map = &maps.iter().find(|(r, _)| *r == b.config.resolution).expect("built above").1;
            x = b.forward_mapped(cx, map, x)?;
            parts.push(x);
        }
        let g = self.global.forward(cx, x)?;
        let g = max_over_points(g)?;
        parts.push(broadcast_points(g, n)?);
        let mut h = concat_channels(&parts)?;
        for layer in &self.classifier {
            h = layer.forward(cx, h)?;
        }
        self.head.forward(cx, h)
    }

    pub fn forward_cloud<'t, T: Real>(&self, cx: &mut Ctx<'t, '_, T>, cloud: &PointCloud<T>) -> Result<Var<'t, T>> {
        let x = cx.tape().constant(cloud.features().clone());
        self.forward(cx, cloud.positions(), x)
    }

    /// Eval-mode logits.
    pub fn logits<T: Real>(&self, params: &ParamSet<T>, cloud: &PointCloud<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let mut cx = Ctx::new(&tape, params, Mode::Eval);
        let out = self.forward_cloud(&mut cx, cloud)?;
        Ok(out.value().as_ref().clone())
    }

    /// Eval-mode argmax labels, `[B × N]` row-major; ties go to the lower class.
    pub fn predict<T: Real>(&self, params: &ParamSet<T>, cloud: &PointCloud<T>) -> Result<Vec<usize>> {
        Ok(argmax_classes(&self.logits(params, cloud)?))
    }
}

/// Per-point argmax over the class axis of `[B × K × N]` logits.
pub fn argmax_classes<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let (b, k, n) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let d = logits.data();
    let mut out = Vec::with_capacity(b * n);
    for bi in 0..b {
        for i in 0..n {
            let mut best = 0;
            for c in 1..k {
                if d[(bi * k + c) * n + i] > d[(bi * k + best) * n + i] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    out
}

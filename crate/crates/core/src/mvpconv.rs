//! The MVPConv block: an initializing Voxel-Point neuron, an optional
//! transmission neuron fed with the fused features `V1 + P1`, and a summing
//! aggregation over a chosen subset of `{V1, P1, V2, P2}`.
//!
//! Parameter count of a block with `C₁ = c_in`, `C₂ = c_out`, depth `d`:
//!
//! ```text
//! convbn(a, b)  = 27·a·b + 3·b          (3×3×3 conv weight + bias, BN γ/β)
//! mlp(a, b)     = a·b + 3·b             (pointwise weight + bias, BN γ/β)
//!
//! init          = convbn(C₁, C₂) + (d − 1)·convbn(C₂, C₂) + mlp(C₁, C₂)
//! trans voxel   = [1×1×1] (C₂² + C₂) + 2·convbn(C₂, C₂)   when V2 is selected
//! trans point   = mlp(C₂, C₂)                             when P2 is selected
//! ```
//!
//! Transmission branches are only built (and only counted) when the
//! transmission neuron is enabled and the variant sums their output.
//! Running statistics are buffers and are not counted.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{add, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv3d, ConvBnAct, Ctx, ParamSet, SharedMlp};
use crate::pointcloud::{normalize_points, scale_to_grid};
use crate::tensor::{Real, Tensor};
use crate::voxel::{devoxelize_var, voxelize_var, PointVoxelMap};

/// One of the four per-point tensors a block can sum at its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Member {
    V1,
    P1,
    V2,
    P2,
}

impl Member {
    pub const ALL: [Member; 4] = [Member::V1, Member::P1, Member::V2, Member::P2];

    pub fn needs_transmission(self) -> bool {
        matches!(self, Member::V2 | Member::P2)
    }
}

/// Aggregation variant: a fixed subset of members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::A,
        Variant::B,
        Variant::C,
        Variant::D,
        Variant::E,
        Variant::F,
        Variant::G,
        Variant::H,
    ];

    pub fn members(self) -> &'static [Member] {
        use Member::*;
        match self {
            Variant::A => &[V2],
            Variant::B => &[V1, P1],
            Variant::C => &[P1, V2],
            Variant::D => &[V2, P2],
            Variant::E => &[V1, P1, V2],
            Variant::F => &[P1, V2, P2],
            Variant::G => &[V1, V2, P2],
            Variant::H => &[V1, P1, V2, P2],
        }
    }

    pub fn selects(self, m: Member) -> bool {
        self.members().contains(&m)
    }

    pub fn needs_transmission(self) -> bool {
        self.members().iter().any(|m| m.needs_transmission())
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::G
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected one of A..H")))
    }
}

fn default_slope() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn default_depth() -> usize {
    2
}

/// Hyperparameters of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MVPConvConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub resolution: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_true")]
    pub use_1x1_conv: bool,
    /// Number of 3×3×3 convs in the initializing voxel branch.
    #[serde(default = "default_depth")]
    pub conv3d_depth: usize,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_true")]
    pub transmission_enabled: bool,
}

impl MVPConvConfig {
    pub fn new(c_in: usize, c_out: usize, resolution: usize) -> Self {
        MVPConvConfig {
            c_in,
            c_out,
            resolution,
            leaky_slope: default_slope(),
            use_1x1_conv: true,
            conv3d_depth: default_depth(),
            variant: Variant::G,
            transmission_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::Config(format!(
                "block channels must be positive ({} -> {})",
                self.c_in, self.c_out
            )));
        }
        if self.resolution < 2 {
            return Err(Error::Config(format!("resolution must be at least 2, got {}", self.resolution)));
        }
        if self.conv3d_depth == 0 {
            return Err(Error::Config("conv3d_depth must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!("leaky_slope {} outside [0, 1)", self.leaky_slope)));
        }
        if !self.transmission_enabled && self.variant.needs_transmission() {
            return Err(infeasible(self.variant));
        }
        Ok(())
    }

    fn builds(&self, m: Member) -> bool {
        !m.needs_transmission() || (self.transmission_enabled && self.variant.selects(m))
    }

    /// Trainable parameter count, from the formula in the module docs.
    pub fn param_count(&self) -> usize {
        let (c1, c2) = (self.c_in, self.c_out);
        let mut n = ConvBnAct::param_count(c1, c2)
            + (self.conv3d_depth - 1) * ConvBnAct::param_count(c2, c2)
            + SharedMlp::param_count(c1, c2);
        if self.builds(Member::V2) {
            if self.use_1x1_conv {
                n += Conv3d::param_count(c2, c2, 1);
            }
            n += TRANSMISSION_DEPTH * ConvBnAct::param_count(c2, c2);
        }
        if self.builds(Member::P2) {
            n += SharedMlp::param_count(c2, c2);
        }
        n
    }
}

fn infeasible(variant: Variant) -> Error {
    Error::Config(format!(
        "variant {variant} sums transmission outputs but the transmission neuron is disabled"
    ))
}

const TRANSMISSION_DEPTH: usize = 2;

/// Branch outputs, each `[B × C₂ × N]`.
#[derive(Clone, Copy)]
pub struct NeuronOutput<'t, T> {
    pub v1: Var<'t, T>,
    pub p1: Var<'t, T>,
    pub v2: Option<Var<'t, T>>,
    pub p2: Option<Var<'t, T>>,
}

impl<'t, T> NeuronOutput<'t, T> {
    pub fn member(&self, m: Member) -> Option<Var<'t, T>> {
        match m {
            Member::V1 => Some(self.v1),
            Member::P1 => Some(self.p1),
            Member::V2 => self.v2,
            Member::P2 => self.p2,
        }
    }
}

/// Sums the members selected by `variant` in the order V1, P1, V2, P2.
pub fn aggregate_features<'t, T: Real>(out: &NeuronOutput<'t, T>, variant: Variant) -> Result<Var<'t, T>> {
    let mut acc: Option<Var<'t, T>> = None;
    for &m in variant.members() {
        let v = out.member(m).ok_or_else(|| infeasible(variant))?;
        acc = Some(match acc {
            None => v,
            Some(a) => add(a, v)?,
        });
    }
    Ok(acc.expect("every variant has at least one member"))
}

/// Normalizes positions, scales them to the grid and builds the shared
/// point-voxel map.
pub fn block_map<T: Real>(positions: &Tensor<T>, resolution: usize) -> Result<Rc<PointVoxelMap>> {
    let coords = normalize_points(positions)?;
    let grid = scale_to_grid(&coords, resolution)?;
    Ok(Rc::new(PointVoxelMap::new(&grid, resolution)?))
}

#[derive(Debug, Clone)]
pub struct MVPConvBlock {
    pub config: MVPConvConfig,
    init_voxel: Vec<ConvBnAct>,
    init_point: SharedMlp,
    trans_1x1: Option<Conv3d>,
    trans_voxel: Vec<ConvBnAct>,
    trans_point: Option<SharedMlp>,
}

impl MVPConvBlock {
    pub fn new<T: Real, R: Rng>(params: &mut ParamSet<T>, rng: &mut R, name: &str, config: MVPConvConfig) -> Result<Self> {
        config.validate()?;
        let (c1, c2, slope) = (config.c_in, config.c_out, config.leaky_slope);
        let init_voxel = (0..config.conv3d_depth)
            .map(|i| {
                let cin = if i == 0 { c1 } else { c2 };
                ConvBnAct::new(params, rng, &format!("{name}.init.voxel{i}"), cin, c2, slope)
            })
            .collect::<Result<Vec<_>>>()?;
        let init_point = SharedMlp::new(params, rng, &format!("{name}.init.point"), c1, c2)?;

        let (mut trans_1x1, mut trans_voxel, mut trans_point) = (None, Vec::new(), None);
        if config.builds(Member::V2) {
            if config.use_1x1_conv {
                trans_1x1 = Some(Conv3d::new(params, rng, &format!("{name}.trans.conv1x1"), c2, c2, 1)?);
            }
            trans_voxel = (0..TRANSMISSION_DEPTH)
                .map(|i| ConvBnAct::new(params, rng, &format!("{name}.trans.voxel{i}"), c2, c2, slope))
                .collect::<Result<Vec<_>>>()?;
        }
        if config.builds(Member::P2) {
            trans_point = Some(SharedMlp::new(params, rng, &format!("{name}.trans.point"), c2, c2)?);
        }
        Ok(MVPConvBlock {
            config,
            init_voxel,
            init_point,
            trans_1x1,
            trans_voxel,
            trans_point,
        })
    }

    fn check_map(&self, map: &PointVoxelMap) -> Result<()> {
        if map.resolution() != self.config.resolution {
            return Err(Error::contract(
                "mvpconv",
                format!(
                    "map resolution {} but block resolution {}",
                    map.resolution(),
                    self.config.resolution
                ),
            ));
        }
        Ok(())
    }

    /// `(V1, P1)` from `[B × C₁ × N]` features.
    pub fn initializing_neuron<'t, T: Real>(
        &self,
        cx: &mut Ctx<'t, '_, T>,
        map: &Rc<PointVoxelMap>,
        features: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        self.check_map(map)?;
        let shape = features.shape();
        if shape.len() != 3 || shape[1] != self.config.c_in {
            return Err(Error::contract(
                "initializing_neuron",
                format!("expected [B, {}, N] features, got {shape:?}", self.config.c_in),
            ));
        }
        let mut grid = voxelize_var(map, features)?;
        for layer in &self.init_voxel {
            grid = layer.forward(cx, grid)?;
        }
        let v1 = devoxelize_var(map, grid)?;
        let p1 = self.init_point.forward(cx, features)?;
        Ok((v1, p1))
    }

    /// `(V2, P2)` from the fused features `V1 + P1`. A branch the variant
    /// does not sum is not built and yields `None`.
    pub fn transmission_neuron<'t, T: Real>(
        &self,
        cx: &mut Ctx<'t, '_, T>,
        map: &Rc<PointVoxelMap>,
        v1: Var<'t, T>,
        p1: Var<'t, T>,
    ) -> Result<(Option<Var<'t, T>>, Option<Var<'t, T>>)> {
        self.check_map(map)?;
        if self.trans_voxel.is_empty() && self.trans_point.is_none() {
            return Ok((None, None));
        }
        let fused = add(v1, p1)?;
        let v2 = if self.trans_voxel.is_empty() {
            None
        } else {
            let mut grid = voxelize_var(map, fused)?;
            if let Some(conv) = &self.trans_1x1 {
                grid = conv.forward(cx, grid)?;
            }
            for layer in &self.trans_voxel {
                grid = layer.forward(cx, grid)?;
            }
            Some(devoxelize_var(map, grid)?)
        };
        let p2 = match &self.trans_point {
            Some(mlp) => Some(mlp.forward(cx, fused)?),
            None => None,
        };
        Ok((v2, p2))
    }

    pub fn neurons<'t, T: Real>(
        &self,
        cx: &mut Ctx<'t, '_, T>,
        map: &Rc<PointVoxelMap>,
        features: Var<'t, T>,
    ) -> Result<NeuronOutput<'t, T>> {
        let (v1, p1) = self.initializing_neuron(cx, map, features)?;
        let (v2, p2) = self.transmission_neuron(cx, map, v1, p1)?;
        Ok(NeuronOutput { v1, p1, v2, p2 })
    }

    /// Block output from a precomputed map.
    pub fn forward_mapped<'t, T: Real>(
        &self,
        cx: &mut Ctx<'t, '_, T>,
        map: &Rc<PointVoxelMap>,
        features: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let out = self.neurons(cx, map, features)?;
        aggregate_features(&out, self.config.variant)
    }
}

/// Full block pass: positions are normalized and gridded once and shared by
/// both neurons. Positions themselves pass through unchanged.
pub fn mvpconv_forward<'t, T: Real>(
    cx: &mut Ctx<'t, '_, T>,
    block: &MVPConvBlock,
    positions: &Tensor<T>,
    features: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let map = block_map(positions, block.config.resolution)?;
    block.forward_mapped(cx, &map, features)
}

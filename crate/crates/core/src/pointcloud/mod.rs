//! Point-cloud container, coordinate normalization and grid scaling.

mod io;
mod synthetic;

pub use io::{read_cloud, write_cloud, Encoding};
pub use synthetic::{generate_synthetic, ShapeKind};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Guard on the farthest-point radius; a cloud whose points all coincide
/// maps every point to the sphere center.
pub const DEGENERATE_RADIUS: f64 = 1e-12;

/// Batched points: positions `[B × N × 3]`, features `[B × C × N]` and
/// optional per-point labels stored row-major as `[B × N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    positions: Tensor<T>,
    features: Tensor<T>,
    labels: Option<Vec<usize>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(positions: Tensor<T>, features: Tensor<T>, labels: Option<Vec<usize>>) -> Result<Self> {
        positions.expect_rank("PointCloud::new", 3)?;
        features.expect_rank("PointCloud::new", 3)?;
        let (b, n) = (positions.shape()[0], positions.shape()[1]);
        if positions.shape()[2] != 3 {
            return Err(Error::contract("PointCloud::new", "positions must be [B x N x 3]"));
        }
        if features.shape()[0] != b || features.shape()[2] != n {
            return Err(Error::ShapeMismatch {
                op: "PointCloud::new",
                left: positions.shape().to_vec(),
                right: features.shape().to_vec(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != b * n {
                return Err(Error::contract(
                    "PointCloud::new",
                    format!("{} labels for {} points", l.len(), b * n),
                ));
            }
        }
        Ok(PointCloud {
            positions,
            features,
            labels,
        })
    }

    pub fn batch(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn points(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn positions(&self) -> &Tensor<T> {
        &self.positions
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn with_positions(mut self, positions: Tensor<T>) -> Result<Self> {
        positions.expect_shape("PointCloud::with_positions", self.positions.shape())?;
        self.positions = positions;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            positions: self.positions.cast(),
            features: self.features.cast(),
            labels: self.labels.clone(),
        }
    }

    /// Concatenates clouds with equal point and channel counts along the batch axis.
    pub fn stack(clouds: &[&PointCloud<T>]) -> Result<Self> {
        let first = clouds
            .first()
            .ok_or_else(|| Error::contract("PointCloud::stack", "empty batch"))?;
        let (n, c) = (first.points(), first.channels());
        let has_labels = first.labels.is_some();
        let mut pos = Vec::new();
        let mut feat = Vec::new();
        let mut labels = Vec::new();
        let mut batch = 0;
        for cloud in clouds {
            if cloud.points() != n || cloud.channels() != c || cloud.labels.is_some() != has_labels {
                return Err(Error::ShapeMismatch {
                    op: "PointCloud::stack",
                    left: first.features.shape().to_vec(),
                    right: cloud.features.shape().to_vec(),
                });
            }
            pos.extend_from_slice(cloud.positions.data());
            feat.extend_from_slice(cloud.features.data());
            if let Some(l) = &cloud.labels {
                labels.extend_from_slice(l);
            }
            batch += cloud.batch();
        }
        PointCloud::new(
            Tensor::new([batch, n, 3], pos)?,
            Tensor::new([batch, c, n], feat)?,
            has_labels.then_some(labels),
        )
    }

    /// Single batch item `b` as a cloud with batch size one.
    pub fn item(&self, b: usize) -> PointCloud<T> {
        let (n, c) = (self.points(), self.channels());
        let pos = self.positions.data()[b * n * 3..(b + 1) * n * 3].to_vec();
        let feat = self.features.data()[b * c * n..(b + 1) * c * n].to_vec();
        PointCloud {
            positions: Tensor::new([1, n, 3], pos).unwrap(),
            features: Tensor::new([1, c, n], feat).unwrap(),
            labels: self.labels.as_ref().map(|l| l[b * n..(b + 1) * n].to_vec()),
        }
    }

    /// Reorders points so that new point `i` is old point `perm[i]`, in every batch item.
    pub fn permute_points(&self, perm: &[usize]) -> Result<Self> {
        let (b, n, c) = (self.batch(), self.points(), self.channels());
        if perm.len() != n {
            return Err(Error::contract("permute_points", "permutation length != N"));
        }
        let p = self.positions.data();
        let f = self.features.data();
        let mut pos = Vec::with_capacity(p.len());
        let mut feat = vec![T::zero(); f.len()];
        for bi in 0..b {
            for &src in perm {
                pos.extend_from_slice(&p[(bi * n + src) * 3..(bi * n + src) * 3 + 3]);
            }
            for ch in 0..c {
                let row = (bi * c + ch) * n;
                for (dst, &src) in perm.iter().enumerate() {
                    feat[row + dst] = f[row + src];
                }
            }
        }
        let labels = self.labels.as_ref().map(|l| {
            (0..b)
                .flat_map(|bi| perm.iter().map(move |&src| l[bi * n + src]))
                .collect()
        });
        PointCloud::new(Tensor::new([b, n, 3], pos)?, Tensor::new([b, c, n], feat)?, labels)
    }
}

/// Positions mapped into the ball of radius 0.5 around (0.5, 0.5, 0.5), `[B × N × 3]`.
///
/// Coordinates are kept in f64 regardless of the model dtype. They are
/// constants for differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCoords(Tensor<f64>);

impl NormalizedCoords {
    pub fn tensor(&self) -> &Tensor<f64> {
        &self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn points(&self) -> usize {
        self.0.shape()[1]
    }
}

/// Centers every batch item on its mean point and divides by twice the
/// farthest-point distance, then shifts by 0.5.
pub fn normalize_points<T: Real>(positions: &Tensor<T>) -> Result<NormalizedCoords> {
    positions.expect_rank("normalize_points", 3)?;
    if positions.shape()[2] != 3 {
        return Err(Error::contract("normalize_points", "positions must be [B x N x 3]"));
    }
    let (b, n) = (positions.shape()[0], positions.shape()[1]);
    let mut out = Vec::with_capacity(b * n * 3);
    for item in positions.data().chunks_exact(n * 3) {
        let mut mean = [0.0f64; 3];
        for p in item.chunks_exact(3) {
            for a in 0..3 {
                mean[a] += p[a].as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let radius = item
            .chunks_exact(3)
            .map(|p| {
                (0..3)
                    .map(|a| (p[a].as_f64() - mean[a]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        let denom = 2.0 * radius.max(DEGENERATE_RADIUS);
        for p in item.chunks_exact(3) {
            for a in 0..3 {
                let v = (p[a].as_f64() - mean[a]) / denom + 0.5;
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(NormalizedCoords(Tensor::new([b, n, 3], out)?))
}

/// Stretches normalized coordinates onto `[0, r − 1]`.
pub fn scale_to_grid(coords: &NormalizedCoords, resolution: usize) -> Result<Tensor<f64>> {
    if resolution < 2 {
        return Err(Error::contract(
            "scale_to_grid",
            format!("resolution {resolution} < 2"),
        ));
    }
    let top = (resolution - 1) as f64;
    Ok(coords.0.map(|v| (v * top).clamp(0.0, top)))
}

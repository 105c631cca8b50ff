//! Labeled toy shapes for desk-scale part segmentation.
//!
//! Every cloud is sampled in a canonical upright frame, then given a random
//! pose: a rotation about the vertical axis, a uniform scale and a
//! translation. Parts are told apart by their height in the canonical frame,
//! which the vertical-axis rotation preserves.
//!
//! Point features are the positions centered on the cloud mean and divided by
//! the farthest-point radius (three channels).

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pointcloud::{normalize_points, PointCloud};
use crate::tensor::Tensor;

pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// Two spheres joined by a cylinder: upper sphere, lower sphere, bar.
    Barbell,
    /// Vertical stem under a horizontal bar.
    Tee,
    /// Four Gaussian clusters stacked at distinct heights.
    Quad,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Barbell, ShapeKind::Tee, ShapeKind::Quad];

    pub fn num_classes(self) -> usize {
        match self {
            ShapeKind::Barbell => 3,
            ShapeKind::Tee => 2,
            ShapeKind::Quad => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Barbell => "barbell",
            ShapeKind::Tee => "tee",
            ShapeKind::Quad => "quad",
        }
    }

    fn sample(self, part: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match self {
            ShapeKind::Barbell => match part {
                0 => sphere_surface(rng, [0.0, 0.0, 1.2], 0.55),
                1 => sphere_surface(rng, [0.0, 0.0, -1.2], 0.4),
                _ => {
                    let theta = rng.random_range(0.0..TAU);
                    let z = rng.random_range(-0.75..0.7);
                    [0.15 * theta.cos(), 0.15 * theta.sin(), z]
                }
            },
            ShapeKind::Tee => match part {
                0 => box_volume(rng, [-0.2, -0.2, -1.2], [0.2, 0.2, 0.5]),
                _ => box_volume(rng, [-1.1, -0.25, 0.6], [1.1, 0.25, 1.0]),
            },
            ShapeKind::Quad => {
                const CENTERS: [[f64; 3]; 4] = [
                    [0.7, 0.0, -1.5],
                    [-0.5, 0.5, -0.5],
                    [0.3, -0.6, 0.5],
                    [-0.2, 0.3, 1.5],
                ];
                const SIGMAS: [f64; 4] = [0.18, 0.22, 0.2, 0.25];
                let c = CENTERS[part];
                let s = SIGMAS[part];
                [0, 1, 2].map(|a| c[a] + s * Distribution::<f64>::sample(&StandardNormal, rng))
            }
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape family {s:?} (barbell, tee, quad)")))
    }
}

fn sphere_surface(rng: &mut ChaCha8Rng, center: [f64; 3], radius: f64) -> [f64; 3] {
    loop {
        let d: [f64; 3] = [0, 1, 2].map(|_| StandardNormal.sample(rng));
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return [0, 1, 2].map(|a| center[a] + radius * d[a] / norm);
        }
    }
}

fn box_volume(rng: &mut ChaCha8Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| rng.random_range(lo[a]..hi[a]))
}

/// Deterministic labeled clouds, each of batch size one.
pub fn generate_synthetic(
    kind: ShapeKind,
    n_points: usize,
    n_clouds: usize,
    seed: u64,
) -> Result<Vec<PointCloud<f64>>> {
    if n_points < MIN_POINTS {
        return Err(Error::Config(format!(
            "n_points {n_points} below minimum {MIN_POINTS}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = kind.num_classes();
    (0..n_clouds)
        .map(|_| {
            // Equal part sizes; the remainder goes to the lowest part ids.
            let mut labels: Vec<usize> = (0..n_points).map(|i| i % parts).collect();
            labels.shuffle(&mut rng);

            let yaw = rng.random_range(0.0..TAU);
            let scale = (rng.random_range(-PI.ln()..PI.ln()) / 2.0).exp();
            let shift: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-2.0..2.0));
            let (sin, cos) = yaw.sin_cos();

            let mut pos = Vec::with_capacity(n_points * 3);
            for &part in &labels {
                let [x, y, z] = kind.sample(part, &mut rng);
                pos.push(scale * (cos * x - sin * y) + shift[0]);
                pos.push(scale * (sin * x + cos * y) + shift[1]);
                pos.push(scale * z + shift[2]);
            }
            let positions = Tensor::new([1, n_points, 3], pos)?;
            let features = unit_sphere_features(&positions)?;
            PointCloud::new(positions, features, Some(labels))
        })
        .collect()
}

/// Positions centered and scaled into the unit ball, as `[1 × 3 × N]` features.
fn unit_sphere_features(positions: &Tensor<f64>) -> Result<Tensor<f64>> {
    let n = positions.shape()[1];
    let coords = normalize_points(positions)?;
    let c = coords.tensor().data();
    Ok(Tensor::from_fn([1, 3, n], |i| {
        let (axis, p) = (i / n, i % n);
        2.0 * (c[p * 3 + axis] - 0.5)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn same_seed_same_clouds() {
        let a = generate_synthetic(ShapeKind::Quad, 512, 1, 42).unwrap();
        let b = generate_synthetic(ShapeKind::Quad, 512, 1, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(ShapeKind::Quad, 512, 1, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn label_sets_per_family() {
        for kind in ShapeKind::ALL {
            let clouds = generate_synthetic(kind, 64, 3, 1).unwrap();
            for cloud in &clouds {
                let distinct: BTreeSet<_> = cloud.labels().unwrap().iter().copied().collect();
                assert_eq!(distinct.len(), kind.num_classes(), "{kind:?}");
                assert_eq!(cloud.channels(), 3);
                assert!(cloud.positions().all_finite());
            }
        }
    }

    #[test]
    fn quad_parts_are_balanced() {
        for cloud in generate_synthetic(ShapeKind::Quad, 509, 4, 9).unwrap() {
            let mut counts = [0usize; 4];
            for &l in cloud.labels().unwrap() {
                counts[l] += 1;
            }
            for c in counts {
                let share = c as f64 / 509.0;
                assert!((share - 0.25).abs() <= 0.10, "{counts:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(matches!("cube".parse::<ShapeKind>(), Err(Error::Config(_))));
        assert!(generate_synthetic(ShapeKind::Tee, 7, 1, 0).is_err());
    }
}

//! Point ↔ voxel transport: scatter-mean voxelization and trilinear
//! devoxelization, plus their exact adjoints.
//!
//! Grid coordinates are `[B × N × 3]` reals in `[0, r − 1]`. A point belongs
//! to the voxel given by its floored coordinates; points on the upper
//! boundary plane land in voxel `r − 1`. Grids are dense `[B × C × r × r × r]`
//! with voxel `(u, v, w)` at flat offset `(u·r + v)·r + w`.

use std::rc::Rc;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Dense batched voxel features `[B × C × r × r × r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    features: Tensor<T>,
    resolution: usize,
}

impl<T: Real> VoxelGrid<T> {
    pub fn new(features: Tensor<T>, resolution: usize) -> Result<Self> {
        let s = features.shape();
        if resolution < 2 || s.len() != 5 || s[2..] != [resolution; 3] {
            return Err(Error::contract(
                "VoxelGrid::new",
                format!("shape {s:?} is not [B x C x {resolution}^3]"),
            ));
        }
        Ok(VoxelGrid {
            features,
            resolution,
        })
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn into_features(self) -> Tensor<T> {
        self.features
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn at(&self, b: usize, c: usize, [u, v, w]: [usize; 3]) -> T {
        let r = self.resolution;
        let channels = self.features.shape()[1];
        self.features.data()[((b * channels + c) * r * r * r) + (u * r + v) * r + w]
    }
}

/// The eight trilinear corners of one query point.
///
/// Corner `k` takes the upper index on axis `a` when bit `2 − a` of `k` is
/// set. Upper indices are clamped to `r − 1`; a clamped corner always has
/// zero weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrilinearStencil {
    pub corners: [[usize; 3]; 8],
    pub weights: [f64; 8],
}

impl TrilinearStencil {
    fn flat(&self, r: usize) -> [usize; 8] {
        self.corners.map(|[u, v, w]| (u * r + v) * r + w)
    }
}

fn check_coord(op: &'static str, c: &[f64], r: usize) -> Result<()> {
    let top = (r - 1) as f64;
    if c.iter().all(|&v| (0.0..=top).contains(&v)) {
        Ok(())
    } else {
        Err(Error::contract(op, format!("grid coordinate {c:?} outside [0, {top}]")))
    }
}

pub fn trilinear_stencil(coord: [f64; 3], resolution: usize) -> Result<TrilinearStencil> {
    if resolution < 2 {
        return Err(Error::contract("trilinear_stencil", "resolution < 2"));
    }
    check_coord("trilinear_stencil", &coord, resolution)?;
    Ok(stencil_unchecked(coord, resolution))
}

fn stencil_unchecked(coord: [f64; 3], r: usize) -> TrilinearStencil {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let l = (coord[a].floor() as usize).min(r - 1);
        lo[a] = l;
        hi[a] = (l + 1).min(r - 1);
        frac[a] = coord[a] - l as f64;
    }
    let mut corners = [[0usize; 3]; 8];
    let mut weights = [0.0f64; 8];
    for k in 0..8 {
        let mut w = 1.0;
        for a in 0..3 {
            let upper = (k >> (2 - a)) & 1 == 1;
            corners[k][a] = if upper { hi[a] } else { lo[a] };
            w *= if upper { frac[a] } else { 1.0 - frac[a] };
        }
        weights[k] = w;
    }
    TrilinearStencil { corners, weights }
}

fn voxel_index(c: &[f64], r: usize) -> usize {
    let f = |v: f64| (v.floor() as usize).min(r - 1);
    (f(c[0]) * r + f(c[1])) * r + f(c[2])
}

/// Point-to-voxel assignment and interpolation stencils for one set of grid
/// coordinates, shared by every voxelize/devoxelize at that resolution.
#[derive(Debug, Clone)]
pub struct PointVoxelMap {
    batch: usize,
    points: usize,
    resolution: usize,
    /// Flat voxel of each point, `[B × N]`.
    voxel_of: Vec<usize>,
    /// Points per voxel, `[B × r³]`.
    counts: Vec<u32>,
    /// Flat corner offsets and weights per point, `[B × N]`.
    stencils: Vec<([usize; 8], [f64; 8])>,
}

impl PointVoxelMap {
    pub fn new(grid_coords: &Tensor<f64>, resolution: usize) -> Result<Self> {
        grid_coords.expect_rank("PointVoxelMap::new", 3)?;
        let s = grid_coords.shape();
        if s[2] != 3 {
            return Err(Error::contract("PointVoxelMap::new", "coordinates must be [B x N x 3]"));
        }
        if resolution < 2 {
            return Err(Error::contract("PointVoxelMap::new", "resolution < 2"));
        }
        let (batch, points) = (s[0], s[1]);
        let r = resolution;
        let cells = r * r * r;
        let mut voxel_of = Vec::with_capacity(batch * points);
        let mut counts = vec![0u32; batch * cells];
        let mut stencils = Vec::with_capacity(batch * points);
        for (i, c) in grid_coords.data().chunks_exact(3).enumerate() {
            check_coord("voxelize", c, r)?;
            let v = voxel_index(c, r);
            voxel_of.push(v);
            counts[(i / points) * cells + v] += 1;
            let st = stencil_unchecked([c[0], c[1], c[2]], r);
            stencils.push((st.flat(r), st.weights));
        }
        Ok(PointVoxelMap {
            batch,
            points,
            resolution,
            voxel_of,
            counts,
            stencils,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn points(&self) -> usize {
        self.points
    }

    fn cells(&self) -> usize {
        self.resolution.pow(3)
    }

    fn grid_shape(&self, channels: usize) -> [usize; 5] {
        let r = self.resolution;
        [self.batch, channels, r, r, r]
    }

    fn point_channels<T: Real>(&self, op: &'static str, x: &Tensor<T>) -> Result<usize> {
        x.expect_rank(op, 3)?;
        let s = x.shape();
        if s[0] != self.batch || s[2] != self.points {
            return Err(Error::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![self.batch, s[1], self.points],
            });
        }
        Ok(s[1])
    }

    fn grid_channels<T: Real>(&self, op: &'static str, g: &Tensor<T>) -> Result<usize> {
        let s = g.shape();
        let r = self.resolution;
        if s.len() != 5 || s[0] != self.batch || s[2..] != [r, r, r] {
            return Err(Error::contract(
                op,
                format!("grid {s:?} does not match batch {} at resolution {r}", self.batch),
            ));
        }
        Ok(s[1])
    }

    /// Scatter-mean of `[B × C × N]` point features into `[B × C × r³]` voxels.
    pub fn voxelize<T: Real>(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.point_channels("voxelize", features)?;
        let (n, cells) = (self.points, self.cells());
        let mut out = Vec::with_capacity(self.batch * c * cells);
        let mut acc = vec![0.0f64; cells];
        for (row, f) in features.data().chunks_exact(n).enumerate() {
            let b = row / c;
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (&v, &x) in self.voxel_of[b * n..(b + 1) * n].iter().zip(f) {
                acc[v] += x.as_f64();
            }
            let counts = &self.counts[b * cells..(b + 1) * cells];
            out.extend(acc.iter().zip(counts).map(|(&s, &k)| {
                if k == 0 {
                    T::zero()
                } else {
                    T::of_f64(s / k as f64)
                }
            }));
        }
        Tensor::new(self.grid_shape(c).to_vec(), out)
    }

    /// Transpose of [`voxelize`](Self::voxelize): every point receives its
    /// voxel's value divided by that voxel's point count.
    pub fn voxelize_adjoint<T: Real>(&self, grid_grad: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.grid_channels("voxelize_adjoint", grid_grad)?;
        let (n, cells) = (self.points, self.cells());
        let mut out = Vec::with_capacity(self.batch * c * n);
        for (row, g) in grid_grad.data().chunks_exact(cells).enumerate() {
            let b = row / c;
            let counts = &self.counts[b * cells..(b + 1) * cells];
            out.extend(
                self.voxel_of[b * n..(b + 1) * n]
                    .iter()
                    .map(|&v| T::of_f64(g[v].as_f64() / counts[v] as f64)),
            );
        }
        Tensor::new([self.batch, c, n], out)
    }

    /// Trilinear interpolation of `[B × C × r³]` voxels at every point.
    pub fn devoxelize<T: Real>(&self, grid: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.grid_channels("devoxelize", grid)?;
        let (n, cells) = (self.points, self.cells());
        let mut out = Vec::with_capacity(self.batch * c * n);
        for (row, g) in grid.data().chunks_exact(cells).enumerate() {
            let b = row / c;
            out.extend(self.stencils[b * n..(b + 1) * n].iter().map(|(idx, w)| {
                let mut s = 0.0f64;
                for k in 0..8 {
                    s += w[k] * g[idx[k]].as_f64();
                }
                T::of_f64(s)
            }));
        }
        Tensor::new([self.batch, c, n], out)
    }

    /// Transpose of [`devoxelize`](Self::devoxelize): each point's value is
    /// spread onto its eight corners with the interpolation weights.
    pub fn devoxelize_adjoint<T: Real>(&self, point_grad: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.point_channels("devoxelize_adjoint", point_grad)?;
        let (n, cells) = (self.points, self.cells());
        let mut out = Vec::with_capacity(self.batch * c * cells);
        let mut acc = vec![0.0f64; cells];
        for (row, y) in point_grad.data().chunks_exact(n).enumerate() {
            let b = row / c;
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ((idx, w), &yi) in self.stencils[b * n..(b + 1) * n].iter().zip(y) {
                let yi = yi.as_f64();
                for k in 0..8 {
                    acc[idx[k]] += w[k] * yi;
                }
            }
            out.extend(acc.iter().map(|&v| T::of_f64(v)));
        }
        Tensor::new(self.grid_shape(c).to_vec(), out)
    }
}

/// Scatter-mean voxelization (free-function form).
pub fn voxelize<T: Real>(grid_coords: &Tensor<f64>, features: &Tensor<T>, resolution: usize) -> Result<VoxelGrid<T>> {
    let map = PointVoxelMap::new(grid_coords, resolution)?;
    VoxelGrid::new(map.voxelize(features)?, resolution)
}

/// Trilinear devoxelization (free-function form).
pub fn devoxelize<T: Real>(grid: &VoxelGrid<T>, grid_coords: &Tensor<f64>) -> Result<Tensor<T>> {
    let map = PointVoxelMap::new(grid_coords, grid.resolution())?;
    map.devoxelize(grid.features())
}

/// Taped voxelization; no gradient flows to the coordinates.
pub fn voxelize_var<'t, T: Real>(map: &Rc<PointVoxelMap>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let out = map.voxelize(&x.value())?;
    let map = Rc::clone(map);
    Ok(x.tape().record(
        "voxelize",
        &[x],
        out,
        Box::new(move |bw| vec![Some(map.voxelize_adjoint(bw.grad).unwrap())]),
    ))
}

/// Taped devoxelization; no gradient flows to the coordinates.
pub fn devoxelize_var<'t, T: Real>(map: &Rc<PointVoxelMap>, grid: Var<'t, T>) -> Result<Var<'t, T>> {
    let out = map.devoxelize(&grid.value())?;
    let map = Rc::clone(map);
    Ok(grid.tape().record(
        "devoxelize",
        &[grid],
        out,
        Box::new(move |bw| vec![Some(map.devoxelize_adjoint(bw.grad).unwrap())]),
    ))
}

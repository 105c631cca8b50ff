//! Point-voxel convolution on CPU.
//!
//! The crate is built bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a dynamic reverse-mode tape.
//! - [`pointcloud`]: clouds, coordinate normalization, file IO, toy datasets.
//! - [`voxel`]: scatter-mean voxelization and trilinear devoxelization.
//! - [`nn`]: convolution, shared MLP, batch norm, losses, Adam, checkpoints.
//! - [`mvpconv`]: the two-neuron point-voxel block.
//! - [`model`], [`train`], [`metrics`]: a segmentation network around the block.
//! - [`gradcheck`]: finite-difference verification of every layer.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod mvpconv;
pub mod nn;
pub mod pointcloud;
pub mod tensor;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};

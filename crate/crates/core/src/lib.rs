//! Differentiable 2D Gaussian surfel splatting with unbiased surface depth.
//!
//! The crate covers the whole reconstruction loop on the CPU:
//!
//! * [`surfel`], [`camera`], [`sh`]: scene primitives and view-dependent color.
//! * [`render`]: tile-based rasterizer with exact ray-splat intersection and
//!   both surface-depth criteria (median transmittance and cumulative opacity).
//! * [`loss`] and [`grad`]: training objectives and their analytic backward
//!   pass, including the asymmetric depth-convergence gradient.
//! * [`train`]: Adam optimization with densification, pruning and scale clamping.
//! * [`synth`]: glossy synthetic scenes with exact ground truth.
//! * [`mesh`]: TSDF fusion, marching cubes and Chamfer evaluation.
//! * [`io`]: PLY, PFM, PNG, camera files and key-value configs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grad;
pub mod io;
pub mod loss;
pub mod mesh;
pub mod render;
pub mod sh;
pub mod surfel;
pub mod synth;
pub mod train;

pub use camera::Camera;
pub use error::{Error, Result};
pub use render::{render_view, Criterion, RenderBuffers, RenderConfig};
pub use surfel::{Scene, Surfel};

/// 3-vector used for all world and camera-space geometry.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix (rotations, frames).
pub type Mat3 = nalgebra::Matrix3<f64>;

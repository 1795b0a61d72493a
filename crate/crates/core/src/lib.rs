//! Spectral serialization of 3D point clouds for order-sensitive sequence models.
//!
//! The crate turns an unordered point cloud into token sequences whose order is
//! derived from the low-frequency spectrum of a patch-connectivity graph:
//!
//! - [`geometry`]: patchification by farthest point sampling and kNN.
//! - [`spectral`]: Gaussian-kernel patch graph, random walk Laplacian,
//!   eigensolve and spectrum canonicalization.
//! - [`traversal`]: per-eigenvector forward/reverse orders, hierarchical
//!   binary-code orders, and non-spectral baselines.
//! - [`mae`]: masking plans, position-preserving token removal/restoration,
//!   Chamfer reconstruction loss.
//! - [`ssm`]: bilinear-discretized state space scans and their gradients.
//! - [`pipeline`]: a small selective-SSM encoder trained with analytic gradients.
//! - [`experiments`]: invariance suite and preprocessing scaling benchmark.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod mae;
pub mod pipeline;
pub mod spectral;
pub mod ssm;
pub mod traversal;

pub use error::{Error, Result};

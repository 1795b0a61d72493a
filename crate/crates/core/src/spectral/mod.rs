//! Patch-connectivity graph, random walk Laplacian, eigensolve, canonicalization.

mod embedding;
mod graph;
mod laplacian;

pub use embedding::{
    anchor_value, canonicalize, eigensolve, eigensolve_with, EigenOptions, EigenSolver,
    SolveStats, SpectralEmbedding, ANCHOR_THRESHOLD, DEFAULT_EPSILON, DENSE_LIMIT,
};
pub use graph::{build_graph, AdjacencyGraph, GraphParams, SigmaMode};
pub use laplacian::{random_walk_laplacian, LaplacianOperator};

use crate::error::Result;
use crate::geometry::Point3;

/// Graph -> Laplacian -> eigensolve -> canonicalize, for `s` eigenvectors.
pub fn compute_embedding(
    centers: &[Point3],
    params: &GraphParams,
    s: usize,
    epsilon: f64,
    opts: &EigenOptions,
) -> Result<SpectralEmbedding> {
    let graph = build_graph(centers, params)?;
    let lap = random_walk_laplacian(&graph)?;
    let (raw, _) = eigensolve_with(&lap, s, opts)?;
    canonicalize(&raw, epsilon)
}

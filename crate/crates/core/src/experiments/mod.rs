//! Cloud-level order extraction, the rigid-transform invariance suite and the
//! preprocessing scaling benchmark.

mod bench;
mod invariance;

pub use bench::{loglog_slope, scaling_bench, BenchConfig, BenchRow, BENCH_CSV_HEADER};
pub use invariance::{invariance_suite, InvarianceConfig, InvarianceRow, INVARIANCE_CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{fps, Point3, PointCloud};
use crate::pipeline::OrderingMode;
use crate::spectral::{
    build_graph, canonicalize, eigensolve_with, random_walk_laplacian, EigenOptions, GraphParams,
    SpectralEmbedding, DEFAULT_EPSILON,
};
use crate::traversal::{
    axis_order, hlt_codes, hlt_orders, random_order, sast_orders, Axis, HltCode, ThresholdMode,
    TraversalOrder, WithinSegment,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub n_centers: usize,
    pub s: usize,
    pub k_neighbors: usize,
    pub hlt_threshold: ThresholdMode,
    /// Sort axis in axis mode.
    pub axis: Axis,
    /// Seed of the random baseline.
    pub seed: u64,
}

impl Default for OrderParams {
    fn default() -> Self {
        Self {
            n_centers: 128,
            s: 4,
            k_neighbors: 20,
            hlt_threshold: ThresholdMode::SubgroupMean,
            axis: Axis::X,
            seed: 0,
        }
    }
}

/// Patch centers of one cloud and the traversal orders over them.
#[derive(Clone, Debug)]
pub struct CloudOrders {
    /// Cloud index of each patch center (FPS from index 0).
    pub center_indices: Vec<usize>,
    pub centers: Vec<Point3>,
    /// Canonicalized, with `s + 1` pairs so the gap after the last used
    /// eigenvalue is visible (only `s` on graphs too small for the extra one).
    pub embedding: SpectralEmbedding,
    pub codes: Option<HltCode>,
    pub orders: Vec<TraversalOrder>,
}

impl CloudOrders {
    /// Smallest spacing among the stored eigenvalues.
    pub fn min_eigengap(&self) -> f64 {
        self.embedding.min_gap()
    }
}

/// FPS centers, spectral embedding and the orders of `mode`: `2s` for SAST,
/// increasing/decreasing codes for HLT (within-segment ties by the first
/// eigenvector), one forward sort for axis, `2s` seeded permutations for random.
pub fn cloud_orders(cloud: &PointCloud, mode: OrderingMode, params: &OrderParams) -> Result<CloudOrders> {
    if params.s == 0 {
        return Err(invalid("s must be at least 1"));
    }
    let center_indices = fps(cloud, params.n_centers, 0)?;
    let centers = cloud.gather(&center_indices);
    let graph = build_graph(&centers, &GraphParams::with_k(params.k_neighbors))?;
    let lap = random_walk_laplacian(&graph)?;
    // one extra pair exposes the gap after the last used eigenvalue, when the graph has room
    let extra = usize::from(params.s + 1 + lap.n_components() < centers.len());
    let (raw, _) = eigensolve_with(&lap, params.s + extra, &EigenOptions::default())?;
    let embedding = canonicalize(&raw, DEFAULT_EPSILON)?;
    let used = embedding.truncated(params.s);
    let mut codes = None;
    let orders = match mode {
        OrderingMode::Sast => sast_orders(&used, params.s)?,
        OrderingMode::Hlt => {
            let c = hlt_codes(&used, params.s, params.hlt_threshold)?;
            let (inc, dec) = hlt_orders(&c, WithinSegment::ByFirstEigvec(&used))?;
            codes = Some(c);
            vec![inc, dec]
        }
        OrderingMode::Axis => vec![axis_order(&centers, params.axis)?],
        OrderingMode::Random => (0..2 * params.s as u64)
            .map(|j| random_order(centers.len(), params.seed.wrapping_add(j)))
            .collect(),
    };
    Ok(CloudOrders {
        center_indices,
        centers,
        embedding,
        codes,
        orders,
    })
}

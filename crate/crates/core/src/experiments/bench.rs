use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{gen_shape, ShapeKind};
use crate::spectral::{
    build_graph, canonicalize, eigensolve_with, random_walk_laplacian, EigenOptions, EigenSolver,
    GraphParams, DEFAULT_EPSILON,
};
use crate::traversal::sast_orders;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Ascending token counts.
    pub tokens: Vec<usize>,
    pub repeat: usize,
    pub k_neighbors: usize,
    pub s: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            tokens: vec![128, 256, 512, 1024, 2048, 4096],
            repeat: 3,
            k_neighbors: 20,
            s: 4,
            seed: 0,
        }
    }
}

/// Column names of [`BenchRow`], in serialization order.
pub const BENCH_CSV_HEADER: [&str; 4] = ["tokens", "time_ms", "mem_bytes", "flops"];

/// One CSV row: `tokens,time_ms,mem_bytes,flops`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub tokens: usize,
    /// Median wall time of graph + eigensolve + canonicalize + SAST orders.
    pub time_ms: f64,
    /// Estimated peak working storage.
    pub mem_bytes: u64,
    /// Estimated floating-point operations.
    pub flops: u64,
}

/// Times the ordering preprocessing on torus samples used directly as patch
/// centers. The eigensolver is always Lanczos so every size runs the same code
/// path.
pub fn scaling_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.repeat == 0 {
        return Err(invalid("bench: repeat must be at least 1"));
    }
    if config.tokens.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("bench: token counts must be strictly ascending"));
    }
    let opts = EigenOptions {
        solver: EigenSolver::Lanczos,
        ..EigenOptions::default()
    };
    let params = GraphParams::with_k(config.k_neighbors);
    let mut rows = Vec::with_capacity(config.tokens.len());
    for &n in &config.tokens {
        let centers = gen_shape(ShapeKind::Torus, n, config.seed ^ n as u64, 0.01)?.into_points();
        let mut times = Vec::with_capacity(config.repeat);
        let mut estimate = (0u64, 0u64);
        for _ in 0..config.repeat {
            let start = Instant::now();
            let graph = build_graph(&centers, &params)?;
            let lap = random_walk_laplacian(&graph)?;
            let (raw, stats) = eigensolve_with(&lap, config.s, &opts)?;
            let emb = canonicalize(&raw, DEFAULT_EPSILON)?;
            let orders = sast_orders(&emb, config.s)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);

            let (n64, k64, s64) = (n as u64, config.k_neighbors as u64, config.s as u64);
            let log_n = u64::from(n.max(2).ilog2());
            let graph_bytes = graph.nnz() as u64 * 16 + n64 * 8;
            let mem = graph_bytes + stats.work_bytes as u64 + 2 * s64 * n64 * 8 + orders.len() as u64 * n64 * 8;
            // kd-tree build and queries, edge weights, solve, sorts
            let flops = 10 * n64 * log_n + 10 * n64 * k64 * log_n + 10 * graph.nnz() as u64 + stats.flops + 2 * s64 * n64 * log_n;
            estimate = (mem, flops);
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            tokens: n,
            time_ms: times[times.len() / 2],
            mem_bytes: estimate.0,
            flops: estimate.1,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("loglog_slope: need at least two paired points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(invalid("loglog_slope: values must be positive"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("loglog_slope: x values are all equal"));
    }
    Ok(sxy / sxx)
}

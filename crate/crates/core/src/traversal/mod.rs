//! Token traversal orders: per-eigenvector sorts, hierarchical binary codes,
//! and non-spectral baselines.

mod hlt;
mod order;

pub use hlt::{hlt_codes, hlt_orders, HltCode, ThresholdMode, WithinSegment};
pub use order::{
    check_bijection, order_agreement, permutation_agreement, Axis, Direction, OrderRecord,
    OrderSource, TraversalOrder,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::Point3;
use crate::spectral::SpectralEmbedding;

pub(crate) fn require_canonical(emb: &SpectralEmbedding, s: usize, op: &str) -> Result<()> {
    if s < 1 {
        return Err(invalid(format!("{op}: s must be at least 1")));
    }
    if !emb.canonicalized {
        return Err(Error::Precondition(format!(
            "{op}: embedding must be canonicalized first"
        )));
    }
    if emb.len() < s {
        return Err(Error::Precondition(format!(
            "{op}: embedding holds {} eigenvectors, {s} requested",
            emb.len()
        )));
    }
    Ok(())
}

/// Stable ascending argsort; equal values keep index order.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// `[fwd_1, rev_1, fwd_2, rev_2, ...]` for the first `s` eigenvectors.
pub fn sast_orders(emb: &SpectralEmbedding, s: usize) -> Result<Vec<TraversalOrder>> {
    require_canonical(emb, s, "sast_orders")?;
    let mut out = Vec::with_capacity(2 * s);
    for (k, v) in emb.eigenvectors[..s].iter().enumerate() {
        let fwd = TraversalOrder::new_unchecked(
            argsort(v),
            Direction::Forward,
            OrderSource::Sast { eigenvector: k + 1 },
        );
        let rev = fwd.reversed();
        out.push(fwd);
        out.push(rev);
    }
    Ok(out)
}

pub fn axis_order(centers: &[Point3], axis: Axis) -> Result<TraversalOrder> {
    if centers.is_empty() {
        return Err(invalid("axis_order: no centers"));
    }
    let vals: Vec<f64> = centers.iter().map(|p| p.coord(axis.index())).collect();
    Ok(TraversalOrder::new_unchecked(
        argsort(&vals),
        Direction::Forward,
        OrderSource::Axis(axis),
    ))
}

/// Uniformly random permutation, deterministic per seed.
pub fn random_order(n: usize, seed: u64) -> TraversalOrder {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    TraversalOrder::new_unchecked(perm, Direction::Forward, OrderSource::Random { seed })
}

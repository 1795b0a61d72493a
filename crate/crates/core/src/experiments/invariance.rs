use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cloud_orders, CloudOrders, OrderParams};
use crate::error::Result;
use crate::geometry::{apply_rigid, PointCloud, RigidTransform};
use crate::pipeline::OrderingMode;
use crate::traversal::permutation_agreement;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceConfig {
    pub transforms: usize,
    /// Translations are drawn from `[-max_translation, max_translation]^3`.
    pub max_translation: f64,
    pub seed: u64,
    pub modes: Vec<OrderingMode>,
    pub params: OrderParams,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            transforms: 200,
            max_translation: 5.0,
            seed: 0,
            modes: vec![OrderingMode::Sast, OrderingMode::Axis],
            params: OrderParams::default(),
        }
    }
}

/// Column names of [`InvarianceRow`], in serialization order.
pub const INVARIANCE_CSV_HEADER: [&str; 5] =
    ["cloud", "mode", "exact_rate", "mean_agreement", "min_eigengap"];

/// One CSV row: `cloud,mode,exact_rate,mean_agreement,min_eigengap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub cloud: String,
    pub mode: String,
    /// Fraction of transforms whose orders all equal the untransformed ones.
    pub exact_rate: f64,
    /// Mean Kendall agreement over transforms and orders.
    pub mean_agreement: f64,
    /// Smallest eigenvalue spacing seen on the original or any transformed copy.
    pub min_eigengap: f64,
}

/// Orders of `other` expressed in `base`'s patch labels, matched through the
/// cloud index of each center. `None` when the center sets differ.
fn relabel(base: &CloudOrders, other: &CloudOrders) -> Option<Vec<Vec<usize>>> {
    let max = base.center_indices.iter().copied().max().unwrap_or(0);
    let mut slot = vec![usize::MAX; max + 1];
    for (t, &c) in base.center_indices.iter().enumerate() {
        slot[c] = t;
    }
    let to_base: Option<Vec<usize>> = other
        .center_indices
        .iter()
        .map(|&c| slot.get(c).copied().filter(|&t| t != usize::MAX))
        .collect();
    let to_base = to_base?;
    Some(
        other
            .orders
            .iter()
            .map(|o| o.permutation().iter().map(|&t| to_base[t]).collect())
            .collect(),
    )
}

/// Applies `transforms` seeded random rigid motions to every cloud and
/// compares each mode's orders against the untransformed cloud. With zero
/// transforms no rows are produced.
pub fn invariance_suite(clouds: &[(String, PointCloud)], config: &InvarianceConfig) -> Result<Vec<InvarianceRow>> {
    if config.transforms == 0 {
        return Ok(Vec::new());
    }
    let per_cloud = clouds
        .par_iter()
        .enumerate()
        .map(|(ci, (name, cloud))| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (ci as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let transforms: Vec<RigidTransform> = (0..config.transforms)
                .map(|_| RigidTransform::random(&mut rng, config.max_translation))
                .collect();
            let moved: Vec<PointCloud> = transforms.iter().map(|t| apply_rigid(cloud, t)).collect();
            config
                .modes
                .iter()
                .map(|&mode| {
                    let base = cloud_orders(cloud, mode, &config.params)?;
                    let mut exact = 0usize;
                    let mut agreement = 0.0;
                    let mut gap = base.min_eigengap();
                    for m in &moved {
                        let other = cloud_orders(m, mode, &config.params)?;
                        gap = gap.min(other.min_eigengap());
                        let Some(relabeled) = relabel(&base, &other) else {
                            continue;
                        };
                        let mut all_equal = true;
                        let mut sum = 0.0;
                        for (b, o) in base.orders.iter().zip(&relabeled) {
                            all_equal &= b.permutation() == o.as_slice();
                            sum += permutation_agreement(b.permutation(), o)?;
                        }
                        exact += usize::from(all_equal);
                        agreement += sum / base.orders.len() as f64;
                    }
                    let t = config.transforms as f64;
                    Ok(InvarianceRow {
                        cloud: name.clone(),
                        mode: mode.name().to_string(),
                        exact_rate: exact as f64 / t,
                        mean_agreement: agreement / t,
                        min_eigengap: gap,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cloud.into_iter().flatten().collect())
}

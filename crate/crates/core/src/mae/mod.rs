//! Masking plans, position-preserving token removal and restoration, and the
//! Chamfer reconstruction loss.

mod chamfer;
mod tokens;

pub use chamfer::{chamfer, chamfer_with_grad, rec_loss};
pub use tokens::{
    tar_append, tar_remove, tar_restore, Recorded, TokenEntry, TokenKind, TokenSequence,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_MASK_RATIO: f64 = 0.6;

/// A masked/visible partition of token indices, `N_m = floor(ratio * n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub n_tokens: usize,
    pub ratio: f64,
    pub masked: Vec<usize>,
    #[serde(skip)]
    visible: Vec<usize>,
}

impl MaskPlan {
    /// Builds a plan from an explicit masked set.
    pub fn from_masked(n_tokens: usize, ratio: f64, mut masked: Vec<usize>) -> Result<Self> {
        masked.sort_unstable();
        if masked.windows(2).any(|w| w[0] == w[1]) || masked.last().is_some_and(|&m| m >= n_tokens) {
            return Err(invalid("mask plan: masked indices must be distinct and < n_tokens"));
        }
        let mut flags = vec![false; n_tokens];
        masked.iter().for_each(|&m| flags[m] = true);
        let visible = (0..n_tokens).filter(|&i| !flags[i]).collect();
        Ok(Self {
            n_tokens,
            ratio,
            masked,
            visible,
        })
    }

    /// Parses the JSON form and rebuilds the visible complement.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MaskPlan = serde_json::from_str(text)?;
        Self::from_masked(raw.n_tokens, raw.ratio, raw.masked)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn n_masked(&self) -> usize {
        self.masked.len()
    }

    /// Per-token flag, `true` when masked.
    pub fn mask_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_tokens];
        self.masked.iter().for_each(|&m| flags[m] = true);
        flags
    }
}

pub fn masked_count(n_tokens: usize, ratio: f64) -> usize {
    (ratio * n_tokens as f64).floor() as usize
}

/// Uniformly random `floor(ratio * n)`-subset of `0..n`, deterministic per seed.
pub fn make_mask(n_tokens: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    if n_tokens == 0 {
        return Err(invalid("make_mask: n_tokens must be at least 1"));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(invalid(format!("make_mask: ratio must be in [0, 1), got {ratio}")));
    }
    let m = masked_count(n_tokens, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masked = rand::seq::index::sample(&mut rng, n_tokens, m).into_vec();
    MaskPlan::from_masked(n_tokens, ratio, masked)
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{require_canonical, Direction, OrderRecord, OrderSource, TraversalOrder};
use crate::error::{invalid, Result};
use crate::spectral::SpectralEmbedding;

/// Deepest supported code, so that `q` fits in a `u64`.
pub const MAX_DEPTH: usize = 63;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Level `k` thresholds `v_k` at its mean within the token's current subgroup.
    #[default]
    SubgroupMean,
    /// Level `k` thresholds `v_k` at its mean over all tokens.
    GlobalMean,
}

/// Per-token bit sequences and their big-endian integer codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HltCode {
    bits: Vec<Vec<bool>>,
    codes: Vec<u64>,
    depth: usize,
}

impl HltCode {
    /// Builds from bit rows; `codes` are derived with the first bit most significant.
    pub fn from_bits(bits: Vec<Vec<bool>>) -> Result<Self> {
        let depth = bits.first().map_or(0, Vec::len);
        if depth == 0 || depth > MAX_DEPTH {
            return Err(invalid(format!("HLT depth must be in 1..={MAX_DEPTH}")));
        }
        if bits.iter().any(|b| b.len() != depth) {
            return Err(invalid("HLT bit rows have unequal lengths"));
        }
        let codes = bits.iter().map(|b| bin_to_int(b)).collect();
        Ok(Self { bits, codes, depth })
    }

    pub fn bits(&self) -> &[Vec<bool>] {
        &self.bits
    }

    pub fn codes(&self) -> &[u64] {
        &self.codes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Export record for `order` with the codes attached.
    pub fn record(&self, order: &TraversalOrder) -> OrderRecord {
        OrderRecord {
            codes: Some(self.codes.clone()),
            ..order.to_record()
        }
    }
}

fn bin_to_int(bits: &[bool]) -> u64 {
    bits.iter().fold(0, |q, &b| (q << 1) | b as u64)
}

/// Recursive mean-threshold partition over the first `s` eigenvectors.
///
/// Means are summed in ascending token order. A subgroup with a single
/// member is not split: its token gets bit 0 at that level.
pub fn hlt_codes(emb: &SpectralEmbedding, s: usize, mode: ThresholdMode) -> Result<HltCode> {
    require_canonical(emb, s, "hlt_codes")?;
    if s > MAX_DEPTH {
        return Err(invalid(format!("hlt_codes: s = {s} exceeds {MAX_DEPTH}")));
    }
    let n = emb.n_nodes();
    let mut bits = vec![Vec::with_capacity(s); n];
    let mut prefix = vec![0u64; n];
    for v in &emb.eigenvectors[..s] {
        match mode {
            ThresholdMode::GlobalMean => {
                let mean = v.iter().sum::<f64>() / n as f64;
                for i in 0..n {
                    bits[i].push(v[i] >= mean);
                }
            }
            ThresholdMode::SubgroupMean => {
                let mut groups: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
                for i in 0..n {
                    let g = groups.entry(prefix[i]).or_insert((0.0, 0));
                    g.0 += v[i];
                    g.1 += 1;
                }
                for i in 0..n {
                    let (sum, count) = groups[&prefix[i]];
                    bits[i].push(count > 1 && v[i] >= sum / count as f64);
                }
            }
        }
        for i in 0..n {
            prefix[i] = (prefix[i] << 1) | *bits[i].last().unwrap() as u64;
        }
    }
    Ok(HltCode {
        bits,
        codes: prefix,
        depth: s,
    })
}

/// How tokens sharing a code are ordered among themselves.
#[derive(Clone, Copy, Debug)]
pub enum WithinSegment<'a> {
    /// Seeded shuffle; deterministic per seed.
    Random(u64),
    /// Ascending first eigenvector, index tie-break.
    ByFirstEigvec(&'a SpectralEmbedding),
}

/// `(increasing, decreasing)` lexicographic orders of the codes. The decreasing
/// order is the exact reversal of the increasing one.
pub fn hlt_orders(
    codes: &HltCode,
    within: WithinSegment<'_>,
) -> Result<(TraversalOrder, TraversalOrder)> {
    let n = codes.len();
    let rank: Vec<usize> = match within {
        WithinSegment::Random(seed) => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut rank = vec![0; n];
            for (r, &t) in perm.iter().enumerate() {
                rank[t] = r;
            }
            rank
        }
        WithinSegment::ByFirstEigvec(emb) => {
            let v1 = emb
                .eigenvectors
                .first()
                .ok_or_else(|| invalid("hlt_orders: embedding has no eigenvectors"))?;
            if v1.len() != n {
                return Err(invalid(format!(
                    "hlt_orders: embedding has {} nodes, codes have {n}",
                    v1.len()
                )));
            }
            let mut rank = vec![0; n];
            for (r, t) in super::argsort(v1).into_iter().enumerate() {
                rank[t] = r;
            }
            rank
        }
    };
    let q = codes.codes();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by_key(|&t| (q[t], rank[t]));
    let inc = TraversalOrder::new_unchecked(perm, Direction::Forward, OrderSource::Hlt);
    let dec = inc.reversed();
    Ok((inc, dec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traversal::sast_orders;
    use proptest::prelude::*;

    fn emb(vs: Vec<Vec<f64>>) -> SpectralEmbedding {
        SpectralEmbedding {
            eigenvalues: (0..vs.len()).map(|k| 0.1 * (k + 1) as f64).collect(),
            eigenvectors: vs,
            canonicalized: true,
        }
    }

    /// Explicit recursion: split a token list at its mean, recurse on each half.
    fn recursive_oracle(vs: &[Vec<f64>], s: usize) -> Vec<u64> {
        fn rec(vs: &[Vec<f64>], level: usize, s: usize, tokens: Vec<usize>, code: u64, out: &mut [u64]) {
            if level == s {
                for t in tokens {
                    out[t] = code;
                }
                return;
            }
            let v = &vs[level];
            let (lo, hi): (Vec<usize>, Vec<usize>) = if tokens.len() < 2 {
                (tokens, Vec::new())
            } else {
                let mut sum = 0.0;
                for &t in &tokens {
                    sum += v[t];
                }
                let mean = sum / tokens.len() as f64;
                tokens.into_iter().partition(|&t| v[t] < mean)
            };
            if !lo.is_empty() {
                rec(vs, level + 1, s, lo, code << 1, out);
            }
            if !hi.is_empty() {
                rec(vs, level + 1, s, hi, (code << 1) | 1, out);
            }
        }
        let n = vs[0].len();
        let mut out = vec![0; n];
        rec(vs, 0, s, (0..n).collect(), 0, &mut out);
        out
    }

    #[test]
    fn worked_example() {
        let e = emb(vec![vec![0.1, 0.9, 0.2, 0.8], vec![0.3, 0.1, 0.9, 0.7]]);
        let c = hlt_codes(&e, 2, ThresholdMode::SubgroupMean).unwrap();
        assert_eq!(c.codes(), &[0, 2, 1, 3]);
        assert_eq!(c.bits()[1], vec![true, false]);
        let (inc, dec) = hlt_orders(&c, WithinSegment::ByFirstEigvec(&e)).unwrap();
        assert_eq!(inc.permutation(), &[0, 2, 1, 3]);
        assert_eq!(dec.permutation(), &[3, 1, 2, 0]);
        let rec = c.record(&inc);
        assert_eq!(rec.codes.as_deref(), Some(&[0u64, 2, 1, 3][..]));
        assert_eq!(rec.source, "hlt");
    }

    #[test]
    fn global_mean_differs_from_subgroup() {
        // level 2 global mean is 0.43; subgroup means are 0.6 and 0.26
        let e = emb(vec![vec![0.1, 0.9, 0.2, 0.8], vec![0.3, 0.1, 0.9, 0.42]]);
        let g = hlt_codes(&e, 2, ThresholdMode::GlobalMean).unwrap();
        assert_eq!(g.codes(), &[0, 2, 1, 2]);
        let s = hlt_codes(&e, 2, ThresholdMode::SubgroupMean).unwrap();
        assert_eq!(s.codes(), &[0, 2, 1, 3]);
    }

    #[test]
    fn depth_one_splits_at_mean() {
        let e = emb(vec![vec![-0.5, 0.1, 0.2, 0.3]]);
        let c = hlt_codes(&e, 1, ThresholdMode::SubgroupMean).unwrap();
        assert_eq!(c.codes(), &[0, 1, 1, 1]);
        assert!(hlt_codes(&e, 0, ThresholdMode::SubgroupMean).is_err());
    }

    #[test]
    fn singleton_subgroup_is_not_split() {
        // level 1 isolates token 0; it passes level 2 with bit 0
        let e = emb(vec![vec![-0.9, 0.3, 0.3, 0.3], vec![0.9, 0.1, -0.2, 0.4]]);
        let c = hlt_codes(&e, 2, ThresholdMode::SubgroupMean).unwrap();
        assert_eq!(c.codes()[0], 0);
        assert_eq!(c.codes(), &recursive_oracle(&e.eigenvectors, 2)[..]);
    }

    #[test]
    fn equal_codes_follow_first_eigenvector() {
        let e = emb(vec![vec![0.4, -0.1, 0.3, 0.0]]);
        let c = HltCode::from_bits(vec![vec![true]; 4]).unwrap();
        let (inc, _) = hlt_orders(&c, WithinSegment::ByFirstEigvec(&e)).unwrap();
        let sast = sast_orders(&e, 1).unwrap();
        assert_eq!(inc.permutation(), sast[0].permutation());
    }

    #[test]
    fn random_within_segment_is_deterministic() {
        let c = HltCode::from_bits((0..40).map(|i| vec![i % 3 == 0, i % 2 == 0]).collect()).unwrap();
        let first = hlt_orders(&c, WithinSegment::Random(11)).unwrap();
        for _ in 0..100 {
            assert_eq!(hlt_orders(&c, WithinSegment::Random(11)).unwrap(), first);
        }
        let q = c.codes();
        for w in first.0.permutation().windows(2) {
            assert!(q[w[0]] <= q[w[1]]);
        }
    }

    #[test]
    fn mismatched_embedding_rejected() {
        let e = emb(vec![vec![0.1, 0.2, 0.3]]);
        let c = HltCode::from_bits(vec![vec![false]; 4]).unwrap();
        assert!(hlt_orders(&c, WithinSegment::ByFirstEigvec(&e)).is_err());
    }

    #[test]
    fn full_resolution_on_separating_instance() {
        // v_k encodes bit k of the token index (msb first) plus a small ramp
        let s = 6;
        let n = 1 << s;
        let vs: Vec<Vec<f64>> = (0..s)
            .map(|k| {
                (0..n)
                    .map(|i| ((i >> (s - 1 - k)) & 1) as f64 + 1e-3 * i as f64)
                    .collect()
            })
            .collect();
        let c = hlt_codes(&emb(vs), s, ThresholdMode::SubgroupMean).unwrap();
        let mut q = c.codes().to_vec();
        assert_eq!(q, (0..n as u64).collect::<Vec<_>>());
        q.dedup();
        assert_eq!(q.len(), n);
    }

    proptest! {
        #[test]
        fn matches_recursive_oracle(
            n in 1usize..=256,
            s in 1usize..=6,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vs: Vec<Vec<f64>> = (0..s)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let e = emb(vs.clone());
            let c = hlt_codes(&e, s, ThresholdMode::SubgroupMean).unwrap();
            prop_assert_eq!(c.codes(), &recursive_oracle(&vs, s)[..]);
            prop_assert!(c.codes().iter().all(|&q| q < (1u64 << s)));
            for (b, &q) in c.bits().iter().zip(c.codes()) {
                prop_assert_eq!(bin_to_int(b), q);
            }
            if s > 1 {
                // one level shallower is the parent partition
                let parent = hlt_codes(&e, s - 1, ThresholdMode::SubgroupMean).unwrap();
                for (&q, &p) in c.codes().iter().zip(parent.codes()) {
                    prop_assert_eq!(q >> 1, p);
                }
            }
        }
    }
}

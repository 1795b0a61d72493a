use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(invalid(format!("unknown axis '{s}' (valid: x, y, z)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OrderSource {
    /// 1-based eigenvector index.
    Sast { eigenvector: usize },
    Hlt,
    Axis(Axis),
    Random { seed: u64 },
}

impl OrderSource {
    pub fn name(self) -> &'static str {
        match self {
            OrderSource::Sast { .. } => "sast",
            OrderSource::Hlt => "hlt",
            OrderSource::Axis(_) => "axis",
            OrderSource::Random { .. } => "random",
        }
    }
}

/// A bijection on `0..n` giving the token visited at each sequence position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraversalOrder {
    permutation: Vec<usize>,
    direction: Direction,
    source: OrderSource,
}

impl TraversalOrder {
    pub fn new(permutation: Vec<usize>, direction: Direction, source: OrderSource) -> Result<Self> {
        check_bijection(&permutation)?;
        Ok(Self {
            permutation,
            direction,
            source,
        })
    }

    pub(crate) fn new_unchecked(
        permutation: Vec<usize>,
        direction: Direction,
        source: OrderSource,
    ) -> Self {
        debug_assert!(check_bijection(&permutation).is_ok());
        Self {
            permutation,
            direction,
            source,
        }
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn source(&self) -> OrderSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// Element-wise reversal with the direction flipped.
    pub fn reversed(&self) -> Self {
        Self {
            permutation: self.permutation.iter().rev().copied().collect(),
            direction: self.direction.flipped(),
            source: self.source,
        }
    }

    /// `positions()[token]` is the sequence position of `token`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.permutation.len()];
        for (p, &t) in self.permutation.iter().enumerate() {
            pos[t] = p;
        }
        pos
    }

    pub fn to_record(&self) -> OrderRecord {
        let (eigenvector, axis, seed) = match self.source {
            OrderSource::Sast { eigenvector } => (Some(eigenvector), None, None),
            OrderSource::Axis(a) => (None, Some(a.name().to_string()), None),
            OrderSource::Random { seed } => (None, None, Some(seed)),
            OrderSource::Hlt => (None, None, None),
        };
        OrderRecord {
            source: self.source.name().to_string(),
            eigenvector,
            axis,
            seed,
            direction: self.direction.name().to_string(),
            permutation: self.permutation.clone(),
            codes: None,
        }
    }
}

/// Visited-flag check that `perm` is a bijection on `0..perm.len()`.
pub fn check_bijection(perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &t in perm {
        if t >= perm.len() || seen[t] {
            return Err(invalid(format!(
                "order is not a permutation of 0..{} (offending entry {t})",
                perm.len()
            )));
        }
        seen[t] = true;
    }
    Ok(())
}

/// JSON export record for one traversal order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eigenvector: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub axis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub direction: String,
    pub permutation: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub codes: Option<Vec<u64>>,
}

/// Normalized Kendall agreement: `1 - discordant / (n choose 2)`.
///
/// Discordant pairs are counted as inversions of `b`'s positions read in
/// `a`'s order, with a merge sort.
pub fn order_agreement(a: &TraversalOrder, b: &TraversalOrder) -> Result<f64> {
    permutation_agreement(a.permutation(), b.permutation())
}

pub fn permutation_agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "order_agreement: length mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    check_bijection(a)?;
    check_bijection(b)?;
    let n = a.len();
    if a == b {
        return Ok(1.0);
    }
    let mut pos_b = vec![0; n];
    for (p, &t) in b.iter().enumerate() {
        pos_b[t] = p;
    }
    let mut seq: Vec<usize> = a.iter().map(|&t| pos_b[t]).collect();
    let mut buf = vec![0; n];
    let inversions = count_inversions(&mut seq, &mut buf);
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(1.0 - inversions as f64 / pairs)
}

fn count_inversions(v: &mut [usize], buf: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        count_inversions(l, bl) + count_inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

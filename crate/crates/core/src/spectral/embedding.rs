use serde::{Deserialize, Serialize};

use super::LaplacianOperator;
use crate::error::{invalid, Error, Result};
use crate::linalg::{largest_eigenpairs, symmetric_eigen, LanczosOptions};

/// Elements at or below this magnitude never serve as the sign/order anchor.
pub const ANCHOR_THRESHOLD: f64 = 1e-8;
/// Default tolerance for treating consecutive eigenvalues as degenerate.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Dense route is used up to this many nodes under [`EigenSolver::Auto`].
pub const DENSE_LIMIT: usize = 4096;

/// Smallest non-constant eigenpairs of the random walk Laplacian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEmbedding {
    pub eigenvalues: Vec<f64>,
    /// Row `k` is eigenvector `k`, unit Euclidean norm, one entry per node.
    pub eigenvectors: Vec<Vec<f64>>,
    pub canonicalized: bool,
}

impl SpectralEmbedding {
    /// Validates shapes and unit norms (within 1e-9).
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: Vec<Vec<f64>>) -> Result<Self> {
        if eigenvalues.len() != eigenvectors.len() {
            return Err(invalid("embedding: eigenvalue/eigenvector count mismatch"));
        }
        if let Some(first) = eigenvectors.first() {
            let n = first.len();
            for (k, v) in eigenvectors.iter().enumerate() {
                if v.len() != n {
                    return Err(invalid(format!("embedding: eigenvector {k} has wrong length")));
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("embedding: eigenvector {k} has norm {norm}")));
                }
            }
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            canonicalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.eigenvectors.first().map_or(0, Vec::len)
    }

    /// Smallest spacing between consecutive held eigenvalues (infinite if fewer than two).
    pub fn min_gap(&self) -> f64 {
        self.eigenvalues
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// First `s` pairs.
    pub fn truncated(&self, s: usize) -> Self {
        Self {
            eigenvalues: self.eigenvalues[..s.min(self.len())].to_vec(),
            eigenvectors: self.eigenvectors[..s.min(self.len())].to_vec(),
            canonicalized: self.canonicalized,
        }
    }

    /// Per-node spectral coordinates `[v1_i, ..., vs_i]`.
    pub fn coordinates(&self, node: usize) -> Vec<f64> {
        self.eigenvectors.iter().map(|v| v[node]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSolver {
    /// Dense Householder + QL up to [`DENSE_LIMIT`] nodes, Lanczos beyond.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Debug, Default)]
pub struct EigenOptions {
    pub solver: EigenSolver,
    pub lanczos: LanczosOptions,
}

#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub solver_used: Option<EigenSolver>,
    pub matvecs: usize,
    pub restarts: usize,
    /// Rough floating-point operation count of the solve.
    pub flops: u64,
    /// Bytes of working storage beyond the graph itself.
    pub work_bytes: usize,
}

pub fn eigensolve(laplacian: &LaplacianOperator<'_>, s: usize) -> Result<SpectralEmbedding> {
    eigensolve_with(laplacian, s, &EigenOptions::default()).map(|r| r.0)
}

/// The `s` smallest non-constant eigenpairs of `L_rw`, computed on `L_sym` and
/// mapped back with `u -> D^{-1/2} u` (renormalized). One zero mode per
/// connected component is skipped.
pub fn eigensolve_with(
    laplacian: &LaplacianOperator<'_>,
    s: usize,
    opts: &EigenOptions,
) -> Result<(SpectralEmbedding, SolveStats)> {
    let n = laplacian.n();
    let c = laplacian.n_components();
    if s == 0 || s + c >= n {
        return Err(invalid(format!(
            "eigensolve: need 1 <= s < N_c - components (s = {s}, N_c = {n}, components = {c})"
        )));
    }
    let solver = match opts.solver {
        EigenSolver::Auto if n <= DENSE_LIMIT => EigenSolver::Dense,
        EigenSolver::Auto => EigenSolver::Lanczos,
        other => other,
    };
    let mut stats = SolveStats {
        solver_used: Some(solver),
        ..Default::default()
    };
    let (values, sym_vectors) = match solver {
        EigenSolver::Dense => {
            let eig = symmetric_eigen(&laplacian.to_dense_symmetric())?;
            stats.flops = 9 * (n as u64).pow(3);
            stats.work_bytes = 3 * n * n * 8;
            let vals = eig.values[c..c + s].to_vec();
            let vecs = (c..c + s).map(|k| eig.vector(k)).collect::<Vec<_>>();
            (vals, vecs)
        }
        _ => {
            let null = laplacian.symmetric_null_space();
            let res = largest_eigenpairs(
                n,
                s,
                |x, y| laplacian.apply_normalized_adjacency(x, y),
                &null,
                &opts.lanczos,
            )?;
            stats.matvecs = res.stats.matvecs;
            stats.restarts = res.stats.restarts;
            stats.flops =
                res.stats.dense_flops + (res.stats.matvecs * (4 * laplacian.graph().nnz() + n)) as u64;
            stats.work_bytes = 2 * (res.stats.basis_size + 1 + c) * n * 8;
            // largest of D^{-1/2} W D^{-1/2} are the smallest of L_sym
            let vals = res.values.iter().map(|mu| 1.0 - mu).collect();
            (vals, res.vectors)
        }
    };

    let scale = laplacian.inv_sqrt_degree();
    let eigenvectors = sym_vectors
        .into_iter()
        .map(|u| {
            let mut v: Vec<f64> = u.iter().zip(scale).map(|(ui, si)| ui * si).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect();
    Ok((
        SpectralEmbedding {
            eigenvalues: values,
            eigenvectors,
            canonicalized: false,
        },
        stats,
    ))
}

/// First element of magnitude above [`ANCHOR_THRESHOLD`].
pub fn anchor_value(v: &[f64]) -> Option<f64> {
    v.iter().copied().find(|x| x.abs() > ANCHOR_THRESHOLD)
}

/// Resolves sign and near-degenerate ordering ambiguity.
///
/// Each eigenvector is negated when its anchor element is negative. Then,
/// repeatedly until a full pass makes no change, consecutive pairs with
/// `|lambda_k - lambda_{k+1}| <= epsilon` are swapped when the anchor of the
/// first exceeds the anchor of the second.
pub fn canonicalize(embedding: &SpectralEmbedding, epsilon: f64) -> Result<SpectralEmbedding> {
    if !(epsilon >= 0.0) {
        return Err(invalid("canonicalize: epsilon must be non-negative"));
    }
    let mut values = embedding.eigenvalues.clone();
    let mut vectors = embedding.eigenvectors.clone();
    let mut anchors = Vec::with_capacity(vectors.len());
    for (k, v) in vectors.iter_mut().enumerate() {
        let a = anchor_value(v).ok_or(Error::DegenerateEigenvector { index: k })?;
        if a < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        anchors.push(a.abs());
    }
    // Every swap removes one inversion of the anchor sequence, so this terminates.
    loop {
        let mut changed = false;
        for k in 0..values.len().saturating_sub(1) {
            if (values[k] - values[k + 1]).abs() <= epsilon && anchors[k] > anchors[k + 1] {
                values.swap(k, k + 1);
                vectors.swap(k, k + 1);
                anchors.swap(k, k + 1);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(SpectralEmbedding {
        eigenvalues: values,
        eigenvectors: vectors,
        canonicalized: true,
    })
}

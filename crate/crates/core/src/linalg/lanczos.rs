//! Thick-restart Lanczos for the largest eigenpairs of a symmetric operator.
//!
//! Full reorthogonalization within a bounded basis; on restart the wanted Ritz
//! vectors are kept and the common residual direction continues the Krylov
//! sequence. Memory is O(basis * n) regardless of how many restarts it takes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::symmetric_eigen;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Maximum basis size before a restart.
    pub max_basis: usize,
    /// Absolute residual norm `||A x - theta x||` required for every wanted pair.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_basis: 48,
            tol: 1e-11,
            max_restarts: 5000,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LanczosStats {
    pub matvecs: usize,
    pub restarts: usize,
    /// Flops spent outside the operator (orthogonalization, Rayleigh-Ritz, restarts).
    pub dense_flops: u64,
    pub basis_size: usize,
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    /// Descending.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub stats: LanczosStats,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two passes of classical Gram-Schmidt against `deflate` and `basis`.
fn orthogonalize(w: &mut [f64], deflate: &[Vec<f64>], basis: &[Vec<f64>], flops: &mut u64) {
    let n = w.len() as u64;
    for _ in 0..2 {
        for q in deflate.iter().chain(basis) {
            let c = dot(q, w);
            axpy(-c, q, w);
            *flops += 4 * n;
        }
    }
}

/// Largest `nev` eigenpairs of the symmetric operator `apply` restricted to the
/// orthogonal complement of `deflate` (which must be orthonormal).
pub fn largest_eigenpairs<F>(
    n: usize,
    nev: usize,
    mut apply: F,
    deflate: &[Vec<f64>],
    opts: &LanczosOptions,
) -> Result<LanczosResult>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let dim = n.saturating_sub(deflate.len());
    if nev == 0 || nev > dim {
        return Err(invalid(format!(
            "lanczos: requested {nev} pairs from a {dim}-dimensional space"
        )));
    }
    let m = opts.max_basis.max(2 * nev + 8).min(dim);
    let keep = (nev + ((m - nev) / 2).max(4)).min(m.saturating_sub(1)).max(nev);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats = LanczosStats {
        basis_size: m,
        ..Default::default()
    };

    let mut random_unit = |basis: &[Vec<f64>], flops: &mut u64| -> Result<Vec<f64>> {
        for _ in 0..10 {
            let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            orthogonalize(&mut w, deflate, basis, flops);
            let nw = norm(&w);
            if nw > 1e-8 {
                w.iter_mut().for_each(|x| *x /= nw);
                return Ok(w);
            }
        }
        Err(invalid("lanczos: could not extend the basis"))
    };

    let mut v: Vec<Vec<f64>> = vec![random_unit(&[], &mut stats.dense_flops)?];
    let mut av: Vec<Vec<f64>> = Vec::with_capacity(m);

    loop {
        // expand the basis to m vectors, each with its image
        loop {
            if av.len() < v.len() {
                let mut out = vec![0.0; n];
                apply(v.last().expect("basis is non-empty"), &mut out);
                stats.matvecs += 1;
                av.push(out);
            }
            if v.len() == m {
                break;
            }
            let mut w = av.last().expect("images exist").clone();
            let scale = norm(&w);
            orthogonalize(&mut w, deflate, &v, &mut stats.dense_flops);
            let nw = norm(&w);
            let next = if nw > 1e-10 * scale.max(1e-300) {
                w.iter_mut().for_each(|x| *x /= nw);
                w
            } else {
                random_unit(&v, &mut stats.dense_flops)?
            };
            v.push(next);
        }

        // Rayleigh-Ritz on span(v)
        let k = v.len();
        let mut h = Array2::<f64>::zeros((k, k));
        for i in 0..k {
            for j in 0..=i {
                let x = 0.5 * (dot(&v[i], &av[j]) + dot(&v[j], &av[i]));
                h[[i, j]] = x;
                h[[j, i]] = x;
            }
        }
        stats.dense_flops += (k * k * 2 * n) as u64 + 10 * (k * k * k) as u64;
        let eig = symmetric_eigen(&h)?;
        // descending order of Ritz values
        let wanted: Vec<usize> = (0..k).rev().take(keep).collect();

        let combine = |basis: &[Vec<f64>], col: usize| -> Vec<f64> {
            let mut x = vec![0.0; n];
            for (i, b) in basis.iter().enumerate() {
                axpy(eig.vectors[[i, col]], b, &mut x);
            }
            x
        };
        let mut ritz_x = Vec::with_capacity(keep);
        let mut ritz_ax = Vec::with_capacity(keep);
        let mut worst = (0.0f64, 0usize);
        let mut converged = 0;
        for (rank, &col) in wanted.iter().enumerate() {
            let x = combine(&v, col);
            let ax = combine(&av, col);
            if rank < nev {
                let theta = eig.values[col];
                let r: f64 = x
                    .iter()
                    .zip(&ax)
                    .map(|(xi, axi)| (axi - theta * xi).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if r <= opts.tol {
                    converged += 1;
                }
                if r >= worst.0 {
                    worst = (r, rank);
                }
            }
            ritz_x.push(x);
            ritz_ax.push(ax);
        }
        stats.dense_flops += (4 * keep * k * n) as u64;

        if converged == nev || k == dim {
            let values = wanted[..nev].iter().map(|&c| eig.values[c]).collect();
            ritz_x.truncate(nev);
            return Ok(LanczosResult {
                values,
                vectors: ritz_x,
                stats,
            });
        }
        stats.restarts += 1;
        if stats.restarts > opts.max_restarts {
            return Err(Error::NumericConvergence {
                iterations: stats.restarts,
                converged,
                requested: nev,
            });
        }

        // all Ritz residuals share one direction; it continues the Krylov sequence
        let col = wanted[worst.1];
        let theta = eig.values[col];
        let mut r: Vec<f64> = ritz_ax[worst.1]
            .iter()
            .zip(&ritz_x[worst.1])
            .map(|(a, x)| a - theta * x)
            .collect();
        orthogonalize(&mut r, deflate, &ritz_x, &mut stats.dense_flops);
        let nr = norm(&r);
        let next = if nr > 1e-14 {
            r.iter_mut().for_each(|x| *x /= nr);
            r
        } else {
            random_unit(&ritz_x, &mut stats.dense_flops)?
        };
        v = ritz_x;
        av = ritz_ax;
        v.push(next);
    }
}

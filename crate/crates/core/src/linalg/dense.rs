//! Dense symmetric eigensolver: Householder tridiagonalization followed by the
//! implicit-shift QL iteration (the EISPACK `tred2`/`tql2` pair).

use ndarray::Array2;

use crate::error::{invalid, Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Array2<f64>,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).to_vec()
    }
}

const MAX_QL_SWEEPS: usize = 60;

/// Full eigendecomposition of the symmetric matrix `a` (only the lower triangle is read).
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(invalid("symmetric_eigen: matrix must be square and non-empty"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("symmetric_eigen: matrix has non-finite entries"));
    }
    // row-major working copy; v[i * n + j] = V[i][j]
    let mut v: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push(if j <= i { a[[i, j]] } else { a[[j, i]] });
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n == 1 {
        d[0] = v[0];
        v[0] = 1.0;
    } else {
        tred2(n, &mut v, &mut d, &mut e);
    }
    // tql2 rotates columns of V; work on the transpose so those become rows.
    let mut z = transpose(n, &v);
    tql2(n, &mut z, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));
    let values = order.iter().map(|&k| d[k]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            vectors[[i, col]] = z[k * n + i];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn transpose(n: usize, m: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    // accumulate transformations
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// QL with implicit shifts on the tridiagonal `(d, e)`; `z` holds eigenvectors as rows.
fn tql2(n: usize, z: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        // e[n-1] == 0 guarantees m < n
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(Error::NumericConvergence {
                        iterations: sweeps,
                        converged: l,
                        requested: n,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (head, tail) = z.split_at_mut((i + 1) * n);
                    let zi = &mut head[i * n..];
                    let zi1 = &mut tail[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let t = *b;
                        *b = s * *a + c * t;
                        *a = c * *a - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual(a: &Array2<f64>, eig: &SymmetricEigen) -> f64 {
        let n = a.nrows();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let v = eig.vectors.column(k);
            let av = a.dot(&v);
            let r = (&av - &(&v * eig.values[k])).mapv(|x| x * x).sum().sqrt();
            worst = worst.max(r);
        }
        worst
    }

    #[test]
    fn path_laplacian_spectrum() {
        // D - W for the unit path 0-1-2 has spectrum {0, 1, 3}
        let a = array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        let eig = symmetric_eigen(&a).unwrap();
        for (got, want) in eig.values.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(residual(&a, &eig) < 1e-12);
    }

    #[test]
    fn random_symmetric_residual_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 17, 64] {
            let mut a = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    let x = rng.random_range(-1.0..1.0);
                    a[[i, j]] = x;
                    a[[j, i]] = x;
                }
            }
            let eig = symmetric_eigen(&a).unwrap();
            assert!(residual(&a, &eig) < 1e-10, "n={n}");
            let vtv = eig.vectors.t().dot(&eig.vectors);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv[[i, j]] - want).abs() < 1e-10);
                }
            }
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn diagonal_and_repeated() {
        let a = array![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -1.0]];
        let eig = symmetric_eigen(&a).unwrap();
        assert_eq!(eig.values.len(), 3);
        assert!((eig.values[0] + 1.0).abs() < 1e-14);
        assert!(residual(&a, &eig) < 1e-14);
    }
}

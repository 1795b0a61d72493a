use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{invalid, Error, Result};

/// States `h_0 .. h_L`, shape `(L + 1, D, N)`.
#[derive(Clone, Debug)]
pub struct DiagScanCache {
    states: Array3<f64>,
}

impl DiagScanCache {
    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagScanGrads {
    pub x: Array2<f64>,
    pub delta: Array2<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
}

fn check_shapes(
    x: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
) -> Result<(usize, usize, usize)> {
    let (l, d) = x.dim();
    let n = a.ncols();
    if l == 0 || delta.dim() != (l, d) || a.nrows() != d || b.dim() != (l, n) || c.dim() != (l, n) {
        return Err(invalid(format!(
            "diagonal scan: shapes x {:?}, delta {:?}, A {:?}, B {:?}, C {:?} disagree",
            x.dim(),
            delta.dim(),
            a.dim(),
            b.dim(),
            c.dim()
        )));
    }
    Ok((l, d, n))
}

/// Multi-channel selective scan with diagonal state matrices.
///
/// Channel `d` has its own diagonal `A[d, :]` and step `delta[k, d]`; `B[k, :]`
/// and `C[k, :]` are shared across channels at step `k`. Per element the
/// bilinear step is `A_bar = (1 + delta a / 2) / (1 - delta a / 2)`,
/// `B_bar = delta B / (1 - delta a / 2)`, and `y[k, d] = sum_n C[k, n] h[k, d, n]`.
pub fn diag_selective_scan(
    x: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
) -> Result<(Array2<f64>, DiagScanCache)> {
    let (l, d, n) = check_shapes(x, delta, a, b, c)?;
    let mut states = Array3::<f64>::zeros((l + 1, d, n));
    let mut y = Array2::<f64>::zeros((l, d));
    for k in 0..l {
        for ch in 0..d {
            let dt = delta[[k, ch]];
            let xk = x[[k, ch]];
            let mut acc = 0.0;
            for s in 0..n {
                let u = 0.5 * dt * a[[ch, s]];
                let den = 1.0 - u;
                if den == 0.0 {
                    return Err(Error::SingularMatrix(format!(
                        "diagonal scan: 1 - delta a / 2 = 0 at step {k}, channel {ch}"
                    )));
                }
                let h = (1.0 + u) / den * states[[k, ch, s]] + dt * b[[k, s]] / den * xk;
                states[[k + 1, ch, s]] = h;
                acc += c[[k, s]] * h;
            }
            y[[k, ch]] = acc;
        }
    }
    Ok((y, DiagScanCache { states }))
}

pub fn diag_selective_scan_backward(
    x: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
    cache: &DiagScanCache,
    dy: ArrayView2<f64>,
) -> Result<DiagScanGrads> {
    let (l, d, n) = check_shapes(x, delta, a, b, c)?;
    if cache.states.dim() != (l + 1, d, n) || dy.dim() != (l, d) {
        return Err(Error::Precondition(
            "diagonal scan backward: cache or output gradient does not match this forward pass".into(),
        ));
    }
    let h = &cache.states;
    let mut g = DiagScanGrads {
        x: Array2::zeros((l, d)),
        delta: Array2::zeros((l, d)),
        a: Array2::zeros((d, n)),
        b: Array2::zeros((l, n)),
        c: Array2::zeros((l, n)),
    };
    let mut gh = Array2::<f64>::zeros((d, n));
    for k in (0..l).rev() {
        for ch in 0..d {
            let dyk = dy[[k, ch]];
            let dt = delta[[k, ch]];
            let xk = x[[k, ch]];
            let mut dx = 0.0;
            let mut ddt = 0.0;
            for s in 0..n {
                let av = a[[ch, s]];
                let bv = b[[k, s]];
                g.c[[k, s]] += dyk * h[[k + 1, ch, s]];
                let gs = gh[[ch, s]] + dyk * c[[k, s]];
                let den = 1.0 - 0.5 * dt * av;
                let den2 = den * den;
                let a_bar = (1.0 + 0.5 * dt * av) / den;
                let b_bar = dt * bv / den;
                let g_abar = gs * h[[k, ch, s]];
                let g_bbar = gs * xk;
                dx += gs * b_bar;
                ddt += g_abar * av / den2 + g_bbar * bv / den2;
                g.a[[ch, s]] += g_abar * dt / den2 + g_bbar * dt * bv * 0.5 * dt / den2;
                g.b[[k, s]] += g_bbar * dt / den;
                gh[[ch, s]] = gs * a_bar;
            }
            g.x[[k, ch]] = dx;
            g.delta[[k, ch]] = ddt;
        }
    }
    Ok(g)
}

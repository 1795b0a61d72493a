//! State space machinery: bilinear discretization, the linear recurrent scan,
//! an input-dependent selective scan, and reverse-mode gradients for each.
//!
//! The recurrence is `h_k = A_bar h_{k-1} + B_bar x_k`, `y_k = C_bar h_k` with
//! `h_0 = 0`, and the optional feedthrough `D x_k` is off unless set.

mod diag;
mod selective;

pub use diag::{diag_selective_scan, diag_selective_scan_backward, DiagScanCache, DiagScanGrads};
pub use selective::{
    selective_scan, selective_scan_explicit, SelectiveGrads, SelectiveParams, SelectiveTape,
};

use ndarray::{Array1, Array2};

use crate::error::{invalid, Error, Result};

/// Continuous-time parameters for a single-input single-output system.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
    pub d_feedthrough: Option<f64>,
    pub delta: f64,
}

impl SsmParams {
    pub fn new(a: Array2<f64>, b: Array1<f64>, c: Array1<f64>, delta: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            c,
            d_feedthrough: None,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Scalar state `a`, `b`, `c`.
    pub fn scalar(a: f64, b: f64, c: f64, delta: f64) -> Result<Self> {
        Self::new(
            Array2::from_elem((1, 1), a),
            Array1::from_elem(1, b),
            Array1::from_elem(1, c),
            delta,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.b.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.b.len();
        if n == 0 || self.a.dim() != (n, n) || self.c.len() != n {
            return Err(invalid(format!(
                "ssm params: A is {:?}, B has {n}, C has {} entries",
                self.a.dim(),
                self.c.len()
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!("ssm params: step size must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Array2<f64>,
    pub b_bar: Array1<f64>,
    pub c_bar: Array1<f64>,
    pub d_feedthrough: Option<f64>,
}

impl DiscreteSsm {
    pub fn new(a_bar: Array2<f64>, b_bar: Array1<f64>, c_bar: Array1<f64>) -> Result<Self> {
        let n = b_bar.len();
        if n == 0 || a_bar.dim() != (n, n) || c_bar.len() != n {
            return Err(invalid(format!(
                "discrete ssm: A_bar is {:?}, B_bar has {n}, C_bar has {} entries",
                a_bar.dim(),
                c_bar.len()
            )));
        }
        let all = a_bar.iter().chain(b_bar.iter()).chain(c_bar.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(invalid("discrete ssm: non-finite entry"));
        }
        Ok(Self {
            a_bar,
            b_bar,
            c_bar,
            d_feedthrough: None,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.b_bar.len()
    }
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub(crate) fn invert(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    let mut a = m.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if a[[piv, col]].abs() <= 1e-13 * scale {
            return Err(Error::SingularMatrix(format!(
                "I - (delta/2) A is singular (pivot {:e} in column {col})",
                a[[piv, col]]
            )));
        }
        if piv != col {
            for j in 0..n {
                a.swap([piv, j], [col, j]);
                inv.swap([piv, j], [col, j]);
            }
        }
        let p = a[[col, col]];
        for j in 0..n {
            a[[col, j]] /= p;
            inv[[col, j]] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[[i, col]];
            if f != 0.0 {
                for j in 0..n {
                    a[[i, j]] -= f * a[[col, j]];
                    inv[[i, j]] -= f * inv[[col, j]];
                }
            }
        }
    }
    Ok(inv)
}

/// Intermediate of the bilinear map: `X = (I - delta/2 A)^{-1}`.
pub(crate) struct Bilinear {
    pub x: Array2<f64>,
    pub a_bar: Array2<f64>,
    pub b_bar: Array1<f64>,
}

pub(crate) fn bilinear(a: &Array2<f64>, b: &Array1<f64>, delta: f64) -> Result<Bilinear> {
    let n = b.len();
    let half = 0.5 * delta;
    let eye = Array2::<f64>::eye(n);
    let x = invert(&(&eye - &(a * half)))?;
    let a_bar = x.dot(&(&eye + &(a * half)));
    let b_bar = x.dot(b) * delta;
    Ok(Bilinear { x, a_bar, b_bar })
}

/// `A_bar = (I - delta/2 A)^{-1} (I + delta/2 A)`, `B_bar = (I - delta/2 A)^{-1} delta B`, `C_bar = C`.
pub fn discretize(params: &SsmParams) -> Result<DiscreteSsm> {
    params.validate()?;
    let bl = bilinear(&params.a, &params.b, params.delta)?;
    let mut d = DiscreteSsm::new(bl.a_bar, bl.b_bar, params.c.clone())?;
    d.d_feedthrough = params.d_feedthrough;
    Ok(d)
}

/// Gradients of a scalar loss with respect to the continuous parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousGrads {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub delta: f64,
}

/// Pulls `(dA_bar, dB_bar)` back through the bilinear map to `(dA, dB, d delta)`.
pub fn discretize_backward(
    params: &SsmParams,
    d_a_bar: &Array2<f64>,
    d_b_bar: &Array1<f64>,
) -> Result<ContinuousGrads> {
    let bl = bilinear(&params.a, &params.b, params.delta)?;
    Ok(bilinear_backward(&params.a, &params.b, params.delta, &bl.x, d_a_bar, d_b_bar))
}

pub(crate) fn bilinear_backward(
    a: &Array2<f64>,
    b: &Array1<f64>,
    delta: f64,
    x: &Array2<f64>,
    d_a_bar: &Array2<f64>,
    d_b_bar: &Array1<f64>,
) -> ContinuousGrads {
    // A_bar = X P, B_bar = X (delta B), X = M^{-1}, M = I - delta/2 A, P = I + delta/2 A
    let n = b.len();
    let half = 0.5 * delta;
    let p = &Array2::<f64>::eye(n) + &(a * half);
    let db_scaled = b * delta;
    let outer = |u: &Array1<f64>, v: &Array1<f64>| {
        Array2::from_shape_fn((u.len(), v.len()), |(i, j)| u[i] * v[j])
    };
    let d_x = d_a_bar.dot(&p.t()) + outer(d_b_bar, &db_scaled);
    let xt = x.t();
    let d_m = -(xt.dot(&d_x).dot(&xt));
    let d_p = xt.dot(d_a_bar);
    let d_bscaled = xt.dot(d_b_bar);
    let d_a = (&d_p - &d_m) * half;
    let d_delta = 0.5 * ((&d_p - &d_m) * a).sum() + d_bscaled.dot(b);
    ContinuousGrads {
        a: d_a,
        b: d_bscaled * delta,
        delta: d_delta,
    }
}

pub fn scan(dssm: &DiscreteSsm, inputs: &[f64]) -> Result<Vec<f64>> {
    let mut tape = ScanTape::new(dssm.clone());
    tape.forward(inputs)
}

/// Forward scan that keeps its states for a later backward pass.
#[derive(Clone, Debug)]
pub struct ScanTape {
    dssm: DiscreteSsm,
    inputs: Vec<f64>,
    /// `h_0 .. h_L`.
    states: Option<Vec<Array1<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrads {
    pub a_bar: Array2<f64>,
    pub b_bar: Array1<f64>,
    pub c_bar: Array1<f64>,
    pub d_feedthrough: Option<f64>,
    pub inputs: Vec<f64>,
}

impl ScanTape {
    pub fn new(dssm: DiscreteSsm) -> Self {
        Self {
            dssm,
            inputs: Vec::new(),
            states: None,
        }
    }

    pub fn forward(&mut self, inputs: &[f64]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(invalid("scan: empty input sequence"));
        }
        let d = &self.dssm;
        let mut h = Array1::zeros(d.state_dim());
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(h.clone());
        let mut ys = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = d.a_bar.dot(&h) + &d.b_bar * x;
            let mut y = d.c_bar.dot(&h);
            if let Some(dd) = d.d_feedthrough {
                y += dd * x;
            }
            ys.push(y);
            states.push(h.clone());
        }
        self.inputs = inputs.to_vec();
        self.states = Some(states);
        Ok(ys)
    }

    pub fn backward(&self, output_grads: &[f64]) -> Result<ScanGrads> {
        let states = self
            .states
            .as_ref()
            .ok_or_else(|| Error::Precondition("scan_backward: no cached forward pass".into()))?;
        let l = self.inputs.len();
        if output_grads.len() != l {
            return Err(invalid(format!(
                "scan_backward: {} output gradients for {l} steps",
                output_grads.len()
            )));
        }
        let d = &self.dssm;
        let n = d.state_dim();
        let mut g = ScanGrads {
            a_bar: Array2::zeros((n, n)),
            b_bar: Array1::zeros(n),
            c_bar: Array1::zeros(n),
            d_feedthrough: d.d_feedthrough.map(|_| 0.0),
            inputs: vec![0.0; l],
        };
        let mut gh = Array1::<f64>::zeros(n);
        for k in (0..l).rev() {
            let dy = output_grads[k];
            let x = self.inputs[k];
            let h = &states[k + 1];
            let h_prev = &states[k];
            g.c_bar.scaled_add(dy, h);
            gh.scaled_add(dy, &d.c_bar);
            if let (Some(dd), Some(gd)) = (d.d_feedthrough, g.d_feedthrough.as_mut()) {
                *gd += dy * x;
                g.inputs[k] += dd * dy;
            }
            for i in 0..n {
                for j in 0..n {
                    g.a_bar[[i, j]] += gh[i] * h_prev[j];
                }
            }
            g.b_bar.scaled_add(x, &gh);
            g.inputs[k] += d.b_bar.dot(&gh);
            gh = d.a_bar.t().dot(&gh);
        }
        Ok(g)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_params(rng: &mut ChaCha8Rng, n: usize) -> SsmParams {
        let a = Array2::from_shape_fn((n, n), |(i, j)| {
            rng.random_range(-0.5..0.5) - if i == j { 1.0 } else { 0.0 }
        });
        let b = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let c = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        SsmParams::new(a, b, c, rng.random_range(0.05..0.5)).unwrap()
    }

    /// Naive recurrence on plain vectors.
    fn loop_oracle(a: &Array2<f64>, b: &Array1<f64>, c: &Array1<f64>, xs: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut h = vec![0.0; n];
        let mut out = Vec::new();
        for &x in xs {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[i] += a[[i, j]] * h[j];
                }
                next[i] += b[i] * x;
            }
            h = next;
            out.push((0..n).map(|i| c[i] * h[i]).sum());
        }
        out
    }

    #[test]
    fn integrator() {
        let d = discretize(&SsmParams::scalar(0.0, 1.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(d.a_bar[[0, 0]], 1.0);
        assert_eq!(d.b_bar[0], 1.0);
        assert_eq!(scan(&d, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 3.0, 6.0]);
        assert_eq!(scan(&d, &[0.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(scan(&d, &[]).is_err());
    }

    #[test]
    fn singular_step() {
        let p = SsmParams::scalar(4.0, 1.0, 1.0, 0.5).unwrap();
        assert!(matches!(discretize(&p), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn matches_closed_form_scalar() {
        let (a, b, dt) = (-0.7, 1.3, 0.2);
        let d = discretize(&SsmParams::scalar(a, b, 1.0, dt).unwrap()).unwrap();
        let den = 1.0 - dt * a / 2.0;
        assert!((d.a_bar[[0, 0]] - (1.0 + dt * a / 2.0) / den).abs() < 1e-15);
        assert!((d.b_bar[0] - dt * b / den).abs() < 1e-15);
    }

    #[test]
    fn third_order_local_error() {
        let a = -1.0;
        let err = |dt: f64| {
            let d = discretize(&SsmParams::scalar(a, 1.0, 1.0, dt).unwrap()).unwrap();
            (d.a_bar[[0, 0]] - (dt * a).exp()).abs()
        };
        let mut dt = 0.05;
        for _ in 0..4 {
            let ratio = err(dt) / err(dt / 2.0);
            assert!((ratio - 8.0).abs() < 0.5, "halving ratio {ratio}");
            dt /= 2.0;
        }
    }

    #[test]
    fn stable_for_negative_a() {
        for i in 1..=40 {
            for j in 1..=40 {
                let a = -(i as f64) * 0.25;
                let dt = j as f64 * 0.1;
                let d = discretize(&SsmParams::scalar(a, 1.0, 1.0, dt).unwrap()).unwrap();
                assert!(d.a_bar[[0, 0]].abs() < 1.0);
            }
        }
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(1..=4);
            let l = rng.random_range(1..=32);
            let p = random_params(&mut rng, n);
            let d = discretize(&p).unwrap();
            let xs: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = scan(&d, &xs).unwrap();
            let want = loop_oracle(&d.a_bar, &d.b_bar, &d.c_bar, &xs);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_is_inverse() {
        let m = arr2(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]);
        let inv = invert(&m).unwrap();
        let prod = m.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn feedthrough_adds_direct_term() {
        let mut d = discretize(&SsmParams::scalar(0.0, 1.0, 1.0, 1.0).unwrap()).unwrap();
        d.d_feedthrough = Some(0.5);
        assert_eq!(scan(&d, &[2.0, 2.0]).unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn backward_needs_forward() {
        let d = discretize(&SsmParams::scalar(-1.0, 1.0, 1.0, 0.1).unwrap()).unwrap();
        let tape = ScanTape::new(d);
        assert!(matches!(tape.backward(&[1.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn backward_integrator_last_output() {
        let d = discretize(&SsmParams::scalar(0.0, 1.0, 1.0, 1.0).unwrap()).unwrap();
        let mut tape = ScanTape::new(d);
        tape.forward(&[0.3, -1.0, 2.0, 0.5]).unwrap();
        let g = tape.backward(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(g.inputs, vec![1.0; 4]);
        let z = tape.backward(&[0.0; 4]).unwrap();
        assert!(z.a_bar.iter().chain(z.b_bar.iter()).chain(z.c_bar.iter()).all(|&v| v == 0.0));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 3);
        let mut d = discretize(&p).unwrap();
        d.d_feedthrough = Some(0.4);
        let xs: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |d: &DiscreteSsm, xs: &[f64]| -> f64 {
            scan(d, xs).unwrap().iter().zip(&w).map(|(y, w)| y * w).sum()
        };
        let mut tape = ScanTape::new(d.clone());
        tape.forward(&xs).unwrap();
        let g = tape.backward(&w).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let (mut dp, mut dm) = (d.clone(), d.clone());
                dp.a_bar[[i, j]] += h;
                dm.a_bar[[i, j]] -= h;
                let fd = (loss(&dp, &xs) - loss(&dm, &xs)) / (2.0 * h);
                assert!(rel_err(fd, g.a_bar[[i, j]]) < 1e-4);
            }
            let (mut dp, mut dm) = (d.clone(), d.clone());
            dp.b_bar[i] += h;
            dm.b_bar[i] -= h;
            assert!(rel_err((loss(&dp, &xs) - loss(&dm, &xs)) / (2.0 * h), g.b_bar[i]) < 1e-4);
            let (mut dp, mut dm) = (d.clone(), d.clone());
            dp.c_bar[i] += h;
            dm.c_bar[i] -= h;
            assert!(rel_err((loss(&dp, &xs) - loss(&dm, &xs)) / (2.0 * h), g.c_bar[i]) < 1e-4);
        }
        let (mut dp, mut dm) = (d.clone(), d.clone());
        dp.d_feedthrough = Some(0.4 + h);
        dm.d_feedthrough = Some(0.4 - h);
        let fd = (loss(&dp, &xs) - loss(&dm, &xs)) / (2.0 * h);
        assert!(rel_err(fd, g.d_feedthrough.unwrap()) < 1e-4);
        for k in 0..xs.len() {
            let (mut xp, mut xm) = (xs.clone(), xs.clone());
            xp[k] += h;
            xm[k] -= h;
            let fd = (loss(&d, &xp) - loss(&d, &xm)) / (2.0 * h);
            assert!(rel_err(fd, g.inputs[k]) < 1e-4);
        }
    }

    #[test]
    fn discretize_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 3);
        let wa = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let wb = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let loss = |p: &SsmParams| {
            let d = discretize(p).unwrap();
            (&d.a_bar * &wa).sum() + d.b_bar.dot(&wb)
        };
        let g = discretize_backward(&p, &wa, &wb).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp.a[[i, j]] += h;
                pm.a[[i, j]] -= h;
                assert!(rel_err((loss(&pp) - loss(&pm)) / (2.0 * h), g.a[[i, j]]) < 1e-4);
            }
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.b[i] += h;
            pm.b[i] -= h;
            assert!(rel_err((loss(&pp) - loss(&pm)) / (2.0 * h), g.b[i]) < 1e-4);
        }
        let (mut pp, mut pm) = (p.clone(), p.clone());
        pp.delta += h;
        pm.delta -= h;
        assert!(rel_err((loss(&pp) - loss(&pm)) / (2.0 * h), g.delta) < 1e-4);
    }

    #[test]
    fn softplus_and_sigmoid() {
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-50.0) > 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for x in [-3.0, -0.2, 0.7, 4.0] {
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn scan_is_linear(
            seed in any::<u64>(),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
            l in 1usize..24,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = discretize(&random_params(&mut rng, 3)).unwrap();
            let x: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mix: Vec<f64> = x.iter().zip(&z).map(|(a, b)| alpha * a + beta * b).collect();
            let (yx, yz, ym) = (scan(&d, &x).unwrap(), scan(&d, &z).unwrap(), scan(&d, &mix).unwrap());
            for k in 0..l {
                prop_assert!((ym[k] - (alpha * yx[k] + beta * yz[k])).abs() < 1e-10);
            }
        }
    }
}

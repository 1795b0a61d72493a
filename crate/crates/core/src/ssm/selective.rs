use ndarray::{Array1, Array2};

use super::{bilinear, bilinear_backward, sigmoid, softplus, Bilinear};
use crate::error::{invalid, Error, Result};

/// Input-dependent projections of a scalar input stream:
/// `delta_k = softplus(w_delta x_k + b_delta)`, `B_k = w_b x_k + b_b`, `C_k = w_c x_k + b_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveParams {
    pub w_delta: f64,
    pub b_delta: f64,
    pub w_b: Array1<f64>,
    pub b_b: Array1<f64>,
    pub w_c: Array1<f64>,
    pub b_c: Array1<f64>,
}

impl SelectiveParams {
    /// Input-independent projections: every step uses `(delta, B, C)`.
    pub fn constant(delta_pre: f64, b: Array1<f64>, c: Array1<f64>) -> Self {
        let n = b.len();
        Self {
            w_delta: 0.0,
            b_delta: delta_pre,
            w_b: Array1::zeros(n),
            b_b: b,
            w_c: Array1::zeros(n),
            b_c: c,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.b_b.len()
    }

    fn validate(&self, a: &Array2<f64>) -> Result<()> {
        let n = self.b_b.len();
        if n == 0
            || a.dim() != (n, n)
            || self.w_b.len() != n
            || self.w_c.len() != n
            || self.b_c.len() != n
        {
            return Err(invalid("selective scan: projection and state sizes disagree"));
        }
        Ok(())
    }

    /// Per-step `(delta_k, B_k, C_k)`.
    pub fn project(&self, x: f64) -> (f64, Array1<f64>, Array1<f64>) {
        (
            softplus(self.w_delta * x + self.b_delta),
            &self.w_b * x + &self.b_b,
            &self.w_c * x + &self.b_c,
        )
    }
}

pub fn selective_scan(sel: &SelectiveParams, a: &Array2<f64>, inputs: &[f64]) -> Result<Vec<f64>> {
    SelectiveTape::default().forward(sel, a, inputs)
}

/// Scan with explicitly supplied per-step `delta_k`, `B_k`, `C_k`.
pub fn selective_scan_explicit(
    a: &Array2<f64>,
    deltas: &[f64],
    bs: &[Array1<f64>],
    cs: &[Array1<f64>],
    inputs: &[f64],
) -> Result<Vec<f64>> {
    let l = inputs.len();
    if l == 0 || deltas.len() != l || bs.len() != l || cs.len() != l {
        return Err(invalid("selective scan: per-step sequences must match the input length"));
    }
    let n = a.nrows();
    let mut h = Array1::zeros(n);
    let mut ys = Vec::with_capacity(l);
    for k in 0..l {
        if !(deltas[k] > 0.0) {
            return Err(invalid(format!("selective scan: step size {} at step {k}", deltas[k])));
        }
        if bs[k].len() != n || cs[k].len() != n || a.ncols() != n {
            return Err(invalid("selective scan: per-step B/C size mismatch"));
        }
        let Bilinear { a_bar, b_bar, .. } = bilinear(a, &bs[k], deltas[k])?;
        h = a_bar.dot(&h) + b_bar * inputs[k];
        ys.push(cs[k].dot(&h));
    }
    Ok(ys)
}

struct Step {
    x: f64,
    z_delta: f64,
    delta: f64,
    b: Array1<f64>,
    c: Array1<f64>,
    bl: Bilinear,
}

#[derive(Default)]
pub struct SelectiveTape {
    steps: Vec<Step>,
    /// `h_0 .. h_L`.
    states: Vec<Array1<f64>>,
    params: Option<(SelectiveParams, Array2<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveGrads {
    pub a: Array2<f64>,
    pub params: SelectiveParams,
    pub inputs: Vec<f64>,
}

impl SelectiveTape {
    pub fn forward(
        &mut self,
        sel: &SelectiveParams,
        a: &Array2<f64>,
        inputs: &[f64],
    ) -> Result<Vec<f64>> {
        sel.validate(a)?;
        if inputs.is_empty() {
            return Err(invalid("selective scan: empty input sequence"));
        }
        let n = sel.state_dim();
        let mut h = Array1::zeros(n);
        self.steps.clear();
        self.states = vec![h.clone()];
        let mut ys = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let z_delta = sel.w_delta * x + sel.b_delta;
            let (delta, b, c) = sel.project(x);
            let bl = bilinear(a, &b, delta)?;
            h = bl.a_bar.dot(&h) + &bl.b_bar * x;
            ys.push(c.dot(&h));
            self.states.push(h.clone());
            self.steps.push(Step {
                x,
                z_delta,
                delta,
                b,
                c,
                bl,
            });
        }
        self.params = Some((sel.clone(), a.clone()));
        Ok(ys)
    }

    pub fn backward(&self, output_grads: &[f64]) -> Result<SelectiveGrads> {
        let (sel, a) = self
            .params
            .as_ref()
            .ok_or_else(|| Error::Precondition("selective scan backward: no cached forward pass".into()))?;
        let l = self.steps.len();
        if output_grads.len() != l {
            return Err(invalid("selective scan backward: gradient length mismatch"));
        }
        let n = sel.state_dim();
        let mut g = SelectiveGrads {
            a: Array2::zeros((n, n)),
            params: SelectiveParams {
                w_delta: 0.0,
                b_delta: 0.0,
                w_b: Array1::zeros(n),
                b_b: Array1::zeros(n),
                w_c: Array1::zeros(n),
                b_c: Array1::zeros(n),
            },
            inputs: vec![0.0; l],
        };
        let mut gh = Array1::<f64>::zeros(n);
        for k in (0..l).rev() {
            let st = &self.steps[k];
            let dy = output_grads[k];
            let h = &self.states[k + 1];
            let h_prev = &self.states[k];
            // y = C_k . h_k
            let d_c = h * dy;
            gh.scaled_add(dy, &st.c);
            // h_k = A_bar h_{k-1} + B_bar x
            let d_a_bar = Array2::from_shape_fn((n, n), |(i, j)| gh[i] * h_prev[j]);
            let d_b_bar = &gh * st.x;
            let mut dx = st.bl.b_bar.dot(&gh);
            let cg = bilinear_backward(a, &st.b, st.delta, &st.bl.x, &d_a_bar, &d_b_bar);
            g.a += &cg.a;
            // projections
            let dz = cg.delta * sigmoid(st.z_delta);
            g.params.w_delta += dz * st.x;
            g.params.b_delta += dz;
            dx += dz * sel.w_delta;
            g.params.w_b.scaled_add(st.x, &cg.b);
            g.params.b_b += &cg.b;
            dx += sel.w_b.dot(&cg.b);
            g.params.w_c.scaled_add(st.x, &d_c);
            g.params.b_c += &d_c;
            dx += sel.w_c.dot(&d_c);
            g.inputs[k] = dx;
            gh = st.bl.a_bar.t().dot(&gh);
        }
        Ok(g)
    }
}

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ssm::sigmoid;

pub(crate) const RMS_EPS: f64 = 1e-6;

/// `y = x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` weights, zero bias.
    pub(crate) fn init(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((n_in, n_out), |_| rng.random_range(-bound..bound)),
            b: Array2::zeros((1, n_out)),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub(crate) fn push_named_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Array2<f64>)>,
    ) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

pub(crate) fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub(crate) fn silu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(pre, |d, &z| {
        let s = sigmoid(z);
        *d *= s * (1.0 + z * (1.0 - s));
    });
    out
}

/// Row-wise RMS normalization with a learned gain.
pub(crate) struct RmsCache {
    pub xhat: Array2<f64>,
    pub inv_rms: Vec<f64>,
}

pub(crate) fn rms_forward(x: &Array2<f64>, gain: &Array2<f64>) -> (Array2<f64>, RmsCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_rms = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        row.mapv_inplace(|v| v * inv);
        inv_rms.push(inv);
    }
    let out = &xhat * gain;
    (out, RmsCache { xhat, inv_rms })
}

pub(crate) fn rms_backward(
    cache: &RmsCache,
    gain: &Array2<f64>,
    dout: &Array2<f64>,
    dgain: &mut Array2<f64>,
) -> Array2<f64> {
    *dgain += &(dout * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dout * gain;
    let d = dout.ncols() as f64;
    let mut dx = dxhat.clone();
    for (t, mut row) in dx.rows_mut().into_iter().enumerate() {
        let xh = cache.xhat.row(t);
        let proj = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        let inv = cache.inv_rms[t];
        for (v, &x) in row.iter_mut().zip(xh.iter()) {
            *v = (*v - x * proj) * inv;
        }
    }
    dx
}

/// Softmax cross-entropy; returns the loss and `dL/dlogits`.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

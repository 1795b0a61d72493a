use rayon::prelude::*;

use super::{Model, PreparedCloud, TarMode};
use crate::error::Result;
use crate::mae::MaskPlan;
use crate::traversal::TraversalOrder;

/// Gradient norms below this are compared in absolute terms; finite
/// differences cannot resolve them relative to round-off in the loss.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Which loss to differentiate.
#[derive(Clone, Debug)]
pub enum GradCheckTarget {
    Classifier,
    Mae { plan: MaskPlan, tar: TarMode },
}

#[derive(Clone, Debug)]
pub struct TensorError {
    pub name: String,
    /// `|fd - analytic| / max(|fd|, |analytic|, GRAD_FLOOR)` over the whole
    /// tensor (L2 norms).
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub analytic_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorError> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn loss(
    model: &Model,
    sample: &PreparedCloud,
    orders: &[TraversalOrder],
    target: &GradCheckTarget,
    grad: Option<&mut Model>,
) -> Result<f64> {
    match target {
        GradCheckTarget::Classifier => Ok(model.classifier_loss(sample, orders, grad)?.0),
        GradCheckTarget::Mae { plan, tar } => model.mae_loss(sample, orders, plan, *tar, grad),
    }
}

/// Central finite differences with step `h` against the analytic gradient,
/// for every tensor whose name starts with one of `prefixes` (all tensors
/// when empty). Meant for small models (`d <= 8`, `N_c <= 16`): it costs two
/// forward passes per checked parameter.
pub fn grad_check(
    model: &Model,
    sample: &PreparedCloud,
    orders: &[TraversalOrder],
    target: &GradCheckTarget,
    prefixes: &[&str],
    h: f64,
) -> Result<GradCheckReport> {
    let mut analytic = model.zeros_like();
    let base = loss(model, sample, orders, target, Some(&mut analytic))?;
    let names: Vec<(usize, String)> = model
        .named_tensors()
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _))| prefixes.is_empty() || prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(i, (n, _))| (i, n))
        .collect();
    let grads = analytic.named_tensors();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names {
        let an = grads[ti].1;
        let fd: Vec<f64> = (0..an.len())
            .into_par_iter()
            .map(|flat| {
                let eval = |step: f64| -> Result<f64> {
                    let mut m = model.clone();
                    let mut ts = m.named_tensors_mut();
                    let t = &mut ts[ti].1;
                    let cols = t.ncols();
                    t[[flat / cols, flat % cols]] += step;
                    drop(ts);
                    loss(&m, sample, orders, target, None)
                };
                Ok((eval(h)? - eval(-h)?) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        let (mut diff2, mut fd2, mut an2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
        for (f, a) in fd.iter().zip(an.iter()) {
            diff2 += (f - a) * (f - a);
            fd2 += f * f;
            an2 += a * a;
            max_abs = max_abs.max((f - a).abs());
        }
        let denom = fd2.sqrt().max(an2.sqrt()).max(GRAD_FLOOR);
        tensors.push(TensorError {
            name,
            rel_error: diff2.sqrt() / denom,
            max_abs_error: max_abs,
            analytic_norm: an2.sqrt(),
        });
    }
    Ok(GradCheckReport { loss: base, tensors })
}

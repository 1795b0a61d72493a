use crate::error::{invalid, Result};
use crate::geometry::{KdTree, Point3};

/// For each point of `from`, the index of and squared distance to its nearest point in `to`.
fn nearest_in(from: &[Point3], to: &[Point3]) -> Vec<(usize, f64)> {
    let tree = KdTree::new(to);
    from.iter().map(|&p| tree.nearest(p, 1)[0]).collect()
}

fn check_sets(s: &[Point3], s_prime: &[Point3]) -> Result<()> {
    if s.is_empty() || s_prime.is_empty() {
        return Err(invalid("chamfer: point sets must be non-empty"));
    }
    Ok(())
}

/// Sum of squared nearest-neighbour distances in both directions, not averaged.
pub fn chamfer(s: &[Point3], s_prime: &[Point3]) -> Result<f64> {
    check_sets(s, s_prime)?;
    let a: f64 = nearest_in(s, s_prime).iter().map(|e| e.1).sum();
    let b: f64 = nearest_in(s_prime, s).iter().map(|e| e.1).sum();
    Ok(a + b)
}

/// Chamfer distance between `target` and `pred` with its gradient with
/// respect to each predicted point.
pub fn chamfer_with_grad(target: &[Point3], pred: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    check_sets(target, pred)?;
    let mut grad = vec![Point3::ORIGIN; pred.len()];
    let mut loss = 0.0;
    for (p, (j, d2)) in target.iter().zip(nearest_in(target, pred)) {
        loss += d2;
        grad[j] = grad[j] + (pred[j] - *p) * 2.0;
    }
    for (j, (i, d2)) in nearest_in(pred, target).into_iter().enumerate() {
        loss += d2;
        grad[j] = grad[j] + (pred[j] - target[i]) * 2.0;
    }
    Ok((loss, grad))
}

/// Mean Chamfer distance over the masked patches, summed in patch order.
/// Zero when there are no masked patches.
pub fn rec_loss(masked_patches: &[Vec<Point3>], reconstructions: &[Vec<Point3>]) -> Result<f64> {
    if masked_patches.len() != reconstructions.len() {
        return Err(invalid(format!(
            "rec_loss: {} patches but {} reconstructions",
            masked_patches.len(),
            reconstructions.len()
        )));
    }
    if masked_patches.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (s, r) in masked_patches.iter().zip(reconstructions) {
        total += chamfer(s, r)?;
    }
    Ok(total / masked_patches.len() as f64)
}

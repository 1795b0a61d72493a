//! Point clouds, farthest point sampling, nearest neighbors and patchification.

mod kdtree;
mod point;
mod rigid;
mod shapes;
pub mod xyz;

use std::sync::Arc;

pub use kdtree::KdTree;
pub use point::Point3;
pub use rigid::{apply_rigid, RigidTransform};
pub use shapes::{gen_shape, ShapeKind};

use crate::error::{invalid, Result};

/// An indexed, non-empty set of finite points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn gather(&self, indices: &[usize]) -> Vec<Point3> {
        indices.iter().map(|&i| self.points[i]).collect()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

/// Greedy max-min farthest point sampling.
///
/// Keeps an O(N_p) array of squared distances to the selected set and picks
/// the arg-max each round; ties go to the lower index.
pub fn fps(cloud: &PointCloud, n_centers: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if n_centers == 0 || n_centers > n {
        return Err(invalid(format!(
            "fps: n_centers must be in 1..={n}, got {n_centers}"
        )));
    }
    if start_index >= n {
        return Err(invalid(format!(
            "fps: start_index {start_index} out of range for {n} points"
        )));
    }
    let pts = cloud.points();
    let mut selected = Vec::with_capacity(n_centers);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start_index;
    for _ in 0..n_centers {
        selected.push(current);
        taken[current] = true;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d2 = p.dist2(c);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if !taken[i] && min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// Row `i` holds the `k` nearest cloud indices to `query_indices[i]`,
/// ascending by distance. The query point itself is included (distance zero).
pub fn knn(cloud: &PointCloud, query_indices: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    if k > n {
        return Err(invalid(format!("knn: k = {k} exceeds cloud size {n}")));
    }
    if let Some(&q) = query_indices.iter().find(|&&q| q >= n) {
        return Err(invalid(format!("knn: query index {q} out of range")));
    }
    let tree = KdTree::new(cloud.points());
    Ok(query_indices
        .iter()
        .map(|&q| {
            tree.nearest(cloud.get(q), k)
                .into_iter()
                .map(|(i, _)| i)
                .collect()
        })
        .collect())
}

/// FPS centers plus their kNN neighborhoods.
#[derive(Clone, Debug)]
pub struct PatchSet {
    cloud: Arc<PointCloud>,
    center_indices: Vec<usize>,
    neighbor_indices: Vec<usize>,
    n_neighbors: usize,
}

impl PatchSet {
    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn n_centers(&self) -> usize {
        self.center_indices.len()
    }

    pub fn n_neighbors(&self) -> usize {
        self.n_neighbors
    }

    pub fn center_indices(&self) -> &[usize] {
        &self.center_indices
    }

    pub fn neighbors(&self, patch: usize) -> &[usize] {
        let k = self.n_neighbors;
        &self.neighbor_indices[patch * k..(patch + 1) * k]
    }

    pub fn centers(&self) -> Vec<Point3> {
        self.cloud.gather(&self.center_indices)
    }

    pub fn center(&self, patch: usize) -> Point3 {
        self.cloud.get(self.center_indices[patch])
    }

    /// Patch points in cloud coordinates.
    pub fn patch_points(&self, patch: usize) -> Vec<Point3> {
        self.cloud.gather(self.neighbors(patch))
    }

    /// Patch points relative to the patch center.
    pub fn centered_patch(&self, patch: usize) -> Vec<Point3> {
        let c = self.center(patch);
        self.neighbors(patch)
            .iter()
            .map(|&i| self.cloud.get(i) - c)
            .collect()
    }
}

pub fn patchify(
    cloud: Arc<PointCloud>,
    n_centers: usize,
    n_neighbors: usize,
    start_index: usize,
) -> Result<PatchSet> {
    if n_neighbors == 0 {
        return Err(invalid("patchify: n_neighbors must be at least 1"));
    }
    let center_indices = fps(&cloud, n_centers, start_index)?;
    let rows = knn(&cloud, &center_indices, n_neighbors)?;
    Ok(PatchSet {
        center_indices,
        neighbor_indices: rows.into_iter().flatten().collect(),
        n_neighbors,
        cloud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&p| p.into()).collect()).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    // O(n_centers * N_p^2) restatement of the max-min rule.
    fn fps_oracle(pts: &[Point3], n: usize, start: usize) -> Vec<usize> {
        let mut sel = vec![start];
        while sel.len() < n {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for i in 0..pts.len() {
                if sel.contains(&i) {
                    continue;
                }
                let md = sel
                    .iter()
                    .map(|&s| pts[i].dist2(pts[s]))
                    .fold(f64::INFINITY, f64::min);
                if md > best.0 {
                    best = (md, i);
                }
            }
            sel.push(best.1);
        }
        sel
    }

    #[test]
    fn fps_picks_farthest() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        assert_eq!(fps(&c, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn fps_exhaustion_is_permutation() {
        let c = random_cloud(40, 1);
        let mut got = fps(&c, 40, 5).unwrap();
        assert_eq!(got[0], 5);
        got.sort();
        assert_eq!(got, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn fps_matches_oracle() {
        let c = random_cloud(50, 2);
        assert_eq!(fps(&c, 8, 0).unwrap(), fps_oracle(c.points(), 8, 0));
        assert_eq!(fps(&c, 8, 13).unwrap(), fps_oracle(c.points(), 8, 13));
    }

    #[test]
    fn fps_min_distance_is_monotone() {
        let c = random_cloud(200, 3);
        let sel = fps(&c, 32, 0).unwrap();
        let pts = c.points();
        let mut prev = f64::INFINITY;
        for k in 1..sel.len() {
            let md = sel[..k]
                .iter()
                .map(|&s| pts[sel[k]].dist2(pts[s]))
                .fold(f64::INFINITY, f64::min);
            assert!(md <= prev);
            prev = md;
        }
    }

    #[test]
    fn fps_rejects_bad_counts() {
        let c = random_cloud(5, 4);
        assert!(fps(&c, 6, 0).is_err());
        assert!(fps(&c, 0, 0).is_err());
        assert!(fps(&c, 2, 5).is_err());
    }

    #[test]
    fn knn_collinear() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(knn(&c, &[0], 2).unwrap(), vec![vec![0, 1]]);
        assert!(knn(&c, &[0], 4).is_err());
    }

    #[test]
    fn knn_exhaustion_and_oracle() {
        let c = random_cloud(100, 5);
        let q: Vec<usize> = (0..100).collect();
        for row in knn(&c, &q, 100).unwrap() {
            let mut r = row.clone();
            r.sort();
            assert_eq!(r, q);
        }
        let rows = knn(&c, &q, 5).unwrap();
        let pts = c.points();
        for (qi, row) in rows.iter().enumerate() {
            let mut idx: Vec<usize> = (0..100).collect();
            idx.sort_by(|&a, &b| {
                pts[qi]
                    .dist2(pts[a])
                    .total_cmp(&pts[qi].dist2(pts[b]))
                    .then(a.cmp(&b))
            });
            assert_eq!(row[..], idx[..5]);
        }
    }

    #[test]
    fn patchify_shapes() {
        let c = Arc::new(random_cloud(2048, 6));
        let p = patchify(c.clone(), 128, 32, 0).unwrap();
        assert_eq!(p.n_centers(), 128);
        for i in 0..128 {
            assert_eq!(p.neighbors(i).len(), 32);
            assert_eq!(p.neighbors(i)[0], p.center_indices()[i]);
        }
        let single = patchify(c.clone(), 1, 16, 0).unwrap();
        assert_eq!(single.neighbors(0), &knn(&c, &[0], 16).unwrap()[0][..]);
        let again = patchify(c, 128, 32, 0).unwrap();
        assert_eq!(again.center_indices(), p.center_indices());
    }
}

use std::collections::{BTreeSet, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{KdTree, Point3};

/// Kernel width selection for the Gaussian edge weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Fixed(f64),
    /// Mean squared edge length over the stored (undirected) edges.
    SelfTuning,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub k_neighbors: usize,
    pub sigma: SigmaMode,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            sigma: SigmaMode::SelfTuning,
        }
    }
}

impl GraphParams {
    pub fn with_k(k_neighbors: usize) -> Self {
        Self {
            k_neighbors,
            ..Self::default()
        }
    }
}

/// Symmetric sparse weight matrix in CSR layout, columns sorted per row.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyGraph {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    degrees: Vec<f64>,
    sigma: Option<f64>,
}

impl AdjacencyGraph {
    /// Builds a graph from undirected weighted edges. Duplicate pairs are rejected.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(i, j, w) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(invalid(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(invalid(format!("self-loop at node {i}")));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(invalid(format!("edge ({i}, {j}) weight {w} outside (0, 1]")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(invalid(format!("duplicate edge ({i}, {j})")));
            }
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for &(i, j, w) in edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        Ok(Self::from_adjacency(adj, None))
    }

    fn from_adjacency(mut adj: Vec<Vec<(usize, f64)>>, sigma: Option<f64>) -> Self {
        let mut row_ptr = Vec::with_capacity(adj.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut degrees = Vec::with_capacity(adj.len());
        row_ptr.push(0);
        for row in adj.iter_mut() {
            row.sort_by_key(|e| e.0);
            // degree summed in column order, matching a dense row sum
            let mut deg = 0.0;
            for &(j, w) in row.iter() {
                cols.push(j);
                weights.push(w);
                deg += w;
            }
            degrees.push(deg);
            row_ptr.push(cols.len());
        }
        Self {
            row_ptr,
            cols,
            weights,
            degrees,
            sigma,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.degrees.len()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.cols.len() / 2
    }

    /// Stored (directed) entries, i.e. the sparse matrix nnz.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// The kernel width used, if the graph was built from points.
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(pos) => self.weights[r.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n_nodes();
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for (j, x) in self.neighbors(i) {
                w[[i, j]] = x;
            }
        }
        w
    }

    /// Connected component label per node, labels numbered in order of first node.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let n = self.n_nodes();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for (v, _) in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }
}

/// Symmetrized kNN graph over patch centers with Gaussian weights `exp(-d^2 / sigma)`.
pub fn build_graph(centers: &[Point3], params: &GraphParams) -> Result<AdjacencyGraph> {
    let n = centers.len();
    if n < 2 {
        return Err(invalid("build_graph: need at least two centers"));
    }
    let k = params.k_neighbors;
    if k == 0 || k >= n {
        return Err(invalid(format!(
            "build_graph: K must satisfy 1 <= K < N_c (K = {k}, N_c = {n})"
        )));
    }
    if let SigmaMode::Fixed(s) = params.sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(format!("build_graph: fixed sigma must be positive, got {s}")));
        }
    }
    let tree = KdTree::new(centers);
    let mut pairs = BTreeSet::new();
    for (i, &c) in centers.iter().enumerate() {
        tree.nearest(c, k + 1)
            .into_iter()
            .map(|(j, _)| j)
            .filter(|&j| j != i)
            .take(k)
            .for_each(|j| {
                pairs.insert((i.min(j), i.max(j)));
            });
    }
    let d2: Vec<((usize, usize), f64)> = pairs
        .into_iter()
        .map(|(i, j)| ((i, j), centers[i].dist2(centers[j])))
        .collect();
    let sigma = match params.sigma {
        SigmaMode::Fixed(s) => s,
        SigmaMode::SelfTuning => {
            let mean = d2.iter().map(|e| e.1).sum::<f64>() / d2.len() as f64;
            if mean <= 0.0 {
                return Err(Error::DegenerateGeometry(
                    "all graph edges have zero length; self-tuning sigma is zero".into(),
                ));
            }
            mean
        }
    };
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for ((i, j), d) in d2 {
        let w = (-d / sigma).exp();
        // far edges can underflow; a zero weight is no edge
        if w > 0.0 {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    Ok(AdjacencyGraph::from_adjacency(adj, Some(sigma)))
}

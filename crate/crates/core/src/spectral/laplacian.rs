use ndarray::Array2;

use super::AdjacencyGraph;
use crate::error::{Error, Result};

/// `L_rw = I - D^{-1} W` over a borrowed graph, plus its symmetric similarity
/// `L_sym = D^{1/2} L_rw D^{-1/2} = I - D^{-1/2} W D^{-1/2}`.
#[derive(Clone, Debug)]
pub struct LaplacianOperator<'g> {
    graph: &'g AdjacencyGraph,
    inv_sqrt_degree: Vec<f64>,
    n_components: usize,
    component_labels: Vec<usize>,
}

pub fn random_walk_laplacian(graph: &AdjacencyGraph) -> Result<LaplacianOperator<'_>> {
    if let Some(node) = graph.degrees().iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedNode { node });
    }
    let (n_components, component_labels) = graph.components();
    Ok(LaplacianOperator {
        graph,
        inv_sqrt_degree: graph.degrees().iter().map(|d| 1.0 / d.sqrt()).collect(),
        n_components,
        component_labels,
    })
}

impl<'g> LaplacianOperator<'g> {
    pub fn graph(&self) -> &'g AdjacencyGraph {
        self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn component_labels(&self) -> &[usize] {
        &self.component_labels
    }

    pub fn inv_sqrt_degree(&self) -> &[f64] {
        &self.inv_sqrt_degree
    }

    /// `y = x - D^{-1} W x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let deg = self.graph.degrees();
        for (i, yi) in y.iter_mut().enumerate() {
            let wx: f64 = self.graph.neighbors(i).map(|(j, w)| w * x[j]).sum();
            *yi = x[i] - wx / deg[i];
        }
    }

    /// `y = D^{-1/2} W D^{-1/2} x`, the normalized adjacency.
    pub fn apply_normalized_adjacency(&self, x: &[f64], y: &mut [f64]) {
        let s = &self.inv_sqrt_degree;
        for (i, yi) in y.iter_mut().enumerate() {
            let wx: f64 = self.graph.neighbors(i).map(|(j, w)| w * s[j] * x[j]).sum();
            *yi = s[i] * wx;
        }
    }

    /// `y = L_sym x`
    pub fn apply_symmetric(&self, x: &[f64], y: &mut [f64]) {
        self.apply_normalized_adjacency(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = xi - *yi;
        }
    }

    pub fn to_dense_random_walk(&self) -> Array2<f64> {
        let n = self.n();
        let deg = self.graph.degrees();
        let mut l = Array2::eye(n);
        for i in 0..n {
            for (j, w) in self.graph.neighbors(i) {
                l[[i, j]] -= w / deg[i];
            }
        }
        l
    }

    pub fn to_dense_symmetric(&self) -> Array2<f64> {
        let n = self.n();
        let s = &self.inv_sqrt_degree;
        let mut l = Array2::eye(n);
        for i in 0..n {
            for (j, w) in self.graph.neighbors(i) {
                l[[i, j]] -= s[i] * w * s[j];
            }
        }
        l
    }

    /// Orthonormal null-space basis of `L_sym`: `D^{1/2}` restricted to each component.
    pub fn symmetric_null_space(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let deg = self.graph.degrees();
        (0..self.n_components)
            .map(|c| {
                let mut v: Vec<f64> = (0..n)
                    .map(|i| {
                        if self.component_labels[i] == c {
                            deg[i].sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                v
            })
            .collect()
    }
}

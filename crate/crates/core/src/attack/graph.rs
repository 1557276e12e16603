use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, ModelParams, Projector};

/// Correlation graph over overheard models; the attacker is the last node.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    /// Symmetric, entries in `[0, 1]`, unit diagonal.
    pub adjacency: Array2<f64>,
    /// One projected model per row.
    pub features: Array2<f64>,
}

impl ModelGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn attacker_node(&self) -> usize {
        self.node_count() - 1
    }

    /// `I + D^{-1} A`: each node's own state plus the weighted mean of its
    /// neighbourhood (self-loop included).
    pub fn propagation(&self) -> Array2<f64> {
        let n = self.node_count();
        let mut m = Array2::<f64>::eye(n);
        for i in 0..n {
            let deg: f64 = self.adjacency.row(i).sum();
            for j in 0..n {
                m[[i, j]] += self.adjacency[[i, j]] / deg;
            }
        }
        m
    }

    /// Off-diagonal neighbours of `node` (positive adjacency).
    pub fn neighbours(&self, node: usize) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&j| j != node && self.adjacency[[node, j]] > 0.0)
            .collect()
    }

    pub fn non_neighbours(&self, node: usize) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&j| j != node && self.adjacency[[node, j]] <= 0.0)
            .collect()
    }
}

/// Projects every overheard model (then the attacker's previous model) and
/// links nodes by clipped cosine similarity of their projections.
pub fn build_graph(overheard: &[ModelParams], attacker_prev: &ModelParams, projector: &Projector) -> Result<ModelGraph> {
    if overheard.len() < 2 {
        return Err(Error::TooFewOverheard {
            needed: 2,
            got: overheard.len(),
        });
    }
    let projected = overheard
        .iter()
        .chain(std::iter::once(attacker_prev))
        .map(|m| projector.project(m))
        .collect::<Result<Vec<_>>>()?;

    let n = projected.len();
    let d = projector.output_dim();
    let mut features = Array2::zeros((n, d));
    for (i, p) in projected.iter().enumerate() {
        for (k, v) in p.as_slice().iter().enumerate() {
            features[[i, k]] = *v;
        }
    }
    let mut adjacency = Array2::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let a = cosine_similarity(&projected[i], &projected[j])?.max(0.0);
            adjacency[[i, j]] = a;
            adjacency[[j, i]] = a;
        }
    }
    Ok(ModelGraph { adjacency, features })
}

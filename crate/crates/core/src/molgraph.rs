use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::tensor::{SparseMatrix, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MolGraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("feature matrix has {rows} rows for {nodes} nodes")]
    FeatureRows { rows: usize, nodes: usize },
    #[error("graph has no nodes")]
    Empty,
}

/// Undirected node-attributed graph of a drug (atoms/bonds) or a target
/// (residues/contacts).
#[derive(Clone, Debug, PartialEq)]
pub struct MolecularGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
}

impl MolecularGraph {
    /// Edges are deduplicated and stored as `(min, max)` in ascending order.
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
    ) -> Result<Self, MolGraphError> {
        if n_nodes == 0 {
            return Err(MolGraphError::Empty);
        }
        if features.shape().len() != 2 || features.rows() != n_nodes {
            return Err(MolGraphError::FeatureRows {
                rows: features.rows(),
                nodes: n_nodes,
            });
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(MolGraphError::EdgeOutOfRange(a, b, n_nodes));
            }
            if a == b {
                return Err(MolGraphError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            n_nodes,
            edges: set.into_iter().collect(),
            features,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Self-loop propagation operator: entry `(v, u)` is
    /// `1 / sqrt(d̂_v d̂_u)` for `u ∈ C(v) ∪ {v}` with `d̂ = 1 + |C(v)|`.
    pub fn propagation(&self) -> Arc<SparseMatrix> {
        let inv_sqrt: Vec<f64> = self
            .degrees()
            .into_iter()
            .map(|d| 1.0 / ((1 + d) as f64).sqrt())
            .collect();
        let mut triplets = Vec::with_capacity(self.n_nodes + 2 * self.edges.len());
        for (v, &s) in inv_sqrt.iter().enumerate() {
            triplets.push((v, v, s * s));
        }
        for &(a, b) in &self.edges {
            let w = inv_sqrt[a] * inv_sqrt[b];
            triplets.push((a, b, w));
            triplets.push((b, a, w));
        }
        Arc::new(
            SparseMatrix::from_triplets(self.n_nodes, self.n_nodes, &triplets)
                .expect("edges validated on construction"),
        )
    }

    /// Relabels nodes: new node `k` is old node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, MolGraphError> {
        let mut inverse = vec![0; self.n_nodes];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let rows: Vec<Vec<f64>> = order
            .iter()
            .map(|&old| self.features.row(old).to_vec())
            .collect();
        let features = Tensor::from_rows(&rows).expect("rows share the feature width");
        Self::new(
            self.n_nodes,
            self.edges.iter().map(|&(a, b)| (inverse[a], inverse[b])),
            features,
        )
    }
}

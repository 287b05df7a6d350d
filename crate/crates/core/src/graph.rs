//! Global affinity graph: drug–target matrix, adjacency assembly and
//! normalization, node signals, DropEdge and top-K pruning.
//!
//! Node numbering follows the bipartite layout used everywhere else: drugs
//! occupy `[0, n_drugs)` and target `j` is node `n_drugs + j`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{SparseMatrix, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("pair ({drug}, {target}) outside a {n_drugs}x{n_targets} matrix")]
    OutOfRange {
        drug: usize,
        target: usize,
        n_drugs: usize,
        n_targets: usize,
    },
    #[error("duplicate affinity for pair ({0}, {1})")]
    Duplicate(usize, usize),
    #[error("cannot mask ({0}, {1}): no such entry")]
    MaskWithoutEntry(usize, usize),
    #[error("affinity for ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
    #[error("adjacency entry ({0}, {1}) is negative")]
    NegativeEntry(usize, usize),
    #[error("adjacency is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("adjacency must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("drop rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("top-K limits must be at least 1")]
    InvalidTopK,
    #[error("min-max normalization of an empty list")]
    EmptyRange,
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Drug × target matrix of known affinities with a set of masked (held-out)
/// entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffinityMatrix {
    n_drugs: usize,
    n_targets: usize,
    entries: BTreeMap<(usize, usize), f64>,
    mask: BTreeSet<(usize, usize)>,
}

impl AffinityMatrix {
    pub fn new(n_drugs: usize, n_targets: usize) -> Self {
        Self {
            n_drugs,
            n_targets,
            ..Self::default()
        }
    }

    pub fn from_entries(
        n_drugs: usize,
        n_targets: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut m = Self::new(n_drugs, n_targets);
        for (d, t, v) in entries {
            m.insert(d, t, v)?;
        }
        Ok(m)
    }

    fn check(&self, drug: usize, target: usize) -> Result<()> {
        if drug >= self.n_drugs || target >= self.n_targets {
            return Err(GraphError::OutOfRange {
                drug,
                target,
                n_drugs: self.n_drugs,
                n_targets: self.n_targets,
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, drug: usize, target: usize, value: f64) -> Result<()> {
        self.check(drug, target)?;
        if !value.is_finite() {
            return Err(GraphError::NonFinite(drug, target));
        }
        if self.entries.insert((drug, target), value).is_some() {
            return Err(GraphError::Duplicate(drug, target));
        }
        Ok(())
    }

    /// Hides an existing entry from graph construction.
    pub fn mask(&mut self, drug: usize, target: usize) -> Result<()> {
        self.check(drug, target)?;
        if !self.entries.contains_key(&(drug, target)) {
            return Err(GraphError::MaskWithoutEntry(drug, target));
        }
        self.mask.insert((drug, target));
        Ok(())
    }

    pub fn n_drugs(&self) -> usize {
        self.n_drugs
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn n_nodes(&self) -> usize {
        self.n_drugs + self.n_targets
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, drug: usize, target: usize) -> Option<f64> {
        self.entries.get(&(drug, target)).copied()
    }

    pub fn is_masked(&self, drug: usize, target: usize) -> bool {
        self.mask.contains(&(drug, target))
    }

    /// All entries, masked or not, in (drug, target) order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(d, t), &v)| (d, t, v))
    }

    /// Entries visible to graph construction.
    pub fn visible(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries()
            .filter(move |(d, t, _)| !self.mask.contains(&(*d, *t)))
    }

    /// Copy containing only the visible entries of `pairs`; everything else
    /// is dropped. Used to build the training graph of a split.
    pub fn restricted_to(&self, pairs: &BTreeSet<(usize, usize)>) -> Self {
        let mut out = Self::new(self.n_drugs, self.n_targets);
        for (d, t, v) in self.visible() {
            if pairs.contains(&(d, t)) {
                out.entries.insert((d, t), v);
            }
        }
        out
    }

    /// Min-max statistics over the visible entries.
    pub fn visible_range(&self) -> Result<MinMax> {
        MinMax::fit(self.visible().map(|(_, _, v)| v))
    }

    pub fn drug_degree(&self, drug: usize) -> usize {
        self.visible().filter(|&(d, _, _)| d == drug).count()
    }

    pub fn target_degree(&self, target: usize) -> usize {
        self.visible().filter(|&(_, t, _)| t == target).count()
    }
}

/// Range statistics for min-max scaling.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut it = values.into_iter();
        let first = it.next().ok_or(GraphError::EmptyRange)?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(Self { min, max })
    }

    /// `(v - min) / (max - min)`; a degenerate range maps everything to 0.
    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }
}

/// Min-max scaling of a list onto `[0, 1]`.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let range = MinMax::fit(values.iter().copied())?;
    Ok(values.iter().map(|&v| range.apply(v)).collect())
}

/// How visible affinities become edge weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeWeighting {
    /// Min-max scaled affinity.
    Scaled(MinMax),
    /// Every known pair gets weight 1.
    Binary,
}

/// Symmetric nonnegative weighted adjacency over `n` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    matrix: SparseMatrix,
}

impl AdjacencyMatrix {
    /// Validates symmetry; negative entries are allowed here and rejected by
    /// [`normalize_adjacency`].
    pub fn from_sparse(matrix: SparseMatrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(GraphError::NotSquare(matrix.rows(), matrix.cols()));
        }
        let lookup: std::collections::HashMap<(usize, usize), f64> = (0..matrix.rows())
            .flat_map(|r| matrix.row_entries(r).map(move |(c, v)| ((r, c), v)))
            .collect();
        for r in 0..matrix.rows() {
            for (c, v) in matrix.row_entries(r) {
                if lookup.get(&(c, r)).copied().unwrap_or(0.0) != v {
                    return Err(GraphError::NotSymmetric(r, c));
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn from_dense(dense: &Tensor) -> Result<Self> {
        let m = SparseMatrix::from_dense(dense)
            .map_err(|_| GraphError::NotSquare(dense.rows(), dense.cols()))?;
        Self::from_sparse(m)
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn sparse(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn into_sparse(self) -> SparseMatrix {
        self.matrix
    }

    pub fn to_dense(&self) -> Tensor {
        self.matrix.to_dense()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.matrix
            .row_entries(r)
            .find(|&(col, _)| col == c)
            .map_or(0.0, |(_, v)| v)
    }

    /// Undirected edges `(r, c, w)` with `r < c`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.size())
            .flat_map(|r| {
                self.matrix
                    .row_entries(r)
                    .filter(move |&(c, _)| c > r)
                    .map(move |(c, v)| (r, c, v))
            })
            .collect()
    }

    /// Self-loop weights `(r, w)`.
    fn diagonal(&self) -> Vec<(usize, f64)> {
        (0..self.size())
            .filter_map(|r| {
                self.matrix
                    .row_entries(r)
                    .find(|&(c, _)| c == r)
                    .map(|(_, v)| (r, v))
            })
            .collect()
    }

    fn from_undirected(n: usize, edges: &[(usize, usize, f64)], diag: &[(usize, f64)]) -> Self {
        let mut triplets = Vec::with_capacity(edges.len() * 2 + diag.len());
        for &(r, c, w) in edges {
            triplets.push((r, c, w));
            triplets.push((c, r, w));
        }
        for &(r, w) in diag {
            triplets.push((r, r, w));
        }
        Self {
            matrix: SparseMatrix::from_triplets(n, n, &triplets)
                .expect("indices come from an n-node matrix"),
        }
    }
}

/// Bipartite adjacency from the visible entries: `A[i][n_d + j] = A[n_d + j][i] = w(i, j)`.
pub fn build_affinity_adjacency(aff: &AffinityMatrix, weighting: EdgeWeighting) -> AdjacencyMatrix {
    let nd = aff.n_drugs();
    let edges: Vec<(usize, usize, f64)> = aff
        .visible()
        .map(|(d, t, v)| {
            let w = match weighting {
                EdgeWeighting::Scaled(range) => range.apply(v),
                EdgeWeighting::Binary => 1.0,
            };
            (d, nd + t, w)
        })
        .collect();
    AdjacencyMatrix::from_undirected(aff.n_nodes(), &edges, &[])
}

/// Symmetric degree normalization `D^{-1/2} A D^{-1/2}` with `D_ii = Σ_j A_ij`.
/// Zero-degree nodes get `D^{-1/2} = 0`.
pub fn normalize_adjacency(adj: &AdjacencyMatrix) -> Result<AdjacencyMatrix> {
    let m = adj.sparse();
    let n = m.rows();
    let mut inv_sqrt = vec![0.0; n];
    for (r, slot) in inv_sqrt.iter_mut().enumerate() {
        let mut degree = 0.0;
        for (c, v) in m.row_entries(r) {
            if v < 0.0 {
                return Err(GraphError::NegativeEntry(r, c));
            }
            degree += v;
        }
        if degree > 0.0 {
            *slot = 1.0 / degree.sqrt();
        }
    }
    let mut triplets = Vec::with_capacity(m.nnz());
    for r in 0..n {
        for (c, v) in m.row_entries(r) {
            // product of the two scales first so that (r, c) and (c, r) round identically
            triplets.push((r, c, v * (inv_sqrt[r] * inv_sqrt[c])));
        }
    }
    let matrix = SparseMatrix::from_triplets(n, n, &triplets).expect("same sparsity pattern");
    Ok(AdjacencyMatrix { matrix })
}

/// Binary node signals: a two-column node-type one-hot followed by the
/// node's row of the (binary) connectivity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSignalMatrix {
    n_drugs: usize,
    n_targets: usize,
    matrix: SparseMatrix,
}

impl NodeSignalMatrix {
    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn sparse(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn to_dense(&self) -> Tensor {
        self.matrix.to_dense()
    }

    pub fn n_drugs(&self) -> usize {
        self.n_drugs
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }
}

pub fn build_node_signals(aff: &AffinityMatrix) -> NodeSignalMatrix {
    let nd = aff.n_drugs();
    let n = aff.n_nodes();
    let mut triplets = Vec::with_capacity(n + 2 * aff.len());
    for k in 0..n {
        triplets.push((k, if k < nd { 0 } else { 1 }, 1.0));
    }
    for (d, t, _) in aff.visible() {
        triplets.push((d, 2 + nd + t, 1.0));
        triplets.push((nd + t, 2 + d, 1.0));
    }
    NodeSignalMatrix {
        n_drugs: nd,
        n_targets: aff.n_targets(),
        matrix: SparseMatrix::from_triplets(n, 2 + n, &triplets).expect("indices in range"),
    }
}

/// Removes each undirected edge independently with probability `rate`.
/// Both directions go together; self-loops are left alone.
pub fn drop_edge(adj: &AdjacencyMatrix, rate: f64, seed: u64) -> Result<AdjacencyMatrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(GraphError::InvalidRate(rate));
    }
    if rate == 0.0 {
        return Ok(adj.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept: Vec<(usize, usize, f64)> = adj
        .edges()
        .into_iter()
        .filter(|_| rng.gen::<f64>() >= rate)
        .collect();
    Ok(AdjacencyMatrix::from_undirected(
        adj.size(),
        &kept,
        &adj.diagonal(),
    ))
}

/// Keeps each target's `topk_target` strongest visible edges, then each
/// drug's `topk_drug` strongest among the survivors. Ties go to the lower
/// drug index (target pass) or lower target index (drug pass). Masked
/// entries are carried over untouched.
pub fn topk_prune(
    aff: &AffinityMatrix,
    topk_drug: usize,
    topk_target: usize,
) -> Result<AffinityMatrix> {
    if topk_drug == 0 || topk_target == 0 {
        return Err(GraphError::InvalidTopK);
    }
    let mut by_target: Vec<Vec<(usize, f64)>> = vec![Vec::new(); aff.n_targets()];
    for (d, t, v) in aff.visible() {
        by_target[t].push((d, v));
    }
    let mut by_drug: Vec<Vec<(usize, f64)>> = vec![Vec::new(); aff.n_drugs()];
    for (t, mut edges) in by_target.into_iter().enumerate() {
        edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (d, v) in edges.into_iter().take(topk_target) {
            by_drug[d].push((t, v));
        }
    }
    let mut out = AffinityMatrix::new(aff.n_drugs(), aff.n_targets());
    for (d, mut edges) in by_drug.into_iter().enumerate() {
        edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (t, v) in edges.into_iter().take(topk_drug) {
            out.entries.insert((d, t), v);
        }
    }
    for &(d, t) in &aff.mask {
        out.entries.insert((d, t), aff.entries[&(d, t)]);
        out.mask.insert((d, t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dense_normalize(a: &Tensor) -> Tensor {
        let n = a.rows();
        let deg: Vec<f64> = (0..n).map(|r| a.row(r).iter().sum()).collect();
        let mut out = Tensor::zeros(&[n, n]);
        for r in 0..n {
            for c in 0..n {
                let s = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
                out.set(r, c, s(deg[r]) * a.get(r, c) * s(deg[c]));
            }
        }
        out
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[5.0, 10.8]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(minmax_normalize(&[3.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(minmax_normalize(&[]), Err(GraphError::EmptyRange));
    }

    #[test]
    fn single_pair_adjacency_is_symmetric() {
        let aff = AffinityMatrix::from_entries(2, 3, [(0, 0, 0.7)]).unwrap();
        let adj =
            build_affinity_adjacency(&aff, EdgeWeighting::Scaled(MinMax { min: 0.0, max: 1.0 }));
        let dense = adj.to_dense();
        assert_eq!(dense.get(0, 2), 0.7);
        assert_eq!(dense.get(2, 0), 0.7);
        assert_eq!(dense.data().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn masked_pairs_contribute_nothing() {
        let mut aff =
            AffinityMatrix::from_entries(2, 2, [(0, 0, 5.0), (1, 1, 7.0), (0, 1, 6.0)]).unwrap();
        aff.mask(0, 1).unwrap();
        let range = aff.visible_range().unwrap();
        assert_eq!(range, MinMax { min: 5.0, max: 7.0 });
        let adj = build_affinity_adjacency(&aff, EdgeWeighting::Scaled(range));
        assert_eq!(adj.get(0, 3), 0.0);
        assert_eq!(adj.get(3, 0), 0.0);
        assert_eq!(adj.get(1, 3), 1.0);
        assert!(matches!(
            aff.mask(1, 0),
            Err(GraphError::MaskWithoutEntry(1, 0))
        ));
    }

    #[test]
    fn out_of_range_and_duplicate_entries_fail() {
        let mut aff = AffinityMatrix::new(2, 2);
        assert!(matches!(
            aff.insert(2, 0, 1.0),
            Err(GraphError::OutOfRange { .. })
        ));
        aff.insert(0, 0, 1.0).unwrap();
        assert_eq!(aff.insert(0, 0, 2.0), Err(GraphError::Duplicate(0, 0)));
    }

    #[test]
    fn adjacency_matches_brute_force_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut aff = AffinityMatrix::new(4, 3);
        for d in 0..4 {
            for t in 0..3 {
                if rng.gen::<f64>() < 0.7 {
                    aff.insert(d, t, rng.gen_range(5.0..10.0)).unwrap();
                }
            }
        }
        let keys: Vec<_> = aff.entries().map(|(d, t, _)| (d, t)).collect();
        aff.mask(keys[0].0, keys[0].1).unwrap();
        let range = aff.visible_range().unwrap();
        let adj = build_affinity_adjacency(&aff, EdgeWeighting::Scaled(range)).to_dense();
        for r in 0..7 {
            for c in 0..7 {
                let expected = if r < 4 && c >= 4 {
                    match aff.get(r, c - 4) {
                        Some(v) if !aff.is_masked(r, c - 4) => {
                            (v - range.min) / (range.max - range.min)
                        }
                        _ => 0.0,
                    }
                } else if r >= 4 && c < 4 {
                    match aff.get(c, r - 4) {
                        Some(v) if !aff.is_masked(c, r - 4) => {
                            (v - range.min) / (range.max - range.min)
                        }
                        _ => 0.0,
                    }
                } else {
                    0.0
                };
                assert_eq!(adj.get(r, c), expected, "({r},{c})");
            }
        }
    }

    #[test]
    fn normalization_examples() {
        let two =
            AdjacencyMatrix::from_dense(&Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap())
                .unwrap();
        assert_eq!(normalize_adjacency(&two).unwrap().get(0, 1), 1.0);

        let path = Tensor::matrix(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let norm = normalize_adjacency(&AdjacencyMatrix::from_dense(&path).unwrap()).unwrap();
        let expected = 1.0 / 2f64.sqrt();
        assert!((norm.get(0, 1) - expected).abs() < 1e-15);
        assert!((norm.get(2, 1) - expected).abs() < 1e-15);

        let isolated =
            Tensor::matrix(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let norm = normalize_adjacency(&AdjacencyMatrix::from_dense(&isolated).unwrap()).unwrap();
        assert_eq!(norm.to_dense().row(2), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn negative_and_asymmetric_inputs_fail() {
        let neg =
            AdjacencyMatrix::from_dense(&Tensor::matrix(2, 2, vec![0.0, -1.0, -1.0, 0.0]).unwrap())
                .unwrap();
        assert!(matches!(
            normalize_adjacency(&neg),
            Err(GraphError::NegativeEntry(..))
        ));
        let asym = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.5, 0.0]).unwrap();
        assert!(matches!(
            AdjacencyMatrix::from_dense(&asym),
            Err(GraphError::NotSymmetric(..))
        ));
    }

    #[test]
    fn regular_graph_normalizes_to_inverse_degree() {
        // 6-cycle is 2-regular
        let mut a = Tensor::zeros(&[6, 6]);
        for i in 0..6 {
            a.set(i, (i + 1) % 6, 1.0);
            a.set((i + 1) % 6, i, 1.0);
        }
        let norm = normalize_adjacency(&AdjacencyMatrix::from_dense(&a).unwrap()).unwrap();
        for (_, _, w) in norm.edges() {
            assert!((w - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn node_signal_rows() {
        let aff = AffinityMatrix::from_entries(2, 2, [(0, 0, 1.0)]).unwrap();
        let x = build_node_signals(&aff).to_dense();
        assert_eq!(x.row(0), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(x.row(3), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(x.row(2), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn drop_edge_extremes_and_rate_check() {
        let aff = AffinityMatrix::from_entries(
            3,
            3,
            (0..3).flat_map(|d| (0..3).map(move |t| (d, t, 1.0))),
        )
        .unwrap();
        let adj = build_affinity_adjacency(&aff, EdgeWeighting::Binary);
        assert_eq!(drop_edge(&adj, 0.0, 1).unwrap(), adj);
        assert_eq!(drop_edge(&adj, 1.0, 1).unwrap().sparse().nnz(), 0);
        assert_eq!(drop_edge(&adj, 1.5, 1), Err(GraphError::InvalidRate(1.5)));
        assert_eq!(
            drop_edge(&adj, 0.5, 9).unwrap(),
            drop_edge(&adj, 0.5, 9).unwrap()
        );
    }

    #[test]
    fn topk_keeps_strongest_with_index_ties() {
        // target 0 has five edges; values 3, 9, 9, 1, 5 on drugs 0..5
        let aff = AffinityMatrix::from_entries(
            5,
            2,
            [
                (0, 0, 3.0),
                (1, 0, 9.0),
                (2, 0, 9.0),
                (3, 0, 1.0),
                (4, 0, 5.0),
                (3, 1, 2.0),
            ],
        )
        .unwrap();
        let pruned = topk_prune(&aff, 10, 2).unwrap();
        let kept: Vec<_> = pruned.visible().filter(|e| e.1 == 0).map(|e| e.0).collect();
        assert_eq!(kept, vec![1, 2]);
        // target 1 has one edge, unchanged
        assert_eq!(pruned.get(3, 1), Some(2.0));

        let tie =
            AffinityMatrix::from_entries(3, 1, [(0, 0, 4.0), (1, 0, 4.0), (2, 0, 4.0)]).unwrap();
        let kept: Vec<_> = topk_prune(&tie, 5, 2)
            .unwrap()
            .visible()
            .map(|e| e.0)
            .collect();
        assert_eq!(kept, vec![0, 1]);
    }

    fn random_affinity(seed: u64, nd: usize, nt: usize, density: f64) -> AffinityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut aff = AffinityMatrix::new(nd, nt);
        for d in 0..nd {
            for t in 0..nt {
                if rng.gen::<f64>() < density {
                    // coarse values to force ties
                    aff.insert(d, t, (rng.gen_range(0..6) as f64) * 0.5)
                        .unwrap();
                }
            }
        }
        aff
    }

    proptest! {
        #[test]
        fn normalization_preserves_symmetry(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 7;
            let mut a = Tensor::zeros(&[n, n]);
            for r in 0..n {
                for c in r..n {
                    if rng.gen::<f64>() < 0.5 {
                        let v = rng.gen_range(0.0..3.0);
                        a.set(r, c, v);
                        a.set(c, r, v);
                    }
                }
            }
            let norm = normalize_adjacency(&AdjacencyMatrix::from_dense(&a).unwrap()).unwrap().to_dense();
            prop_assert!(norm.max_abs_diff(&norm.transpose().unwrap()) == 0.0);
            prop_assert!(norm.max_abs_diff(&dense_normalize(&a)) < 1e-12);
        }

        #[test]
        fn topk_is_idempotent_and_bounded(seed in any::<u64>(), kd in 1usize..5, kt in 1usize..5) {
            let aff = random_affinity(seed, 9, 7, 0.6);
            let once = topk_prune(&aff, kd, kt).unwrap();
            let twice = topk_prune(&once, kd, kt).unwrap();
            prop_assert_eq!(&once, &twice);
            for t in 0..7 { prop_assert!(once.target_degree(t) <= kt); }
            for d in 0..9 { prop_assert!(once.drug_degree(d) <= kd); }
        }

        #[test]
        fn drop_edge_only_removes(seed in any::<u64>(), rate in 0.0f64..=1.0) {
            let aff = random_affinity(seed, 6, 5, 0.7);
            let adj = build_affinity_adjacency(&aff, EdgeWeighting::Binary);
            let dropped = drop_edge(&adj, rate, seed).unwrap();
            for (r, c, w) in dropped.edges() {
                prop_assert_eq!(adj.get(r, c), w);
            }
            let d = dropped.to_dense();
            prop_assert!(d.max_abs_diff(&d.transpose().unwrap()) == 0.0);
        }

        #[test]
        fn signal_rows_sum_to_one_plus_degree(seed in any::<u64>()) {
            let aff = random_affinity(seed, 5, 4, 0.5);
            let x = build_node_signals(&aff).to_dense();
            prop_assert_eq!(x.cols(), 2 + 9);
            for d in 0..5 {
                prop_assert_eq!(x.row(d).iter().sum::<f64>(), 1.0 + aff.drug_degree(d) as f64);
            }
            for t in 0..4 {
                prop_assert_eq!(x.row(5 + t).iter().sum::<f64>(), 1.0 + aff.target_degree(t) as f64);
            }
        }
    }
}

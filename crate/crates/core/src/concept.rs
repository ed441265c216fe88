//! Secondary graph linking nodes whose soft predictions are close.
//!
//! Each node is joined to its `k` nearest nodes in prediction space (squared
//! Euclidean distance, ties to the lower index) with a Gaussian kernel weight.
//! The result is symmetrized by taking the larger weight and given unit
//! self-loops.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{symmetric_normalize, GraphDocument};
use crate::linalg::SparseMatrixCSR;
use crate::stage1::SoftPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptParams {
    pub sigma: f64,
    pub ratio_node: f64,
    pub graph_size: usize,
    pub include_original_edges: bool,
    /// Weight of the conceptual part when original edges are mixed in.
    pub alpha: f64,
}

impl ConceptParams {
    pub fn new(sigma: f64, ratio_node: f64, graph_size: usize) -> Self {
        Self {
            sigma,
            ratio_node,
            graph_size,
            include_original_edges: true,
            alpha: 0.5,
        }
    }

    /// Neighbours per node before symmetrization, `max(1, round(ratio_node · graph_size))`.
    pub fn neighbors(&self) -> usize {
        ((self.ratio_node * self.graph_size as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.ratio_node > 0.0 && self.ratio_node <= 1.0) {
            return Err(Error::Config(format!("ratio_node must be in (0, 1], got {}", self.ratio_node)));
        }
        if self.graph_size == 0 {
            return Err(Error::Config("graph_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_from_squared(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp().max(f64::MIN_POSITIVE)
}

/// `exp(−‖p_i − p_j‖² / (2σ²))`.
pub fn kernel_weight(p_i: &[f64], p_j: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if p_i.len() != p_j.len() {
        return Err(Error::dims("kernel_weight", (1, p_i.len()), (1, p_j.len())));
    }
    Ok(kernel_from_squared(squared_distance(p_i, p_j), sigma))
}

/// The `k` nearest other nodes of every node, each list sorted by
/// `(distance, index)`.
pub fn nearest_neighbors(p: &SoftPrediction, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = p.num_nodes();
    if k >= n {
        return Err(Error::Config(format!(
            "{k} neighbours per node on {n} nodes would make the conceptual graph complete"
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let pi = p.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(pi, p.row(j)), j))
                .collect();
            let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k, by_key);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_key);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptualGraph {
    /// Symmetric kNN kernel graph with unit diagonal.
    pub weights: SparseMatrixCSR,
    /// Renormalized propagation matrix handed to the second stage.
    pub normalized: SparseMatrixCSR,
}

impl ConceptualGraph {
    /// Derives the propagation matrix from a kernel graph, optionally mixing in
    /// the renormalized original adjacency.
    pub fn from_weights(
        weights: SparseMatrixCSR,
        params: &ConceptParams,
        original: Option<&SparseMatrixCSR>,
    ) -> Result<Self> {
        let n = weights.rows();
        let conceptual = symmetric_normalize(&weights);
        let mixed = match (params.include_original_edges, original) {
            (true, Some(a)) => {
                if a.shape() != (n, n) {
                    return Err(Error::dims("conceptual graph mixing", (n, n), a.shape()));
                }
                let closed = a.linear_combination(1.0, &SparseMatrixCSR::identity(n), 1.0)?;
                let structural = symmetric_normalize(&closed);
                conceptual.linear_combination(params.alpha, &structural, 1.0 - params.alpha)?
            }
            (true, None) => {
                return Err(Error::Config(
                    "include_original_edges is set but no original adjacency was given".into(),
                ))
            }
            (false, _) => conceptual,
        };
        Ok(Self {
            weights,
            normalized: symmetric_normalize(&mixed),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.rows()
    }

    /// Off-diagonal edges once each as `(i, j, w)` with `i < j`.
    pub fn weighted_edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.num_nodes() {
            out.extend(self.weights.row(i).filter(|&(j, _)| j > i).map(|(j, w)| (i, j, w)));
        }
        out
    }

    /// Neutral JSON form: soft predictions as features, kernel weights on the edges.
    pub fn to_document(
        &self,
        name: &str,
        soft: &SoftPrediction,
        labels: &[usize],
        node_names: Option<&[String]>,
    ) -> GraphDocument {
        let edges = self.weighted_edges();
        GraphDocument {
            name: name.to_string(),
            num_nodes: self.num_nodes(),
            num_features: soft.num_classes(),
            num_classes: soft.num_classes(),
            features: soft.matrix().row_iter().map(<[f64]>::to_vec).collect(),
            labels: labels.to_vec(),
            edges: edges.iter().map(|&(i, j, _)| [i, j]).collect(),
            node_names: node_names.map(<[String]>::to_vec),
            edge_weights: Some(edges.iter().map(|&(_, _, w)| w).collect()),
        }
    }
}

impl ConceptualGraph {
    /// Inverse of [`to_document`](Self::to_document): the stored edges plus the unit diagonal.
    pub fn from_document(
        doc: &GraphDocument,
        params: &ConceptParams,
        original: Option<&SparseMatrixCSR>,
    ) -> Result<Self> {
        let n = doc.num_nodes;
        let weights = doc
            .weighted_adjacency()?
            .linear_combination(1.0, &SparseMatrixCSR::identity(n), 1.0)?;
        Self::from_weights(weights, params, original)
    }
}

/// Builds the conceptual graph from soft predictions.
pub fn build_conceptual_graph(
    p: &SoftPrediction,
    params: &ConceptParams,
    original: Option<&SparseMatrixCSR>,
) -> Result<ConceptualGraph> {
    params.validate()?;
    let n = p.num_nodes();
    let neighbors = nearest_neighbors(p, params.neighbors())?;
    let mut triplets = Vec::with_capacity(2 * n * params.neighbors() + n);
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            let w = kernel_from_squared(squared_distance(p.row(i), p.row(j)), params.sigma);
            triplets.push((i.min(j), i.max(j), w));
        }
    }
    // the kernel is symmetric, so a pair chosen from both ends carries the same weight twice
    triplets.sort_by_key(|t| (t.0, t.1));
    triplets.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1) && {
        b.2 = b.2.max(a.2);
        true
    });
    let mut full = Vec::with_capacity(2 * triplets.len() + n);
    for &(i, j, w) in &triplets {
        full.push((i, j, w));
        full.push((j, i, w));
    }
    full.extend((0..n).map(|i| (i, i, 1.0)));
    let weights = SparseMatrixCSR::from_triplets(n, n, &full)?;
    ConceptualGraph::from_weights(weights, params, original)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn soft(rows: &[Vec<f64>]) -> SoftPrediction {
        SoftPrediction::new(DenseMatrix::from_rows(rows).unwrap()).unwrap()
    }

    fn random_soft(n: usize, c: usize, rng: &mut ChaCha8Rng) -> SoftPrediction {
        let logits = DenseMatrix::uniform(n, c, -3.0, 3.0, rng);
        SoftPrediction::from_logits(&logits).unwrap()
    }

    fn pure(sigma: f64, k: usize) -> ConceptParams {
        ConceptParams {
            sigma,
            ratio_node: 1.0,
            graph_size: k,
            include_original_edges: false,
            alpha: 1.0,
        }
    }

    #[test]
    fn kernel_examples() {
        let a = [0.2, 0.3, 0.5];
        assert_eq!(kernel_weight(&a, &a, 1.0).unwrap(), 1.0);
        // squared distance 8 at sigma 2
        let w = kernel_weight(&[2.0, 0.0], &[0.0, 2.0], 2.0).unwrap();
        assert!((w - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w - 0.367879).abs() < 1e-6);
        let b = [0.1, 0.6, 0.3];
        assert_eq!(kernel_weight(&a, &b, 0.7).unwrap(), kernel_weight(&b, &a, 0.7).unwrap());
        assert!(matches!(kernel_weight(&a, &b, 0.0), Err(Error::Config(_))));
        assert!(kernel_weight(&a, &b[..2], 1.0).is_err());
    }

    #[test]
    fn table_defaults_give_expected_k() {
        assert_eq!(ConceptParams::new(2.0, 0.33, 40).neighbors(), 13);
        assert_eq!(ConceptParams::new(4.0, 0.56, 100).neighbors(), 56);
        assert_eq!(ConceptParams::new(6.0, 0.75, 150).neighbors(), 113);
        assert_eq!(ConceptParams::new(1.0, 0.01, 10).neighbors(), 1);
    }

    #[test]
    fn three_node_example() {
        let p = soft(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sigma = 1.5;
        let c = build_conceptual_graph(&p, &pure(sigma, 1), None).unwrap();
        let w = c.weights.to_dense();
        let far = (-1.0 / (sigma * sigma)).exp();
        let expected = DenseMatrix::from_rows(&[[1.0, 1.0, far], [1.0, 1.0, 0.0], [far, 0.0, 1.0]]).unwrap();
        assert!(w.max_abs_diff(&expected) < 1e-15, "{w:?}");
    }

    #[test]
    fn k_not_below_n_is_refused() {
        let p = soft(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert!(matches!(build_conceptual_graph(&p, &pure(1.0, 3), None), Err(Error::Config(_))));
        assert!(build_conceptual_graph(&p, &pure(1.0, 2), None).is_ok());
    }

    #[test]
    fn missing_original_is_a_config_error() {
        let p = soft(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let mut params = pure(1.0, 1);
        params.include_original_edges = true;
        assert!(matches!(build_conceptual_graph(&p, &params, None), Err(Error::Config(_))));
    }

    fn oracle_neighbors(p: &SoftPrediction, k: usize) -> Vec<Vec<usize>> {
        let n = p.num_nodes();
        (0..n)
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d: f64 = p.row(i).iter().zip(p.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                        (d, j)
                    })
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                all.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn neighbor_sets_match_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_soft(150, 4, &mut rng);
        assert_eq!(nearest_neighbors(&p, 13).unwrap(), oracle_neighbors(&p, 13));
        // exact ties: duplicated rows must resolve to the lower index
        let dup = soft(&[vec![0.5, 0.5], vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(nearest_neighbors(&dup, 2).unwrap(), oracle_neighbors(&dup, 2));
        assert_eq!(nearest_neighbors(&dup, 1).unwrap()[3], vec![0]);
    }

    #[test]
    fn larger_sigma_never_lowers_a_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_soft(60, 3, &mut rng);
        let narrow = build_conceptual_graph(&p, &pure(0.5, 5), None).unwrap();
        let wide = build_conceptual_graph(&p, &pure(2.0, 5), None).unwrap();
        assert_eq!(narrow.weights.col_idx(), wide.weights.col_idx());
        for (a, b) in narrow.weights.values().iter().zip(wide.weights.values()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn relabeling_nodes_commutes_with_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 40;
        let p = random_soft(n, 3, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted = SoftPrediction::new(p.matrix().select_rows(&perm)).unwrap();
        let base = build_conceptual_graph(&p, &pure(1.0, 4), None).unwrap().weights.to_dense();
        let moved = build_conceptual_graph(&permuted, &pure(1.0, 4), None).unwrap().weights.to_dense();
        for a in 0..n {
            for b in 0..n {
                assert_eq!(moved.get(a, b), base.get(perm[a], perm[b]));
            }
        }
    }

    #[test]
    fn mixing_keeps_symmetry_and_covers_both_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_soft(30, 3, &mut rng);
        let original = SparseMatrixCSR::from_triplets(30, 30, &[(0, 29, 1.0), (29, 0, 1.0)]).unwrap();
        let mut params = pure(1.0, 3);
        params.include_original_edges = true;
        params.alpha = 0.5;
        let c = build_conceptual_graph(&p, &params, Some(&original)).unwrap();
        assert!(c.normalized.is_symmetric(1e-12));
        assert!(c.normalized.get(0, 29) > 0.0);
        for (i, j, _) in c.weighted_edges() {
            assert!(c.normalized.get(i, j) > 0.0);
        }
    }

    #[test]
    fn document_round_trips_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = random_soft(12, 3, &mut rng);
        let c = build_conceptual_graph(&p, &pure(1.0, 2), None).unwrap();
        let labels = vec![0; 12];
        let doc = c.to_document("concept", &p, &labels, None);
        doc.validate().unwrap();
        let w = doc.weighted_adjacency().unwrap();
        let mut expected = c.weights.to_dense();
        for i in 0..12 {
            expected.set(i, i, 0.0);
        }
        assert_eq!(w.to_dense(), expected);
    }

    #[test]
    fn rebuilt_from_document_is_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p = random_soft(15, 3, &mut rng);
        let a = SparseMatrixCSR::from_triplets(15, 15, &[(0, 1, 1.0), (1, 0, 1.0), (3, 9, 1.0), (9, 3, 1.0)]).unwrap();
        let params = ConceptParams::new(2.0, 0.5, 6);
        let c = build_conceptual_graph(&p, &params, Some(&a)).unwrap();
        let text = serde_json::to_string(&c.to_document("concept", &p, &[0; 15], None)).unwrap();
        let doc = GraphDocument::from_value(serde_json::from_str(&text).unwrap()).unwrap();
        let back = ConceptualGraph::from_document(&doc, &params, Some(&a)).unwrap();
        assert_eq!(back.weights, c.weights);
        assert_eq!(back.normalized, c.normalized);
    }
}

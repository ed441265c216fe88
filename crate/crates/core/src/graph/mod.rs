//! Attributed graphs: data model, dataset parsers, normalization and splits.

mod datasets;
mod json;
mod linqs;
mod normalize;
mod split;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use datasets::{default_data_dir, load_dataset, BenchmarkDataset, DATA_DIR_ENV};
pub use json::{load_json_graph, save_json_graph, GraphDocument};
pub use linqs::{parse_linqs, parse_pubmed_tab};
pub use normalize::{normalize_adjacency, symmetric_normalize};
pub use split::{make_splits, DataSplit};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrixCSR};

/// Undirected graph whose nodes carry feature vectors and class labels.
///
/// The adjacency is binary, symmetric and has an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    name: String,
    adjacency: SparseMatrixCSR,
    features: DenseMatrix,
    labels: Vec<usize>,
    class_count: usize,
    node_names: Vec<String>,
}

/// Node, undirected edge, feature and class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
}

/// What happened to the raw edge list while building an adjacency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeReport {
    /// Raw edge records seen.
    pub records: usize,
    /// Undirected edges kept.
    pub kept: usize,
    /// Records repeating an already kept pair, in either direction.
    pub duplicates: usize,
    pub self_loops: usize,
    /// Records naming a node that does not exist.
    pub dangling: usize,
}

impl EdgeReport {
    pub fn dropped(&self) -> usize {
        self.duplicates + self.self_loops + self.dangling
    }
}

impl AttributedGraph {
    pub fn new(
        name: impl Into<String>,
        adjacency: SparseMatrixCSR,
        features: DenseMatrix,
        labels: Vec<usize>,
        class_count: usize,
        node_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if adjacency.shape() != (n, n) {
            return Err(Error::dims("attributed graph adjacency", adjacency.shape(), (n, n)));
        }
        if features.rows() != n {
            return Err(Error::dims("attributed graph features", features.shape(), (n, features.cols())));
        }
        if node_names.len() != n {
            return Err(Error::Contract(format!(
                "{} node names for {n} nodes",
                node_names.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Contract(format!(
                "node {i} has label {l}, outside [0, {class_count})"
            )));
        }
        if (0..n).any(|i| adjacency.get(i, i) != 0.0) {
            return Err(Error::Contract("adjacency has a non-zero diagonal".into()));
        }
        if adjacency.values().iter().any(|&v| v != 1.0) || !adjacency.is_symmetric(0.0) {
            return Err(Error::Contract("adjacency must be binary and symmetric".into()));
        }
        Ok(Self {
            name: name.into(),
            adjacency,
            features,
            labels,
            class_count,
            node_names,
        })
    }

    /// Builds the symmetric adjacency from an undirected edge list, dropping
    /// self loops, duplicates and out-of-range endpoints.
    pub fn from_edges(
        name: impl Into<String>,
        features: DenseMatrix,
        labels: Vec<usize>,
        class_count: usize,
        node_names: Vec<String>,
        edges: &[(usize, usize)],
    ) -> Result<(Self, EdgeReport)> {
        let n = labels.len();
        let (adjacency, report) = adjacency_from_edges(n, edges.iter().map(|&(a, b)| Some((a, b))));
        let g = Self::new(name, adjacency, features, labels, class_count, node_names)?;
        Ok((g, report))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn adjacency(&self) -> &SparseMatrixCSR {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(i).map(|(j, _)| j)
    }

    /// Each undirected edge once as `(i, j)` with `i < j`, in row-major order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.num_nodes() {
            out.extend(self.neighbors(i).filter(|&j| j > i).map(|j| (i, j)));
        }
        out
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            nodes: self.num_nodes(),
            edges: self.num_edges(),
            features: self.num_features(),
            classes: self.class_count,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.class_count];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// Features with every row divided by its L1 norm; all-zero rows are left alone.
    pub fn row_normalized_features(&self) -> DenseMatrix {
        let mut out = self.features.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm: f64 = row.iter().map(|v| v.abs()).sum();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }
}

pub(crate) fn adjacency_from_edges(
    n: usize,
    edges: impl IntoIterator<Item = Option<(usize, usize)>>,
) -> (SparseMatrixCSR, EdgeReport) {
    let mut report = EdgeReport::default();
    let mut seen = HashSet::new();
    let mut triplets = Vec::new();
    for e in edges {
        report.records += 1;
        let Some((a, b)) = e.filter(|&(a, b)| a < n && b < n) else {
            report.dangling += 1;
            continue;
        };
        if a == b {
            report.self_loops += 1;
            continue;
        }
        if !seen.insert((a.min(b), a.max(b))) {
            report.duplicates += 1;
            continue;
        }
        triplets.push((a, b, 1.0));
        triplets.push((b, a, 1.0));
    }
    report.kept = seen.len();
    let adjacency = SparseMatrixCSR::from_triplets(n, n, &triplets).expect("endpoints checked against n");
    (adjacency, report)
}

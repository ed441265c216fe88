//! Neutral JSON graph documents.
//!
//! ```json
//! { "name": "cora", "num_nodes": 2, "num_features": 1, "num_classes": 2,
//!   "features": [[1.0], [0.0]], "labels": [0, 1], "edges": [[0, 1]],
//!   "node_names": ["31336", "1061127"] }
//! ```
//!
//! `edges` lists every undirected pair once. Weighted graphs add an
//! `edge_weights` array parallel to `edges`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{adjacency_from_edges, AttributedGraph};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrixCSR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_weights: Option<Vec<f64>>,
}

fn take_key<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str) -> Result<T> {
    let value = obj
        .remove(key)
        .ok_or_else(|| Error::schema(key, "required key is missing"))?;
    serde_json::from_value(value).map_err(|e| Error::schema(key, e.to_string()))
}

fn take_optional<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str) -> Result<Option<T>> {
    match obj.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| Error::schema(key, e.to_string())),
    }
}

impl GraphDocument {
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut obj) = value else {
            return Err(Error::schema("$", "document must be a JSON object"));
        };
        let doc = Self {
            name: take_key(&mut obj, "name")?,
            num_nodes: take_key(&mut obj, "num_nodes")?,
            num_features: take_key(&mut obj, "num_features")?,
            num_classes: take_key(&mut obj, "num_classes")?,
            features: take_key(&mut obj, "features")?,
            labels: take_key(&mut obj, "labels")?,
            edges: take_key(&mut obj, "edges")?,
            node_names: take_optional(&mut obj, "node_names")?,
            edge_weights: take_optional(&mut obj, "edge_weights")?,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let value: Value = serde_json::from_reader(reader)?;
        Self::from_value(value)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.features.len() != n {
            return Err(Error::schema(
                "features",
                format!("{} rows for num_nodes = {n}", self.features.len()),
            ));
        }
        if let Some((i, row)) = self
            .features
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != self.num_features)
        {
            return Err(Error::schema(
                format!("features[{i}]"),
                format!("{} entries for num_features = {}", row.len(), self.num_features),
            ));
        }
        if let Some((i, _)) = self
            .features
            .iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::schema(format!("features[{i}]"), "non-finite value"));
        }
        if self.labels.len() != n {
            return Err(Error::schema(
                "labels",
                format!("{} labels for num_nodes = {n}", self.labels.len()),
            ));
        }
        if let Some((i, l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.num_classes) {
            return Err(Error::schema(
                format!("labels[{i}]"),
                format!("{l} is outside [0, {})", self.num_classes),
            ));
        }
        if let Some((k, e)) = self.edges.iter().enumerate().find(|(_, e)| e[0] >= n || e[1] >= n) {
            return Err(Error::schema(
                format!("edges[{k}]"),
                format!("endpoint of {e:?} is outside [0, {n})"),
            ));
        }
        if let Some(names) = &self.node_names {
            if names.len() != n {
                return Err(Error::schema(
                    "node_names",
                    format!("{} names for num_nodes = {n}", names.len()),
                ));
            }
        }
        if let Some(w) = &self.edge_weights {
            if w.len() != self.edges.len() {
                return Err(Error::schema(
                    "edge_weights",
                    format!("{} weights for {} edges", w.len(), self.edges.len()),
                ));
            }
            if let Some((k, _)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::schema(format!("edge_weights[{k}]"), "weights must be positive"));
            }
        }
        Ok(())
    }

    pub fn from_graph(g: &AttributedGraph) -> Self {
        Self {
            name: g.name().to_string(),
            num_nodes: g.num_nodes(),
            num_features: g.num_features(),
            num_classes: g.class_count(),
            features: g.features().row_iter().map(|r| r.to_vec()).collect(),
            labels: g.labels().to_vec(),
            edges: g.edge_list().into_iter().map(|(a, b)| [a, b]).collect(),
            node_names: Some(g.node_names().to_vec()),
            edge_weights: None,
        }
    }

    pub fn into_graph(self) -> Result<AttributedGraph> {
        let n = self.num_nodes;
        let features = DenseMatrix::new(n, self.num_features, self.features.concat())?;
        let node_names = self
            .node_names
            .unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
        let (adjacency, report) =
            adjacency_from_edges(n, self.edges.iter().map(|e| Some((e[0], e[1]))));
        if report.dropped() > 0 {
            warn!(
                "{}: dropped {} edge records ({} duplicate, {} self)",
                self.name,
                report.dropped(),
                report.duplicates,
                report.self_loops
            );
        }
        AttributedGraph::new(self.name, adjacency, features, self.labels, self.num_classes, node_names)
    }

    /// Symmetric weighted adjacency from `edges` and `edge_weights` (unit weights when absent).
    /// Self pairs set the diagonal.
    pub fn weighted_adjacency(&self) -> Result<SparseMatrixCSR> {
        let n = self.num_nodes;
        let mut triplets = Vec::with_capacity(2 * self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            let w = self.edge_weights.as_ref().map_or(1.0, |ws| ws[k]);
            triplets.push((e[0], e[1], w));
            if e[0] != e[1] {
                triplets.push((e[1], e[0], w));
            }
        }
        SparseMatrixCSR::from_triplets(n, n, &triplets)
    }
}

pub fn load_json_graph(path: &Path) -> Result<AttributedGraph> {
    GraphDocument::read(path)?.into_graph()
}

pub fn save_json_graph(g: &AttributedGraph, path: &Path) -> Result<()> {
    GraphDocument::from_graph(g).write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn minimal_single_node_document() {
        let doc = json!({
            "name": "one", "num_nodes": 1, "num_features": 2, "num_classes": 1,
            "features": [[0.5, 0.0]], "labels": [0], "edges": []
        });
        let g = GraphDocument::from_value(doc).unwrap().into_graph().unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.adjacency().nnz(), 0);
        assert_eq!(g.node_names(), &["0"]);
    }

    #[test]
    fn missing_key_is_named() {
        let doc = json!({
            "name": "one", "num_nodes": 1, "num_features": 2, "num_classes": 1,
            "labels": [0], "edges": []
        });
        match GraphDocument::from_value(doc) {
            Err(Error::Schema { key, .. }) => assert_eq!(key, "features"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_row_width_is_named() {
        let doc = json!({
            "name": "x", "num_nodes": 2, "num_features": 2, "num_classes": 1,
            "features": [[0.5, 0.0], [1.0]], "labels": [0, 0], "edges": [[0, 1]]
        });
        match GraphDocument::from_value(doc) {
            Err(Error::Schema { key, .. }) => assert_eq!(key, "features[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_is_named() {
        let doc = json!({
            "name": "x", "num_nodes": "two", "num_features": 2, "num_classes": 1,
            "features": [], "labels": [], "edges": []
        });
        match GraphDocument::from_value(doc) {
            Err(Error::Schema { key, .. }) => assert_eq!(key, "num_nodes"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn edge_out_of_range() {
        let doc = json!({
            "name": "x", "num_nodes": 2, "num_features": 0, "num_classes": 1,
            "features": [[], []], "labels": [0, 0], "edges": [[0, 2]]
        });
        assert!(matches!(
            GraphDocument::from_value(doc),
            Err(Error::Schema { key, .. }) if key == "edges[0]"
        ));
    }

    #[test]
    fn weighted_adjacency_is_symmetric() {
        let doc = json!({
            "name": "x", "num_nodes": 3, "num_features": 0, "num_classes": 1,
            "features": [[], [], []], "labels": [0, 0, 0], "edges": [[0, 1], [1, 2]],
            "edge_weights": [0.5, 0.25]
        });
        let doc = GraphDocument::from_value(doc).unwrap();
        let w = doc.weighted_adjacency().unwrap();
        assert!(w.is_symmetric(0.0));
        assert_eq!(w.get(2, 1), 0.25);
    }
}

//! Parsers for the LINQS citation-network text distributions.
//!
//! Nodes are ordered by their original id (numerically when every id is an
//! integer, lexicographically otherwise) and class ids follow the sorted class
//! names, so the same data always yields the same graph.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use log::{info, warn};

use super::{adjacency_from_edges, AttributedGraph, EdgeReport};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

struct RawNode {
    id: String,
    features: Vec<(usize, f64)>,
    label: String,
}

/// Parses `<id> <f1> .. <fm> <label>` content lines and `<cited> <citing>` cites lines.
pub fn parse_linqs<C: BufRead, E: BufRead>(content: C, cites: E) -> Result<(AttributedGraph, EdgeReport)> {
    let mut nodes = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in content.lines().enumerate() {
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "expected an id, features and a label".into(),
            });
        }
        let m = tokens.len() - 2;
        match width {
            None => width = Some(m),
            Some(w) if w != m => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("feature vector has {m} entries, earlier lines have {w}"),
                })
            }
            Some(_) => {}
        }
        let mut features = Vec::new();
        for (k, tok) in tokens[1..tokens.len() - 1].iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("feature {k} is not a number: {tok:?}"),
            })?;
            if v != 0.0 {
                features.push((k, v));
            }
        }
        nodes.push(RawNode {
            id: tokens[0].to_string(),
            features,
            label: tokens[tokens.len() - 1].to_string(),
        });
    }
    let Some(m) = width else {
        return Err(Error::Parse {
            line: 0,
            message: "content is empty".into(),
        });
    };

    let mut raw_edges = Vec::new();
    for line in cites.lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        if let (Some(a), Some(b)) = (it.next(), it.next()) {
            raw_edges.push((a.to_string(), b.to_string()));
        }
    }
    assemble(nodes, m, raw_edges)
}

/// Parses the tab-separated Pubmed-Diabetes variant
/// (`*.NODE.paper.tab` and `*.DIRECTED.cites.tab`).
pub fn parse_pubmed_tab<C: BufRead, E: BufRead>(nodes_tab: C, cites_tab: E) -> Result<(AttributedGraph, EdgeReport)> {
    let mut feature_index: HashMap<String, usize> = HashMap::new();
    let mut nodes = Vec::new();
    for (lineno, line) in nodes_tab.lines().enumerate() {
        let line = line?;
        let tokens: Vec<&str> = line.split('\t').filter(|t| !t.is_empty()).collect();
        let Some(&first) = tokens.first() else {
            continue;
        };
        if first == "NODE" {
            continue;
        }
        if first.starts_with("cat=") {
            // declaration line: `numeric:<name>:<default>` per feature
            for tok in &tokens[1..] {
                let mut parts = tok.splitn(3, ':');
                if let (Some("numeric"), Some(name)) = (parts.next(), parts.next()) {
                    let next = feature_index.len();
                    feature_index.entry(name.to_string()).or_insert(next);
                }
            }
            continue;
        }
        if feature_index.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "node record before the feature declaration line".into(),
            });
        }
        let mut label = None;
        let mut features = Vec::new();
        for tok in &tokens[1..] {
            let Some((key, value)) = tok.split_once('=') else {
                continue;
            };
            if key == "label" {
                label = Some(value.to_string());
            } else if let Some(&k) = feature_index.get(key) {
                let v: f64 = value.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("feature {key} is not a number: {value:?}"),
                })?;
                if v != 0.0 {
                    features.push((k, v));
                }
            }
        }
        let label = label.ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: "record has no label".into(),
        })?;
        nodes.push(RawNode {
            id: first.to_string(),
            features,
            label,
        });
    }
    if nodes.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "content is empty".into(),
        });
    }

    let mut raw_edges = Vec::new();
    for line in cites_tab.lines() {
        let line = line?;
        let ends: Vec<&str> = line
            .split('\t')
            .filter_map(|t| t.strip_prefix("paper:"))
            .collect();
        if let [a, b] = ends[..] {
            raw_edges.push((a.to_string(), b.to_string()));
        }
    }
    assemble(nodes, feature_index.len(), raw_edges)
}

fn assemble(
    mut nodes: Vec<RawNode>,
    m: usize,
    raw_edges: Vec<(String, String)>,
) -> Result<(AttributedGraph, EdgeReport)> {
    if nodes.iter().all(|n| n.id.parse::<u64>().is_ok()) {
        nodes.sort_by_key(|n| n.id.parse::<u64>().expect("checked numeric"));
    } else {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
    }
    if let Some(w) = nodes.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Parse {
            line: 0,
            message: format!("node id {:?} appears twice", w[0].id),
        });
    }

    let classes: Vec<String> = nodes
        .iter()
        .map(|n| n.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_of: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let index_of: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();

    let n = nodes.len();
    let mut features = DenseMatrix::zeros(n, m);
    for (i, node) in nodes.iter().enumerate() {
        for &(k, v) in &node.features {
            features.set(i, k, v);
        }
    }
    let labels: Vec<usize> = nodes.iter().map(|n| class_of[n.label.as_str()]).collect();

    let (adjacency, report) = adjacency_from_edges(
        n,
        raw_edges.iter().map(|(a, b)| {
            match (index_of.get(a.as_str()), index_of.get(b.as_str())) {
                (Some(&i), Some(&j)) => Some((i, j)),
                _ => None,
            }
        }),
    );
    if report.dropped() > 0 {
        warn!(
            "dropped {} citation records ({} duplicate, {} self, {} dangling)",
            report.dropped(),
            report.duplicates,
            report.self_loops,
            report.dangling
        );
    }
    info!("parsed {n} nodes, {m} features, {} classes, {} edges", classes.len(), report.kept);

    let node_names = nodes.into_iter().map(|n| n.id).collect();
    let g = AttributedGraph::new("linqs", adjacency, features, labels, classes.len(), node_names)?;
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    #[test]
    fn two_nodes_with_mutual_citation() {
        let content = "10\t1\t0\tA\n20\t0\t1\tB\n";
        let cites = "10\t20\n20\t10\n";
        let (g, report) = parse_linqs(content.as_bytes(), cites.as_bytes()).unwrap();
        assert_eq!(
            g.adjacency().to_dense(),
            DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()
        );
        assert_eq!(report.duplicates, 1);
        assert_eq!(g.labels(), &[0, 1]);
    }

    #[test]
    fn numeric_ids_sort_numerically_and_string_ids_lexically() {
        let content = "100 1 X\n9 0 Y\n";
        let (g, _) = parse_linqs(content.as_bytes(), "".as_bytes()).unwrap();
        assert_eq!(g.node_names(), &["9", "100"]);
        let content = "b10 1 X\na9 0 Y\n100 1 Y\n";
        let (g, _) = parse_linqs(content.as_bytes(), "".as_bytes()).unwrap();
        assert_eq!(g.node_names(), &["100", "a9", "b10"]);
    }

    #[test]
    fn dangling_and_self_citations_are_counted() {
        let content = "1 1 A\n2 1 A\n3 1 B\n";
        let cites = "1 2\n1 1\n4 1\n2 3\n";
        let (g, report) = parse_linqs(content.as_bytes(), cites.as_bytes()).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(report.self_loops, 1);
        assert_eq!(report.dangling, 1);
        assert_eq!(report.records, 4);
    }

    #[test]
    fn inconsistent_width_names_the_line() {
        let content = "1 1 0 A\n2 1 B\n";
        match parse_linqs(content.as_bytes(), "".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_content_is_an_error() {
        assert!(matches!(
            parse_linqs("\n\n".as_bytes(), "".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn pubmed_tab_variant() {
        let nodes = "NODE\tpaper\n\
cat=1,2,3:label\tnumeric:w-rat:0.0\tnumeric:w-cell:0.0\tstring:summary\n\
12\tlabel=2\tw-cell=0.5\tsummary=w-cell\n\
7\tlabel=1\tw-rat=0.25\tw-cell=0.1\tsummary=w-rat,w-cell\n";
        let cites = "DIRECTED\tcites\nNO_FEATURES\n\
1\tpaper:12\t|\tpaper:7\n\
2\tpaper:7\t|\tpaper:99\n";
        let (g, report) = parse_pubmed_tab(nodes.as_bytes(), cites.as_bytes()).unwrap();
        assert_eq!(g.node_names(), &["7", "12"]);
        assert_eq!(g.num_features(), 2);
        assert_eq!(g.features().row(0), &[0.25, 0.1]);
        assert_eq!(g.features().row(1), &[0.0, 0.5]);
        assert_eq!(g.labels(), &[0, 1]);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(report.dangling, 1);
    }
}

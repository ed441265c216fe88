use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::{load_json_graph, parse_linqs, parse_pubmed_tab, AttributedGraph, DatasetStats};
use crate::error::{Error, Result};

/// Environment variable naming the default data root.
pub const DATA_DIR_ENV: &str = "CONCEPTGCN_DATA_DIR";

/// The three citation benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkDataset {
    Cora,
    Citeseer,
    Pubmed,
}

impl BenchmarkDataset {
    pub const ALL: [BenchmarkDataset; 3] = [Self::Cora, Self::Citeseer, Self::Pubmed];

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cora" => Some(Self::Cora),
            "citeseer" => Some(Self::Citeseer),
            "pubmed" => Some(Self::Pubmed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cora => "cora",
            Self::Citeseer => "citeseer",
            Self::Pubmed => "pubmed",
        }
    }

    /// Published counts. `edges` is the raw citation-record count, before
    /// duplicate and self-citation removal.
    pub fn reference_stats(self) -> DatasetStats {
        match self {
            Self::Cora => DatasetStats {
                nodes: 2708,
                edges: 5429,
                features: 1433,
                classes: 7,
            },
            Self::Citeseer => DatasetStats {
                nodes: 3327,
                edges: 4732,
                features: 3703,
                classes: 6,
            },
            Self::Pubmed => DatasetStats {
                nodes: 19717,
                edges: 44338,
                features: 500,
                classes: 3,
            },
        }
    }

    /// Files that may hold this dataset under `root`, in lookup order.
    fn candidates(self, root: &Path) -> Vec<Source> {
        let name = self.name();
        let mut out = vec![
            Source::Json(root.join(format!("{name}.json"))),
            Source::Json(root.join(name).join(format!("{name}.json"))),
            Source::Linqs(
                root.join(name).join(format!("{name}.content")),
                root.join(name).join(format!("{name}.cites")),
            ),
            Source::Linqs(
                root.join(format!("{name}.content")),
                root.join(format!("{name}.cites")),
            ),
        ];
        if self == Self::Pubmed {
            for dir in [
                root.join("pubmed"),
                root.join("pubmed").join("data"),
                root.join("Pubmed-Diabetes"),
                root.join("Pubmed-Diabetes").join("data"),
                root.to_path_buf(),
            ] {
                out.push(Source::PubmedTab(
                    dir.join("Pubmed-Diabetes.NODE.paper.tab"),
                    dir.join("Pubmed-Diabetes.DIRECTED.cites.tab"),
                ));
            }
        }
        out
    }
}

enum Source {
    Json(PathBuf),
    Linqs(PathBuf, PathBuf),
    PubmedTab(PathBuf, PathBuf),
}

impl Source {
    fn exists(&self) -> bool {
        match self {
            Source::Json(p) => p.is_file(),
            Source::Linqs(a, b) | Source::PubmedTab(a, b) => a.is_file() && b.is_file(),
        }
    }

    fn load(&self) -> Result<AttributedGraph> {
        let open = |p: &Path| -> Result<BufReader<File>> { Ok(BufReader::new(File::open(p)?)) };
        match self {
            Source::Json(p) => load_json_graph(p),
            Source::Linqs(c, e) => Ok(parse_linqs(open(c)?, open(e)?)?.0),
            Source::PubmedTab(c, e) => Ok(parse_pubmed_tab(open(c)?, open(e)?)?.0),
        }
    }
}

/// `$CONCEPTGCN_DATA_DIR`, falling back to `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Resolves `spec` as a JSON file path or a benchmark name under `data_dir`.
pub fn load_dataset(spec: &str, data_dir: Option<&Path>) -> Result<AttributedGraph> {
    let as_path = Path::new(spec);
    if as_path.is_file() {
        let g = load_json_graph(as_path)?;
        info!("loaded {} from {}", g.name(), as_path.display());
        return Ok(g);
    }
    let Some(dataset) = BenchmarkDataset::from_name(spec) else {
        return Err(Error::DatasetNotFound(format!(
            "{spec:?} is neither a file nor one of cora, citeseer, pubmed"
        )));
    };
    let root = data_dir.map(Path::to_path_buf).unwrap_or_else(default_data_dir);
    let candidates = dataset.candidates(&root);
    let source = candidates.iter().find(|s| s.exists()).ok_or_else(|| {
        Error::DatasetNotFound(format!(
            "no {} files under {} (expected {0}.json, {0}/{0}.content + {0}.cites, or the LINQS tab files)",
            dataset.name(),
            root.display()
        ))
    })?;
    let g = source.load()?.with_name(dataset.name());
    let reference = dataset.reference_stats();
    let delta = g.num_edges() as i64 - reference.edges as i64;
    info!(
        "{}: {} undirected edges vs {} published records (delta {delta:+}, {:+.2}%)",
        dataset.name(),
        g.num_edges(),
        reference.edges,
        100.0 * delta as f64 / reference.edges as f64
    );
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for d in BenchmarkDataset::ALL {
            assert_eq!(BenchmarkDataset::from_name(d.name()), Some(d));
        }
        assert_eq!(BenchmarkDataset::from_name("CORA"), Some(BenchmarkDataset::Cora));
        assert_eq!(BenchmarkDataset::from_name("reddit"), None);
    }

    #[test]
    fn unknown_name_is_not_found() {
        assert!(matches!(
            load_dataset("nonexistent", Some(Path::new("/nowhere"))),
            Err(Error::DatasetNotFound(_))
        ));
    }

    #[test]
    fn missing_files_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset("cora", Some(dir.path())),
            Err(Error::DatasetNotFound(_))
        ));
    }

    #[test]
    fn finds_linqs_layout() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("cora")).unwrap();
        std::fs::write(dir.path().join("cora/cora.content"), "1\t1\t0\tA\n2\t0\t1\tB\n").unwrap();
        std::fs::write(dir.path().join("cora/cora.cites"), "1\t2\n").unwrap();
        let g = load_dataset("cora", Some(dir.path())).unwrap();
        assert_eq!(g.name(), "cora");
        assert_eq!(g.num_edges(), 1);
    }
}

//! Run directories: training, the manifest, and reloading a finished run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use conceptgcn::concept::ConceptualGraph;
use conceptgcn::graph::{load_dataset, make_splits, AttributedGraph, BenchmarkDataset, DataSplit, DatasetStats, GraphDocument};
use conceptgcn::layers::GraphContext;
use conceptgcn::linalg::DenseMatrix;
use conceptgcn::stage1::{Stage1Model, Stage1Output};
use conceptgcn::stage2::Stage2Model;
use conceptgcn::train::{
    load_params, pipeline_inference, save_params, train_baseline_gcn, train_pipeline, SplitAccuracy, TrainConfig,
};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";
pub const STAGE1: &str = "stage1.bin";
pub const STAGE2: &str = "stage2.bin";
pub const CONCEPT: &str = "concept_graph.json";
pub const BASELINE: &str = "baseline.bin";
pub const BASELINE_METRICS: &str = "baseline_metrics.csv";

/// Everything needed to reproduce a run, plus what it scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub dataset: String,
    /// Benchmark name or absolute path of the JSON graph.
    pub dataset_source: String,
    pub data_dir: Option<PathBuf>,
    pub stats: DatasetStats,
    pub class_histogram: Vec<usize>,
    /// Fully resolved: replaying it as a config file gives the same run.
    pub config: TrainConfig,
    pub weight_decay: f64,
    /// Train, val and test node counts.
    pub split_sizes: [usize; 3],
    pub accuracy: SplitAccuracy,
    pub baseline_accuracy: Option<SplitAccuracy>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Output role to file name inside the run directory.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Published settings for the three benchmarks, the generic defaults otherwise.
pub fn base_config(g: &AttributedGraph) -> TrainConfig {
    BenchmarkDataset::from_name(g.name())
        .map(TrainConfig::for_dataset)
        .unwrap_or_default()
}

/// Flags over config file over dataset defaults.
pub fn resolve_config(
    g: &AttributedGraph,
    config_file: Option<Value>,
    overrides: Map<String, Value>,
) -> conceptgcn::Result<TrainConfig> {
    let mut config = base_config(g);
    if let Some(file) = config_file {
        config = config.merged(file)?;
    }
    config = config.merged(Value::Object(overrides))?;
    config.validate()?;
    Ok(config.resolved())
}

fn split_for(g: &AttributedGraph, config: &TrainConfig, seed: u64) -> conceptgcn::Result<DataSplit> {
    make_splits(g, config.train_ratio, config.val_ratio, seed)
}

pub struct TrainRequest<'a> {
    pub dataset: &'a str,
    pub data_dir: Option<&'a Path>,
    pub config_file: Option<Value>,
    pub overrides: Map<String, Value>,
    pub with_baseline: bool,
}

pub fn train(req: &TrainRequest, out: &Path) -> anyhow::Result<RunManifest> {
    let started_unix = unix_now();
    let g = load_dataset(req.dataset, req.data_dir)?;
    let config = resolve_config(&g, req.config_file.clone(), req.overrides.clone())?;
    let split = split_for(&g, &config, config.split_seed())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let run = train_pipeline(&config, &g, &split)?;
    let accuracy = SplitAccuracy::compute(&run.probs, g.labels(), &split)?;
    run.metrics.write_csv(&out.join(METRICS))?;
    save_params(&run.stage1, &out.join(STAGE1))?;
    save_params(&run.stage2, &out.join(STAGE2))?;
    run.concept
        .to_document(&format!("{}-concept", g.name()), &run.concept_soft, g.labels(), Some(g.node_names()))
        .write(&out.join(CONCEPT))?;

    let mut outputs = BTreeMap::new();
    outputs.insert("metrics".to_string(), METRICS.to_string());
    outputs.insert("stage1".to_string(), STAGE1.to_string());
    outputs.insert("stage2".to_string(), STAGE2.to_string());
    outputs.insert("concept_graph".to_string(), CONCEPT.to_string());

    let baseline_accuracy = if req.with_baseline {
        info!("training the baseline GCN");
        let base = train_baseline_gcn(&config, &g, &split)?;
        base.metrics.write_csv(&out.join(BASELINE_METRICS))?;
        save_params(&base.model, &out.join(BASELINE))?;
        outputs.insert("baseline".to_string(), BASELINE.to_string());
        outputs.insert("baseline_metrics".to_string(), BASELINE_METRICS.to_string());
        Some(SplitAccuracy::compute(&base.probs, g.labels(), &split)?)
    } else {
        None
    };

    let path = Path::new(req.dataset);
    let dataset_source = if path.is_file() {
        absolute(path).display().to_string()
    } else {
        req.dataset.to_string()
    };
    let sizes = split.sizes();
    let manifest = RunManifest {
        version: env!("CONCEPTGCN_VERSION").to_string(),
        dataset: g.name().to_string(),
        dataset_source,
        data_dir: req.data_dir.map(absolute),
        stats: g.stats(),
        class_histogram: g.class_histogram(),
        weight_decay: config.weight_decay()?,
        config,
        split_sizes: [sizes.0, sizes.1, sizes.2],
        accuracy,
        baseline_accuracy,
        started_unix,
        finished_unix: unix_now(),
        outputs,
    };
    manifest.write(out)?;
    Ok(manifest)
}

/// A finished run with its dataset and weights back in memory.
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub graph: AttributedGraph,
    pub ctx: GraphContext,
    pub stage1: Stage1Model,
    pub stage2: Stage2Model,
    pub concept: ConceptualGraph,
}

impl LoadedRun {
    pub fn open(dir: &Path, dataset: Option<&str>, data_dir: Option<&Path>) -> anyhow::Result<Self> {
        let manifest = RunManifest::read(dir)?;
        let spec = dataset.unwrap_or(&manifest.dataset_source);
        let data_dir = data_dir.or(manifest.data_dir.as_deref());
        let graph = load_dataset(spec, data_dir)?;
        if graph.stats() != manifest.stats {
            bail!(
                "dataset {spec} has {:?}, the run was trained on {:?}",
                graph.stats(),
                manifest.stats
            );
        }
        let c = &manifest.config;
        let ctx = GraphContext::new(&graph, c.normalize_features);
        let (m, classes) = (graph.num_features(), graph.class_count());
        // Shapes only; every value is overwritten by the saved weights.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut stage1 = Stage1Model::new(m, c.hidden, classes, c.negative_slope, &mut rng)?;
        let mut stage2 = Stage2Model::new(m, c.hidden, c.hidden, classes, c.negative_slope, &mut rng)?;
        load_params(&mut stage1, &dir.join(STAGE1)).with_context(|| format!("loading {STAGE1}"))?;
        load_params(&mut stage2, &dir.join(STAGE2)).with_context(|| format!("loading {STAGE2}"))?;
        let doc = GraphDocument::read(&dir.join(CONCEPT)).with_context(|| format!("loading {CONCEPT}"))?;
        if doc.num_nodes != graph.num_nodes() {
            bail!("{CONCEPT} has {} nodes, the dataset {}", doc.num_nodes, graph.num_nodes());
        }
        let concept = ConceptualGraph::from_document(&doc, &c.concept_params(), Some(graph.adjacency()))?;
        Ok(Self {
            manifest,
            graph,
            ctx,
            stage1,
            stage2,
            concept,
        })
    }

    pub fn inference(&self) -> conceptgcn::Result<(Stage1Output, DenseMatrix)> {
        pipeline_inference(&self.stage1, &self.stage2, &self.concept, &self.ctx)
    }

    pub fn accuracy(&self, split_seed: Option<u64>) -> anyhow::Result<SplitAccuracy> {
        let c = &self.manifest.config;
        let split = split_for(&self.graph, c, split_seed.unwrap_or(c.split_seed()))?;
        let (_, probs) = self.inference()?;
        Ok(SplitAccuracy::compute(&probs, self.graph.labels(), &split)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use conceptgcn::synthetic::{planted_partition, SyntheticSpec};
    use serde_json::json;

    fn graph(name: &str) -> AttributedGraph {
        planted_partition(&SyntheticSpec {
            nodes: 30,
            features: 10,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .with_name(name)
    }

    #[test]
    fn benchmark_names_pick_published_defaults() {
        assert_eq!(base_config(&graph("citeseer")).hidden, 32);
        assert_eq!(base_config(&graph("toy")), TrainConfig::default());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let g = graph("pubmed");
        let file = json!({"epochs": 40, "hidden": 8});
        let mut flags = Map::new();
        flags.insert("epochs".into(), json!(20));
        let c = resolve_config(&g, Some(file), flags).unwrap();
        assert_eq!(c.epochs, 20);
        assert_eq!(c.hidden, 8);
        assert_eq!(c.sigma, 6.0);
        assert_eq!(c.phase1_epochs, Some(10));
    }

    #[test]
    fn invalid_override_is_a_config_error() {
        let mut flags = Map::new();
        flags.insert("epochs".into(), json!(0));
        let err = resolve_config(&graph("toy"), None, flags).unwrap_err();
        assert!(matches!(err, conceptgcn::Error::Config(_)));
    }
}

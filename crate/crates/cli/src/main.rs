//! `conceptgcn`: train, evaluate and inspect two-stage GCN runs.

mod export;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use conceptgcn::graph::load_dataset;

#[derive(Parser)]
#[command(name = "conceptgcn", version = env!("CONCEPTGCN_VERSION"), about = "Two-stage GCN node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the pipeline and write a run directory.
    Train(TrainArgs),
    /// Recompute train/val/test accuracy of a finished run.
    Eval(EvalArgs),
    /// Write embeddings, predictions, the conceptual graph or training curves.
    Export(ExportArgs),
    /// Print node, edge, feature and class counts plus the class histogram.
    Stats(StatsArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Benchmark name (cora, citeseer, pubmed) or path to a JSON graph.
    #[arg(long)]
    dataset: String,
    /// Root of the benchmark files. Defaults to $CONCEPTGCN_DATA_DIR, then ./data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

/// Per-run overrides; each one beats the config file and the dataset defaults.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "weight-decay")]
    weight_decay_override: Option<f64>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    negative_slope: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    ratio_node: Option<f64>,
    #[arg(long)]
    graph_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    include_original_edges: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    phase1_epochs: Option<usize>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    val_ratio: Option<f64>,
    #[arg(long)]
    shuffle: Option<bool>,
    #[arg(long)]
    normalize_features: Option<bool>,
    #[arg(long)]
    stochastic_concept_pass: Option<bool>,
    #[arg(long)]
    joint_finetune: Option<bool>,
}

impl Overrides {
    fn to_json(&self) -> Map<String, Value> {
        let mut out = Map::new();
        let mut put = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.insert(key.to_string(), v);
            }
        };
        put("epochs", self.epochs.map(|v| json!(v)));
        put("learning_rate", self.learning_rate.map(|v| json!(v)));
        put("hidden", self.hidden.map(|v| json!(v)));
        put("batch_size", self.batch_size.map(|v| json!(v)));
        put("dropout", self.dropout.map(|v| json!(v)));
        put("momentum", self.momentum.map(|v| json!(v)));
        put("gamma", self.gamma.map(|v| json!(v)));
        put("weight_decay_override", self.weight_decay_override.map(|v| json!(v)));
        put("grad_clip_norm", self.grad_clip_norm.map(|v| json!(v)));
        put("negative_slope", self.negative_slope.map(|v| json!(v)));
        put("sigma", self.sigma.map(|v| json!(v)));
        put("ratio_node", self.ratio_node.map(|v| json!(v)));
        put("graph_size", self.graph_size.map(|v| json!(v)));
        put("alpha", self.alpha.map(|v| json!(v)));
        put("include_original_edges", self.include_original_edges.map(|v| json!(v)));
        put("seed", self.seed.map(|v| json!(v)));
        put("split_seed", self.split_seed.map(|v| json!(v)));
        put("phase1_epochs", self.phase1_epochs.map(|v| json!(v)));
        put("train_ratio", self.train_ratio.map(|v| json!(v)));
        put("val_ratio", self.val_ratio.map(|v| json!(v)));
        put("shuffle", self.shuffle.map(|v| json!(v)));
        put("normalize_features", self.normalize_features.map(|v| json!(v)));
        put("stochastic_concept_pass", self.stochastic_concept_pass.map(|v| json!(v)));
        put("joint_finetune", self.joint_finetune.map(|v| json!(v)));
        out
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON object of config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to create or overwrite.
    #[arg(long)]
    out: PathBuf,
    /// Also train the plain two-layer GCN with the same settings.
    #[arg(long)]
    with_baseline: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RunArgs {
    /// Directory written by `train`.
    run_dir: PathBuf,
    /// Dataset to evaluate on instead of the one in the manifest.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Split seed instead of the one the run trained with.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Print a JSON object instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Embeddings,
    Predictions,
    ConceptGraph,
    Curves,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(value_enum)]
    what: ExportKind,
    /// Output file. `curves` also writes an SVG next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    json: bool,
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let config_file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let request = run::TrainRequest {
        dataset: &args.data.dataset,
        data_dir: args.data.data_dir.as_deref(),
        config_file,
        overrides: args.overrides.to_json(),
        with_baseline: args.with_baseline,
    };
    let manifest = run::train(&request, &args.out)?;
    print_accuracy(&manifest.accuracy, false);
    if let Some(b) = &manifest.baseline_accuracy {
        println!(
            "baseline train_acc {:.4} val_acc {:.4} test_acc {:.4}",
            b.train_acc, b.val_acc, b.test_acc
        );
    }
    Ok(())
}

fn print_accuracy(acc: &conceptgcn::train::SplitAccuracy, as_json: bool) {
    if as_json {
        println!("{}", serde_json::to_string(acc).expect("accuracy serializes"));
    } else {
        println!("train_acc {:.4}", acc.train_acc);
        println!("val_acc {:.4}", acc.val_acc);
        println!("test_acc {:.4}", acc.test_acc);
    }
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let loaded = run::LoadedRun::open(&args.run.run_dir, args.run.dataset.as_deref(), args.run.data_dir.as_deref())?;
    let acc = loaded.accuracy(args.split_seed)?;
    print_accuracy(&acc, args.json);
    Ok(())
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<()> {
    let dir = &args.run.run_dir;
    if let ExportKind::Curves = args.what {
        let svg = export::write_curves(dir, &args.out)?;
        println!("wrote {} and {}", args.out.display(), svg.display());
        return Ok(());
    }
    if let ExportKind::ConceptGraph = args.what {
        export::write_concept_graph(dir, &args.out)?;
        println!("wrote {}", args.out.display());
        return Ok(());
    }
    let loaded = run::LoadedRun::open(dir, args.run.dataset.as_deref(), args.run.data_dir.as_deref())?;
    match args.what {
        ExportKind::Embeddings => export::write_embeddings(&loaded, &args.out)?,
        ExportKind::Predictions => export::write_predictions(&loaded, &args.out)?,
        ExportKind::ConceptGraph | ExportKind::Curves => unreachable!("handled above"),
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<()> {
    let g = load_dataset(&args.data.dataset, args.data.data_dir.as_deref())?;
    let stats = g.stats();
    let hist = g.class_histogram();
    if hist.len() != stats.classes {
        bail!("histogram has {} classes, stats report {}", hist.len(), stats.classes);
    }
    if args.json {
        let doc = json!({ "dataset": g.name(), "stats": stats, "class_histogram": hist });
        println!("{doc}");
        return Ok(());
    }
    println!("dataset {}", g.name());
    println!("nodes {}", stats.nodes);
    println!("edges {}", stats.edges);
    println!("features {}", stats.features);
    println!("classes {}", stats.classes);
    for (c, count) in hist.iter().enumerate() {
        println!("class {c} {count}");
    }
    Ok(())
}

/// 3 for numeric failures during a run, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<conceptgcn::Error>() {
        Some(conceptgcn::Error::Numeric(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

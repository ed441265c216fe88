//! Optimizer, two-phase pipeline trainer, baseline GCN trainer, metrics and
//! parameter persistence.

mod baseline;
mod config;
mod engine;
mod metrics;
mod optim;
mod persist;
mod pipeline;

pub use baseline::{baseline_probabilities, train_baseline_gcn, BaselineGcn, BaselineRun};
pub use config::{weight_decay_of, TrainConfig};
pub use metrics::{evaluate, EpochRecord, MetricsLog, SplitAccuracy};
pub use optim::{sgd_momentum_step, OptimizerState};
pub use persist::{load_params, save_params, shapes_path, ShapeManifest, TensorEntry};
pub use pipeline::{pipeline_inference, stage2_probabilities, train_pipeline, PipelineRun};

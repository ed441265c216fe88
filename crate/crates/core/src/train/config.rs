use serde::{Deserialize, Serialize};

use crate::concept::ConceptParams;
use crate::error::{Error, Result};
use crate::graph::BenchmarkDataset;
use crate::layers::check_dropout_rate;

/// Every knob of a training run. Missing keys in a config file fall back to
/// [`TrainConfig::default`], which carries the Cora settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Per-epoch learning-rate multiplier.
    pub gamma: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub negative_slope: f64,
    /// L2 coefficient; `None` means `learning_rate / epochs`.
    pub weight_decay_override: Option<f64>,
    /// Joint gradient norm above which a step's gradients are scaled down; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub sigma: f64,
    pub ratio_node: f64,
    pub graph_size: usize,
    pub include_original_edges: bool,
    pub alpha: f64,
    pub seed: u64,
    /// Seed for the train/val/test split; `None` reuses `seed`.
    pub split_seed: Option<u64>,
    /// Stage-1 epochs; `None` means half of `epochs`.
    pub phase1_epochs: Option<usize>,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub shuffle: bool,
    pub normalize_features: bool,
    /// Keep dropout on for the stage-1 pass that feeds the conceptual graph.
    pub stochastic_concept_pass: bool,
    /// Keep updating stage 1 while stage 2 trains.
    pub joint_finetune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 230,
            batch_size: 20,
            momentum: 0.9,
            gamma: 0.99,
            dropout: 0.2,
            hidden: 16,
            negative_slope: 0.2,
            weight_decay_override: None,
            grad_clip_norm: Some(5.0),
            sigma: 2.0,
            ratio_node: 0.33,
            graph_size: 40,
            include_original_edges: true,
            alpha: 0.5,
            seed: 0,
            split_seed: None,
            phase1_epochs: None,
            train_ratio: 0.6,
            val_ratio: 0.2,
            shuffle: true,
            normalize_features: false,
            stochastic_concept_pass: false,
            joint_finetune: false,
        }
    }
}

/// `learning_rate / epochs`.
pub fn weight_decay_of(learning_rate: f64, epochs: usize) -> Result<f64> {
    if epochs == 0 {
        return Err(Error::Config("weight decay needs at least one epoch".into()));
    }
    Ok(learning_rate / epochs as f64)
}

impl TrainConfig {
    /// Published per-dataset settings, including the literal weight decay.
    pub fn for_dataset(dataset: BenchmarkDataset) -> Self {
        let base = Self::default();
        match dataset {
            BenchmarkDataset::Cora => Self {
                weight_decay_override: Some(0.0004),
                ..base
            },
            BenchmarkDataset::Citeseer => Self {
                weight_decay_override: Some(0.00035),
                ratio_node: 0.56,
                dropout: 0.4,
                sigma: 4.0,
                hidden: 32,
                graph_size: 100,
                batch_size: 40,
                epochs: 260,
                ..base
            },
            BenchmarkDataset::Pubmed => Self {
                weight_decay_override: Some(0.00029),
                ratio_node: 0.75,
                dropout: 0.6,
                sigma: 6.0,
                hidden: 64,
                graph_size: 150,
                batch_size: 80,
                epochs: 300,
                ..base
            },
        }
    }

    /// Overlays the keys of a JSON object onto this config.
    pub fn merged(&self, overrides: serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(patch) = overrides else {
            return Err(Error::schema("", "config must be a JSON object"));
        };
        let mut base = serde_json::to_value(self)?;
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in patch {
            if !obj.contains_key(&k) {
                return Err(Error::schema(k, "unknown config key"));
            }
            obj.insert(k, v);
        }
        Ok(serde_json::from_value(base)?)
    }

    pub fn weight_decay(&self) -> Result<f64> {
        match self.weight_decay_override {
            Some(wd) => Ok(wd),
            None => weight_decay_of(self.learning_rate, self.epochs),
        }
    }

    pub fn phase1_epochs(&self) -> usize {
        self.phase1_epochs.unwrap_or(self.epochs / 2)
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn concept_params(&self) -> ConceptParams {
        ConceptParams {
            sigma: self.sigma,
            ratio_node: self.ratio_node,
            graph_size: self.graph_size,
            include_original_edges: self.include_original_edges,
            alpha: self.alpha,
        }
    }

    /// Fills the derived fields so the config can be dumped and replayed as is.
    pub fn resolved(&self) -> Self {
        Self {
            phase1_epochs: Some(self.phase1_epochs()),
            split_seed: Some(self.split_seed()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        check_dropout_rate(self.dropout)?;
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if !(self.negative_slope > 0.0) {
            return fail(format!("negative_slope must be positive, got {}", self.negative_slope));
        }
        if let Some(wd) = self.weight_decay_override {
            if !(wd >= 0.0 && wd.is_finite()) {
                return fail(format!("weight decay must be non-negative, got {wd}"));
            }
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        if self.phase1_epochs() >= self.epochs {
            return fail(format!(
                "phase1_epochs ({}) must be below epochs ({})",
                self.phase1_epochs(),
                self.epochs
            ));
        }
        self.concept_params().validate()
    }
}

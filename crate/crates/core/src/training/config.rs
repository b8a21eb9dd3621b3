use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::{ModelConfig, OptimizerKind};

pub const BATCH_GRID: [usize; 3] = [4, 8, 16];
pub const LR_GRID: [f64; 3] = [1e-4, 5e-4, 1e-3];
pub const LAYER_GRID: [usize; 3] = [3, 4, 5];
pub const PERCENT_GRID: [f64; 4] = [5.0, 10.0, 15.0, 20.0];
pub const THRESHOLD_GRID: [f64; 3] = [0.5, 0.6, 0.7];

/// Hyperparameters of all training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Number of GIN layers `T`.
    pub layers: usize,
    pub hidden_dim: usize,
    pub head_hidden: usize,
    pub dropout_backbone: f64,
    pub dropout_graph_head: f64,
    pub dropout_node_head: f64,
    /// Weight of the primary term in the graph loss.
    pub lambda: f64,
    /// Pseudo-label selection percentage `n`.
    pub n_percent: f64,
    /// Pseudo-label score threshold `t`.
    pub threshold: f64,
    /// Fine-tuning learning rate; `lr / 10` when unset.
    pub finetune_lr: Option<f64>,
    pub epochs_graph: usize,
    pub epochs_node: usize,
    pub epochs_finetune: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Weight of the node loss in the fine-tuning objective.
    pub node_loss_weight: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub ece_bins: usize,
    pub seed: u64,
    pub allow_offgrid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 5e-4,
            layers: 4,
            hidden_dim: 64,
            head_hidden: 128,
            dropout_backbone: 0.2,
            dropout_graph_head: 0.5,
            dropout_node_head: 0.5,
            lambda: 0.5,
            n_percent: 10.0,
            threshold: 0.6,
            finetune_lr: None,
            epochs_graph: 50,
            epochs_node: 50,
            epochs_finetune: 20,
            patience: 15,
            node_loss_weight: 1.0,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            ece_bins: 10,
            seed: 0,
            allow_offgrid: false,
        }
    }
}

/// Keys accepted in a config file, with the short aliases `T`, `n`, `t`.
pub const CONFIG_KEYS: [&str; 22] = [
    "batch_size",
    "lr",
    "layers",
    "hidden_dim",
    "head_hidden",
    "dropout_backbone",
    "dropout_graph_head",
    "dropout_node_head",
    "lambda",
    "n_percent",
    "threshold",
    "finetune_lr",
    "epochs_graph",
    "epochs_node",
    "epochs_finetune",
    "patience",
    "node_loss_weight",
    "optimizer",
    "weight_decay",
    "ece_bins",
    "seed",
    "allow_offgrid",
];

fn canonical_key(key: &str) -> Option<&'static str> {
    match key {
        "T" => Some("layers"),
        "n" => Some("n_percent"),
        "t" => Some("threshold"),
        k => CONFIG_KEYS.iter().copied().find(|c| *c == k),
    }
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (v - g).abs() <= 1e-12 * g.abs().max(1.0))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn finite(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !v.is_finite() {
        return Err(Error::config(key, format!("`{value}` is not finite")));
    }
    Ok(v)
}

impl TrainConfig {
    /// Sets one key from its textual value without range checks.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key).ok_or_else(|| Error::config(key, "unknown key"))?;
        let value = value.trim();
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = finite(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "dropout_backbone" => self.dropout_backbone = finite(key, value)?,
            "dropout_graph_head" => self.dropout_graph_head = finite(key, value)?,
            "dropout_node_head" => self.dropout_node_head = finite(key, value)?,
            "lambda" => self.lambda = finite(key, value)?,
            "n_percent" => self.n_percent = finite(key, value)?,
            "threshold" => self.threshold = finite(key, value)?,
            "finetune_lr" => self.finetune_lr = Some(finite(key, value)?),
            "epochs_graph" => self.epochs_graph = parse(key, value)?,
            "epochs_node" => self.epochs_node = parse(key, value)?,
            "epochs_finetune" => self.epochs_finetune = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "node_loss_weight" => self.node_loss_weight = finite(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::config(key, format!("`{value}` is not adam or sgd"))),
                }
            }
            "weight_decay" => self.weight_decay = finite(key, value)?,
            "ece_bins" => self.ece_bins = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "allow_offgrid" => self.allow_offgrid = parse(key, value)?,
            _ => unreachable!("canonical keys are exhaustive"),
        }
        Ok(())
    }

    /// Parses flat `key=value` text; blank lines and `#` comments are
    /// ignored and absent keys keep their defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {} is not key=value", i + 1)))?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks, then grid checks unless `allow_offgrid` is set.
    pub fn validate(&self) -> Result<()> {
        let range = |ok: bool, key: &str, detail: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, detail.to_string()))
            }
        };
        range(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        range(self.lr >= 0.0, "lr", "must be non-negative")?;
        range(self.finetune_lr.is_none_or(|v| v >= 0.0), "finetune_lr", "must be non-negative")?;
        range(self.layers >= 1, "layers", "must be at least 1")?;
        range(self.hidden_dim >= 1, "hidden_dim", "must be at least 1")?;
        range(self.head_hidden >= 1, "head_hidden", "must be at least 1")?;
        for (key, p) in [
            ("dropout_backbone", self.dropout_backbone),
            ("dropout_graph_head", self.dropout_graph_head),
            ("dropout_node_head", self.dropout_node_head),
        ] {
            range((0.0..1.0).contains(&p), key, "must lie in [0, 1)")?;
        }
        range((0.0..=1.0).contains(&self.lambda), "lambda", "must lie in [0, 1]")?;
        range(self.n_percent > 0.0 && self.n_percent <= 100.0, "n_percent", "must lie in (0, 100]")?;
        range((0.0..1.0).contains(&self.threshold), "threshold", "must lie in [0, 1)")?;
        range(self.node_loss_weight >= 0.0, "node_loss_weight", "must be non-negative")?;
        range(self.weight_decay >= 0.0, "weight_decay", "must be non-negative")?;
        range(self.ece_bins >= 1, "ece_bins", "must be at least 1")?;
        if self.allow_offgrid {
            return Ok(());
        }
        let grid = |ok: bool, key: &str, grid: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("{key} off-grid: allowed values are {grid} (set allow_offgrid=true to override)"),
                ))
            }
        };
        grid(BATCH_GRID.contains(&self.batch_size), "batch_size", "{4, 8, 16}")?;
        grid(on_grid(self.lr, &LR_GRID), "lr", "{1e-4, 5e-4, 1e-3}")?;
        grid(LAYER_GRID.contains(&self.layers), "layers", "{3, 4, 5}")?;
        grid(self.hidden_dim == 64, "hidden_dim", "{64}")?;
        grid(self.head_hidden == 128, "head_hidden", "{128}")?;
        grid(on_grid(self.n_percent, &PERCENT_GRID), "n_percent", "{5, 10, 15, 20}")?;
        grid(on_grid(self.threshold, &THRESHOLD_GRID), "threshold", "{0.5, 0.6, 0.7}")?;
        Ok(())
    }

    pub fn finetune_lr(&self) -> f64 {
        self.finetune_lr.unwrap_or(self.lr / 10.0)
    }

    pub fn model_config(&self, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim: feature_dim + 2,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            head_hidden: self.head_hidden,
            num_classes: crate::heads::NUM_CLASSES,
            backbone_dropout: self.dropout_backbone,
            graph_head_dropout: self.dropout_graph_head,
            node_head_dropout: self.dropout_node_head,
        }
    }

    /// Renders the configuration in the `key=value` file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        line("batch_size", self.batch_size.to_string());
        line("lr", self.lr.to_string());
        line("layers", self.layers.to_string());
        line("hidden_dim", self.hidden_dim.to_string());
        line("head_hidden", self.head_hidden.to_string());
        line("dropout_backbone", self.dropout_backbone.to_string());
        line("dropout_graph_head", self.dropout_graph_head.to_string());
        line("dropout_node_head", self.dropout_node_head.to_string());
        line("lambda", self.lambda.to_string());
        line("n_percent", self.n_percent.to_string());
        line("threshold", self.threshold.to_string());
        if let Some(v) = self.finetune_lr {
            line("finetune_lr", v.to_string());
        }
        line("epochs_graph", self.epochs_graph.to_string());
        line("epochs_node", self.epochs_node.to_string());
        line("epochs_finetune", self.epochs_finetune.to_string());
        line("patience", self.patience.to_string());
        line("node_loss_weight", self.node_loss_weight.to_string());
        line(
            "optimizer",
            match self.optimizer {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
        );
        line("weight_decay", self.weight_decay.to_string());
        line("ece_bins", self.ece_bins.to_string());
        line("seed", self.seed.to_string());
        line("allow_offgrid", self.allow_offgrid.to_string());
        s
    }
}

/// Reads a `key=value` configuration file.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    TrainConfig::parse_str(&fsutil::read_to_string(path)?)
}

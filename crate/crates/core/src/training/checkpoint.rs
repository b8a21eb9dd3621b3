use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::{Model, ModelConfig, ModelParameters, Optimizer};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Training stage that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Graph,
    Node,
    Finetune,
    Supervised,
}

impl Phase {
    pub fn dir_name(self) -> &'static str {
        match self {
            Phase::Graph => "phase1",
            Phase::Node => "phase2",
            Phase::Finetune => "phase3",
            Phase::Supervised => "supervised",
        }
    }
}

/// Model weights with everything needed to resume or reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub phase: Phase,
    pub model_config: ModelConfig,
    pub params: ModelParameters,
    pub optimizer: Optimizer,
    pub train_config: TrainConfig,
    pub seed: u64,
    /// Epoch (1-based) the weights come from.
    pub epoch: usize,
    pub validation_wf1: Option<f64>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::from_parameters(self.model_config.clone(), self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.check_finite()?;
        fsutil::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        let bad = |detail: String| Error::format("checkpoint", format!("{}: {detail}", path.display()));
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if ckpt.version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.params.check_finite().map_err(|e| bad(e.to_string()))?;
        ckpt.model().map_err(|e| bad(e.to_string()))?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TissueGraph;
    use crate::nn::Matrix;

    fn checkpoint() -> Checkpoint {
        let cfg = TrainConfig::default();
        let model = Model::new(cfg.model_config(3), 5).unwrap();
        Checkpoint {
            version: CHECKPOINT_FORMAT_VERSION,
            phase: Phase::Graph,
            model_config: model.config.clone(),
            params: model.params.clone(),
            optimizer: Optimizer::adam(cfg.lr).unwrap(),
            train_config: cfg,
            seed: 5,
            epoch: 3,
            validation_wf1: Some(0.75),
        }
    }

    #[test]
    fn round_trip_reproduces_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        let ckpt = checkpoint();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let g = TissueGraph::new(
            Matrix::from_rows(&[vec![0.1, 0.7, 0.3], vec![0.9, 0.2, 0.4]]).unwrap(),
            vec![[0.2, 0.3], [0.8, 0.6]],
            vec![(0, 1)],
            None,
        )
        .unwrap();
        let a = ckpt.model().unwrap().predict_graph(&g).unwrap();
        let b = back.model().unwrap().predict_graph(&g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        checkpoint().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 10]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}

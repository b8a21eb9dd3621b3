//! Training configuration, checkpoints, augmentation and the three
//! training phases.

pub mod augment;
mod checkpoint;
mod config;
mod phases;
mod predict;

pub use augment::{augment_node_patches, PatchTransform};
pub use checkpoint::{Checkpoint, Phase, CHECKPOINT_FORMAT_VERSION};
pub use config::{load_config, TrainConfig, CONFIG_KEYS};
pub use phases::{
    finetune_joint, graph_class_counts, mean_graph_loss, mean_node_loss, node_class_counts,
    train_fully_supervised_nodes, train_graph_phase, train_node_phase, EpochRecord, NodeTargets,
    PhaseHistory, PhaseOutcome,
};
pub use predict::{embed_all, evaluate_wf1, node_accuracy, predict, predict_label, ImagePrediction};

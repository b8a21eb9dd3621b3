//! Gleason label algebra, class weights, cross-entropy objectives and
//! class masks.

mod gleason;
mod loss;
mod mask;

pub use gleason::{GleasonLabel, Pattern, NUM_CLASSES};
pub use loss::{class_weights, graph_loss, graph_loss_on_tape, weighted_ce};
pub use mask::{mask_from_node_labels, ClassMask};

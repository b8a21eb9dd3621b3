//! Minimal deterministic neural kernel: matrices, a reverse-mode tape,
//! MLPs, the mean-aggregation GIN layer, and optimizers.

mod layers;
mod matrix;
mod model;
mod optim;
mod params;
mod tape;

pub use layers::{gin_layer, mlp_forward, readout_mean, Mlp, Pass};
pub use matrix::Matrix;
pub use model::{softmax, softmax_argmax, ForwardOutput, Model, ModelConfig, NodePrediction, GraphPrediction};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ModelParameters, Param, ParamGroup, ParamId};
pub use tape::{Adjacency, Gradients, ParamGrads, Tape, Var};

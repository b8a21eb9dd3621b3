//! Weakly supervised joint classification and segmentation of large tissue
//! rasters.
//!
//! An image is stain normalized, over-segmented with SLIC, and the
//! superpixels are merged by color similarity into tissue regions. The
//! regions become the nodes of a region adjacency graph whose features come
//! from a pluggable patch encoder. A mean-aggregation GIN backbone with
//! jumping-knowledge concatenation feeds two graph heads (primary and
//! secondary Gleason pattern) trained from image-level labels only.
//! Gradient-based node attribution on the trained graph heads yields pseudo
//! node labels, which train a node head whose per-node predictions form the
//! segmentation mask.
//!
//! The crate is organised bottom-up:
//!
//! - [`imaging`]: rasters, stain normalization, SLIC, color features, merging
//! - [`graph`]: region adjacency, node features, tissue graph files
//! - [`nn`]: matrices, a small reverse-mode tape, GIN backbone, optimizers
//! - [`heads`]: Gleason label algebra, class weights, losses, masks
//! - [`attribution`]: node attribution maps and pseudo-label synthesis
//! - [`training`]: configuration, checkpoints, the three training phases
//! - [`metrics`]: Dice, weighted F1, quadratic kappa, Brier, NLL, ECE
//! - [`synthetic`], [`manifest`], [`pipeline`]: datasets and orchestration

pub mod attribution;
pub mod error;
pub mod fsutil;
pub mod graph;
pub mod heads;
pub mod imaging;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use graph::{TissueGraph, PatchEncoder, DefaultEncoder};
pub use heads::{GleasonLabel, Pattern};
pub use imaging::{RasterImage, SuperpixelMap};
pub use nn::{Matrix, Model};
pub use training::{Checkpoint, TrainConfig};

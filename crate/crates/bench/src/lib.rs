//! Shared fixtures for the benchmarks.

use tissuegraph::pipeline::{build_graph, GraphBuildParams};
use tissuegraph::synthetic::{generate_image, SyntheticImage, SyntheticSpec};
use tissuegraph::{DefaultEncoder, Model, SuperpixelMap, TissueGraph, TrainConfig};

pub fn sample_image(size: usize) -> SyntheticImage {
    let mut spec = SyntheticSpec::separable(7);
    spec.width = size;
    spec.height = size;
    generate_image(&spec, 0).expect("valid spec")
}

pub fn sample_graph(size: usize) -> (TissueGraph, SuperpixelMap) {
    let s = sample_image(size);
    build_graph(&s.image, Some(&s.mask), Some(s.label), &GraphBuildParams::desk_scale(), &DefaultEncoder)
        .expect("graph builds")
}

pub fn sample_model(graph: &TissueGraph) -> Model {
    let cfg = TrainConfig::default();
    Model::new(cfg.model_config(graph.feature_dim()), cfg.seed).expect("valid config")
}

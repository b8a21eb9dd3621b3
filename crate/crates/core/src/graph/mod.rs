//! Tissue graph construction: region adjacency, node features, and the
//! on-disk graph format.

mod encoder;
mod features;
mod io;
mod rag;
mod tissue;

pub use encoder::{DefaultEncoder, PatchEncoder, DEFAULT_ENCODER_DIM, ENCODER_INPUT_SIZE};
pub use features::{extract_node_features, segment_centroids, FeatureParams, NodeFeatures};
pub use io::{load_embeddings_csv, load_graph, save_graph, GRAPH_FORMAT_VERSION};
pub use rag::build_rag;
pub use tissue::{
    build_tissue_graph, build_tissue_graph_from_embeddings, node_labels_from_mask, TissueGraph,
};

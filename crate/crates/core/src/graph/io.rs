use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tissue::TissueGraph;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::heads::{GleasonLabel, Pattern};
use crate::nn::Matrix;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    version: u32,
    num_nodes: usize,
    feature_dim: usize,
    features: Vec<f64>,
    centroids: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
    node_labels: Vec<i8>,
    image_label: Option<GleasonLabel>,
}

/// Writes the versioned JSON graph file.
pub fn save_graph(graph: &TissueGraph, path: &Path) -> Result<()> {
    graph.validate()?;
    let file = GraphFile {
        version: GRAPH_FORMAT_VERSION,
        num_nodes: graph.num_nodes(),
        feature_dim: graph.feature_dim(),
        features: graph.features.data().to_vec(),
        centroids: graph.centroids.clone(),
        edges: graph.edges.iter().map(|&(a, b)| [a, b]).collect(),
        node_labels: graph
            .node_labels
            .iter()
            .map(|l| l.map_or(-1, |p| p.index() as i8))
            .collect(),
        image_label: graph.image_label,
    };
    fsutil::write_atomic(path, &serde_json::to_vec(&file)?)
}

pub fn load_graph(path: &Path) -> Result<TissueGraph> {
    let text = fsutil::read_to_string(path)?;
    let bad = |detail: String| Error::format("graph", format!("{}: {detail}", path.display()));
    let file: GraphFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.version != GRAPH_FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} is not supported (expected {GRAPH_FORMAT_VERSION})",
            file.version
        )));
    }
    if file.features.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite feature value".into()));
    }
    if file.features.len() != file.num_nodes * file.feature_dim {
        return Err(bad(format!(
            "{} feature values for {} nodes of dimension {}",
            file.features.len(),
            file.num_nodes,
            file.feature_dim
        )));
    }
    let labels = file
        .node_labels
        .iter()
        .map(|&l| match l {
            -1 => Ok(None),
            c if c >= 0 => Pattern::from_index(c as usize).map(Some),
            c => Err(Error::InvalidInput(format!("node label {c}"))),
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| bad(e.to_string()))?;
    let features = Matrix::from_vec(file.num_nodes, file.feature_dim, file.features)?;
    let edges = file.edges.iter().map(|e| (e[0], e[1])).collect();
    TissueGraph::new(features, file.centroids, edges, file.image_label)
        .and_then(|g| g.with_node_labels(labels))
        .and_then(|g| {
            g.validate()?;
            Ok(g)
        })
        .map_err(|e| bad(e.to_string()))
}

/// Reads precomputed node embeddings: CSV rows `segment_id,v0,..,v{d-1}`
/// with an optional header, covering every id in `0..num_segments` once.
pub fn load_embeddings_csv(path: &Path, num_segments: usize) -> Result<Matrix> {
    let bad = |detail: String| Error::format("embeddings", format!("{}: {detail}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; num_segments];
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if i == 0 && record.get(0) == Some("segment_id") {
            continue;
        }
        let id: usize = record
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad(format!("row {}: bad segment id", i + 1)))?;
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad(format!("row {}: non-numeric or non-finite value", i + 1)))?;
        if values.is_empty() || *dim.get_or_insert(values.len()) != values.len() {
            return Err(bad(format!("row {}: inconsistent embedding width", i + 1)));
        }
        let slot = rows
            .get_mut(id)
            .ok_or_else(|| bad(format!("segment id {id} beyond {num_segments} segments")))?;
        if slot.replace(values).is_some() {
            return Err(bad(format!("segment id {id} listed twice")));
        }
    }
    let d = dim.ok_or_else(|| bad("no embedding rows".into()))?;
    let mut data = Vec::with_capacity(num_segments * d);
    for (id, row) in rows.into_iter().enumerate() {
        data.extend(row.ok_or_else(|| bad(format!("segment id {id} missing")))?);
    }
    Matrix::from_vec(num_segments, d, data)
}

use std::collections::BTreeSet;

use super::encoder::PatchEncoder;
use super::features::{extract_node_features, segment_centroids, FeatureParams};
use super::rag::build_rag;
use crate::error::{Error, Result};
use crate::heads::{ClassMask, GleasonLabel, Pattern};
use crate::imaging::{RasterImage, SuperpixelMap};
use crate::nn::{Adjacency, Matrix};

/// Region adjacency graph of one image with node descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueGraph {
    /// `|V| × d` node descriptors.
    pub features: Matrix,
    /// Normalized centroids in `[0, 1]²`, appended to the features at model
    /// input.
    pub centroids: Vec<[f64; 2]>,
    /// Undirected edges `(a, b)` with `a < b`, sorted, each pair once.
    pub edges: Vec<(usize, usize)>,
    /// One entry per node; `None` means unlabelled.
    pub node_labels: Vec<Option<Pattern>>,
    pub image_label: Option<GleasonLabel>,
}

impl TissueGraph {
    /// Validates and canonicalizes edge order.
    pub fn new(
        features: Matrix,
        centroids: Vec<[f64; 2]>,
        edges: Vec<(usize, usize)>,
        image_label: Option<GleasonLabel>,
    ) -> Result<Self> {
        let n = features.rows();
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop on node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) beyond {n} nodes")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) listed twice")));
            }
        }
        let g = Self {
            features,
            centroids,
            edges: seen.into_iter().collect(),
            node_labels: vec![None; n],
            image_label,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_node_labels(mut self, labels: Vec<Option<Pattern>>) -> Result<Self> {
        if labels.len() != self.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.num_nodes()
            )));
        }
        self.node_labels = labels;
        Ok(self)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::InvalidInput("graph has no nodes".into()));
        }
        if self.centroids.len() != n || self.node_labels.len() != n {
            return Err(Error::Shape(format!(
                "{} nodes but {} centroids and {} node labels",
                n,
                self.centroids.len(),
                self.node_labels.len()
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::Numeric("non-finite node feature".into()));
        }
        if self
            .centroids
            .iter()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::InvalidInput("centroid outside [0, 1]".into()));
        }
        let mut prev = None;
        for &(a, b) in &self.edges {
            if a >= b || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) is not canonical")));
            }
            if prev >= Some((a, b)) {
                return Err(Error::InvalidInput("edges are not sorted and unique".into()));
            }
            prev = Some((a, b));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> Result<Adjacency> {
        Adjacency::from_edges(self.num_nodes(), &self.edges)
    }

    /// Node features with the two centroid coordinates appended.
    pub fn model_input(&self) -> Result<Matrix> {
        let c = Matrix::from_vec(
            self.num_nodes(),
            2,
            self.centroids.iter().flatten().copied().collect(),
        )?;
        Matrix::hcat(&[&self.features, &c])
    }

    pub fn has_node_labels(&self) -> bool {
        self.node_labels.iter().any(Option::is_some)
    }
}

/// Region adjacency plus encoded node features for one image.
pub fn build_tissue_graph(
    img: &RasterImage,
    sp: &SuperpixelMap,
    encoder: &dyn PatchEncoder,
    params: &FeatureParams,
    image_label: Option<GleasonLabel>,
) -> Result<TissueGraph> {
    let nf = extract_node_features(img, sp, encoder, params)?;
    TissueGraph::new(nf.features, nf.centroids, build_rag(sp), image_label)
}

/// Like [`build_tissue_graph`] with node features supplied externally, one
/// row per segment id.
pub fn build_tissue_graph_from_embeddings(
    sp: &SuperpixelMap,
    embeddings: Matrix,
    image_label: Option<GleasonLabel>,
) -> Result<TissueGraph> {
    if embeddings.rows() != sp.num_segments() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} segments",
            embeddings.rows(),
            sp.num_segments()
        )));
    }
    TissueGraph::new(embeddings, segment_centroids(sp), build_rag(sp), image_label)
}

/// Ground-truth node labels: the majority mask class of every segment.
pub fn node_labels_from_mask(sp: &SuperpixelMap, mask: &ClassMask) -> Result<Vec<Option<Pattern>>> {
    Ok(mask.segment_majority(sp)?.into_iter().map(Some).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DefaultEncoder;

    fn small_params() -> FeatureParams {
        FeatureParams {
            patch_size: 2,
            patch_stride: 2,
            augment_seed: None,
        }
    }

    #[test]
    fn single_segment_graph() {
        let img = RasterImage::filled(6, 4, [10, 20, 30]).unwrap();
        let sp = SuperpixelMap::single(6, 4);
        let g = build_tissue_graph(&img, &sp, &DefaultEncoder, &small_params(), None).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn two_by_two_grid_graph() {
        let img = RasterImage::from_fn(2, 2, |x, y| [(x * 100) as u8, (y * 100) as u8, 0]).unwrap();
        let sp = SuperpixelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let g = build_tissue_graph(&img, &sp, &DefaultEncoder, &small_params(), None).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(
            g.centroids,
            vec![[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]
        );
        assert_eq!(g.model_input().unwrap().shape(), (4, 66));
    }

    #[test]
    fn rejects_bad_edges() {
        let f = Matrix::zeros(3, 2);
        let c = vec![[0.5, 0.5]; 3];
        assert!(TissueGraph::new(f.clone(), c.clone(), vec![(1, 1)], None).is_err());
        assert!(TissueGraph::new(f.clone(), c.clone(), vec![(0, 3)], None).is_err());
        assert!(TissueGraph::new(f.clone(), c.clone(), vec![(0, 1), (1, 0)], None).is_err());
        let g = TissueGraph::new(f, c, vec![(2, 1), (0, 1)], None).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn embeddings_variant_uses_given_rows() {
        let sp = SuperpixelMap::new(2, 1, vec![0, 1]).unwrap();
        let emb = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let g = build_tissue_graph_from_embeddings(&sp, emb.clone(), None).unwrap();
        assert_eq!(g.features, emb);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert!(build_tissue_graph_from_embeddings(&SuperpixelMap::single(2, 1), emb, None).is_err());
    }
}

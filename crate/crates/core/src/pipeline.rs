//! End-to-end orchestration: dataset graph construction, the weakly
//! supervised schedule, the fully supervised variant, evaluation and mask
//! rendering.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribution_argmax, label_attributions, synthesize_pseudo_labels, PseudoLabelSet};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::{
    build_tissue_graph, load_graph, node_labels_from_mask, save_graph, FeatureParams, PatchEncoder,
    TissueGraph,
};
use crate::heads::{mask_from_node_labels, ClassMask, GleasonLabel, Pattern};
use crate::imaging::{hierarchical_merge, normalize_stain, slic, ChannelStats, RasterImage, SlicParams, SuperpixelMap};
use crate::manifest::{DatasetManifest, Split};
use crate::metrics::{EvalOptions, ImageEvaluation, MetricReport};
use crate::nn::Model;
use crate::training::{
    finetune_joint, predict, train_fully_supervised_nodes, train_graph_phase, train_node_phase, Checkpoint,
    NodeTargets, PhaseOutcome, TrainConfig,
};

/// Settings of the image → graph stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBuildParams {
    pub n_segments: usize,
    pub compactness: f64,
    pub slic_iters: usize,
    /// Merging stops once no adjacent pair is closer than this.
    pub merge_threshold: f64,
    /// Merging stops once this many regions remain.
    pub max_nodes: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub augment_seed: Option<u64>,
    pub stain_reference: Option<ChannelStats>,
}

impl Default for GraphBuildParams {
    fn default() -> Self {
        Self {
            n_segments: 100,
            compactness: 10.0,
            slic_iters: 10,
            merge_threshold: 0.15,
            max_nodes: 60,
            patch_size: 144,
            patch_stride: 144,
            augment_seed: None,
            stain_reference: None,
        }
    }
}

impl GraphBuildParams {
    /// Settings sized for 128 × 128 rasters.
    pub fn desk_scale() -> Self {
        Self {
            n_segments: 100,
            max_nodes: 60,
            patch_size: 12,
            patch_stride: 12,
            ..Self::default()
        }
    }

    fn slic_params(&self) -> SlicParams {
        SlicParams::new(self.n_segments, self.compactness, self.slic_iters)
    }

    fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            patch_size: self.patch_size,
            patch_stride: self.patch_stride,
            augment_seed: self.augment_seed,
        }
    }
}

/// Stain normalization (when a reference is set), SLIC, merging, then
/// the tissue graph. Ground-truth node labels come from `mask` when given.
pub fn build_graph(
    img: &RasterImage,
    mask: Option<&ClassMask>,
    label: Option<GleasonLabel>,
    params: &GraphBuildParams,
    encoder: &dyn PatchEncoder,
) -> Result<(TissueGraph, SuperpixelMap)> {
    let normalized;
    let img = match &params.stain_reference {
        Some(r) => {
            normalized = normalize_stain(img, r)?;
            &normalized
        }
        None => img,
    };
    let over = slic(img, &params.slic_params())?;
    let sp = hierarchical_merge(img, &over, params.merge_threshold, params.max_nodes)?;
    let mut graph = build_tissue_graph(img, &sp, encoder, &params.feature_params(), label)?;
    if let Some(m) = mask {
        graph = graph.with_node_labels(node_labels_from_mask(&sp, m)?)?;
    }
    Ok((graph, sp))
}

/// A built graph with what evaluation needs alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub id: String,
    pub split: Split,
    pub graph: TissueGraph,
    pub superpixels: SuperpixelMap,
    pub truth_mask: Option<ClassMask>,
}

/// Builds every manifest image in parallel; results keep manifest order.
pub fn build_dataset(
    manifest: &DatasetManifest,
    params: &GraphBuildParams,
    encoder: &dyn PatchEncoder,
) -> Result<Vec<GraphSample>> {
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let img = RasterImage::load(&manifest.image_path(row))?;
            let mask = match manifest.mask_path(row) {
                Some(p) => Some(ClassMask::load(&p)?),
                None => None,
            };
            let (graph, superpixels) = build_graph(&img, mask.as_ref(), Some(row.label), params, encoder)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", row.image_path.display())))?;
            Ok(GraphSample {
                id: row.id(),
                split: row.split,
                graph,
                superpixels,
                truth_mask: mask,
            })
        })
        .collect()
}

fn graph_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.graph.json"))
}

fn superpixel_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.sp.png"))
}

/// Writes `<id>.graph.json`, `<id>.sp.png` and an `index.csv` of ids and
/// splits.
pub fn save_dataset(samples: &[GraphSample], dir: &Path) -> Result<()> {
    for s in samples {
        save_graph(&s.graph, &graph_file(dir, &s.id))?;
        s.superpixels.save(&superpixel_file(dir, &s.id))?;
    }
    fsutil::write_atomic_with(&dir.join("index.csv"), |tmp| {
        let mut w = csv::Writer::from_path(tmp)?;
        w.write_record(["id", "split"])?;
        for s in samples {
            w.write_record([s.id.as_str(), s.split.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(tmp, e))
    })
}

/// Reads a graph directory; truth masks are attached from `manifest` when
/// it lists them.
pub fn load_dataset(dir: &Path, manifest: Option<&DatasetManifest>) -> Result<Vec<GraphSample>> {
    let index = dir.join("index.csv");
    let mut reader = csv::Reader::from_path(&index)
        .map_err(|e| Error::format("graph index", format!("{}: {e}", index.display())))?;
    let mut samples = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| Error::format("graph index", format!("{}: {e}", index.display())))?;
        let id = r[0].to_string();
        let split: Split = r[1].parse()?;
        let graph = load_graph(&graph_file(dir, &id))?;
        let superpixels = SuperpixelMap::load(&superpixel_file(dir, &id))?;
        if superpixels.num_segments() != graph.num_nodes() {
            return Err(Error::format(
                "graph",
                format!("{id}: superpixel map has {} segments for {} nodes", superpixels.num_segments(), graph.num_nodes()),
            ));
        }
        let truth_mask = match manifest.and_then(|m| m.rows.iter().find(|row| row.id() == id).map(|row| (m, row))) {
            Some((m, row)) => match m.mask_path(row) {
                Some(p) => Some(ClassMask::load(&p)?),
                None => None,
            },
            None => None,
        };
        samples.push(GraphSample {
            id,
            split,
            graph,
            superpixels,
            truth_mask,
        });
    }
    Ok(samples)
}

pub fn split_graphs(samples: &[GraphSample], split: Split) -> Vec<TissueGraph> {
    samples.iter().filter(|s| s.split == split).map(|s| s.graph.clone()).collect()
}

fn split_samples(samples: &[GraphSample], split: Split) -> Vec<&GraphSample> {
    samples.iter().filter(|s| s.split == split).collect()
}

/// Pseudo labels of every labelled graph from the trained graph heads.
pub fn pseudo_label_graphs(
    model: &Model,
    samples: &[&GraphSample],
    cfg: &TrainConfig,
) -> Result<Vec<(String, PseudoLabelSet)>> {
    samples
        .iter()
        .map(|s| {
            let label = s
                .graph
                .image_label
                .ok_or_else(|| Error::InvalidInput(format!("graph {} has no image label", s.id)))?;
            let (ip, is) = label_attributions(model, &s.graph, &label)?;
            Ok((s.id.clone(), synthesize_pseudo_labels(&ip, &is, &label, cfg.n_percent, cfg.threshold)?))
        })
        .collect()
}

/// Predicted segmentation mask of one image.
pub fn segment(model: &Model, graph: &TissueGraph, sp: &SuperpixelMap) -> Result<ClassMask> {
    let classes = predict(model, graph)?.node_classes;
    mask_from_node_labels(sp, &classes)
}

/// Mask from the raw attribution argmax of the primary head.
pub fn segment_by_attribution(model: &Model, graph: &TissueGraph, sp: &SuperpixelMap) -> Result<ClassMask> {
    mask_from_node_labels(sp, &attribution_argmax(model, graph)?)
}

fn report_with<F>(model: &Model, samples: &[&GraphSample], options: &EvalOptions, mut masks: F) -> Result<MetricReport>
where
    F: FnMut(&GraphSample) -> Result<ClassMask>,
{
    let images = samples
        .iter()
        .map(|s| {
            let p = predict(model, &s.graph)?;
            Ok(ImageEvaluation {
                truth: s
                    .graph
                    .image_label
                    .ok_or_else(|| Error::InvalidInput(format!("graph {} has no image label", s.id)))?,
                probs_primary: p.probs_primary,
                probs_secondary: p.probs_secondary,
                predicted_mask: Some(masks(s)?),
                truth_mask: s.truth_mask.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::compute(&images, options)
}

/// Metrics of the node-head segmentation and graph-head grading.
pub fn evaluate(model: &Model, samples: &[&GraphSample], options: &EvalOptions) -> Result<MetricReport> {
    report_with(model, samples, options, |s| segment(model, &s.graph, &s.superpixels))
}

/// Same report with masks taken from the raw attribution argmax.
pub fn evaluate_attribution_baseline(
    model: &Model,
    samples: &[&GraphSample],
    options: &EvalOptions,
) -> Result<MetricReport> {
    report_with(model, samples, options, |s| segment_by_attribution(model, &s.graph, &s.superpixels))
}

/// Outputs of the weakly supervised schedule.
#[derive(Debug, Clone)]
pub struct WeakRun {
    pub graph_phase: PhaseOutcome,
    pub pseudo_labels: Vec<(String, PseudoLabelSet)>,
    pub node_phase: PhaseOutcome,
    pub finetune: PhaseOutcome,
    pub test_report: MetricReport,
}

fn targets_for(train: &[&GraphSample], sets: &[(String, PseudoLabelSet)]) -> Vec<NodeTargets> {
    train
        .iter()
        .zip(sets)
        .map(|(_, (_, set))| set.assignments.clone())
        .collect()
}

/// Graph phase, pseudo labels, node phase, fine-tuning, then test metrics.
pub fn run_weak_pipeline(samples: &[GraphSample], cfg: &TrainConfig, options: &EvalOptions) -> Result<WeakRun> {
    let train = split_samples(samples, Split::Train);
    let train_graphs: Vec<TissueGraph> = train.iter().map(|s| s.graph.clone()).collect();
    let val_graphs = split_graphs(samples, Split::Val);
    let test = split_samples(samples, Split::Test);

    let graph_phase = train_graph_phase(&train_graphs, &val_graphs, cfg)?;
    let model = graph_phase.checkpoint.model()?;
    let pseudo_labels = pseudo_label_graphs(&model, &train, cfg)?;
    let targets = targets_for(&train, &pseudo_labels);
    let node_phase = train_node_phase(&train_graphs, &targets, &val_graphs, cfg, &graph_phase.checkpoint)?;
    let finetune = finetune_joint(&train_graphs, &targets, &val_graphs, cfg, &node_phase.checkpoint)?;
    let final_model = finetune.checkpoint.model()?;
    let test_report = evaluate(&final_model, &test, options)?;
    Ok(WeakRun {
        graph_phase,
        pseudo_labels,
        node_phase,
        finetune,
        test_report,
    })
}

/// Trains the fully supervised variant and reports on the test split.
pub fn run_supervised(samples: &[GraphSample], cfg: &TrainConfig, options: &EvalOptions) -> Result<(PhaseOutcome, MetricReport)> {
    let train_graphs = split_graphs(samples, Split::Train);
    let val_graphs = split_graphs(samples, Split::Val);
    let outcome = train_fully_supervised_nodes(&train_graphs, &val_graphs, cfg)?;
    let report = evaluate(&outcome.checkpoint.model()?, &split_samples(samples, Split::Test), options)?;
    Ok((outcome, report))
}

/// Writes `best.ckpt` and `metrics.json` into `dir`.
pub fn save_phase(outcome: &PhaseOutcome, dir: &Path) -> Result<()> {
    outcome.checkpoint.save(&dir.join("best.ckpt"))?;
    outcome.history.save(&dir.join("metrics.json"))
}

pub fn load_checkpoint_dir(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(&dir.join("best.ckpt"))
}

/// Overlay colors; benign is left unpainted.
pub fn overlay_color(class: Pattern) -> Option<[u8; 3]> {
    match class {
        Pattern::B => None,
        Pattern::G3 => Some([0, 200, 0]),
        Pattern::G4 => Some([0, 0, 255]),
        Pattern::G5 => Some([255, 0, 0]),
    }
}

/// Blends the class palette over the image at half opacity.
pub fn render_overlay(img: &RasterImage, mask: &ClassMask) -> Result<RasterImage> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::Shape("image and mask sizes differ".into()));
    }
    RasterImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get(x, y);
        match overlay_color(mask.get(x, y)) {
            None => p,
            Some(c) => std::array::from_fn(|k| ((p[k] as u16 + c[k] as u16) / 2) as u8),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_leaves_benign_untouched() {
        let img = RasterImage::filled(2, 1, [100, 100, 100]).unwrap();
        let mask = ClassMask::new(2, 1, vec![0, 3]).unwrap();
        let o = render_overlay(&img, &mask).unwrap();
        assert_eq!(o.get(0, 0), [100, 100, 100]);
        assert_eq!(o.get(1, 0), [177, 50, 50]);
    }
}

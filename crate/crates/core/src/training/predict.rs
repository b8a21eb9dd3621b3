use crate::error::{Error, Result};
use crate::graph::TissueGraph;
use crate::heads::{GleasonLabel, Pattern};
use crate::metrics::weighted_f1;
use crate::nn::{softmax, softmax_argmax, Matrix, Model, Pass, Tape};
use std::rc::Rc;

/// Graph and node predictions for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePrediction {
    pub label: GleasonLabel,
    /// Whether the argmax pair broke the benign rule and was coerced.
    pub coerced: bool,
    pub probs_primary: Vec<f64>,
    pub probs_secondary: Vec<f64>,
    /// `|V| × K` node posteriors.
    pub node_probs: Matrix,
    pub node_classes: Vec<Pattern>,
}

/// One inference pass through the backbone, both graph heads and the node
/// head.
pub fn predict(model: &Model, graph: &TissueGraph) -> Result<ImagePrediction> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, graph, &mut Pass::Inference, true)?;
    let probs_primary = softmax(tape.value(out.logits_primary).data());
    let probs_secondary = softmax(tape.value(out.logits_secondary).data());
    let (label, coerced) = GleasonLabel::decode(
        Pattern::from_index(softmax_argmax(&probs_primary))?,
        Pattern::from_index(softmax_argmax(&probs_secondary))?,
    );
    let z = tape.value(out.node_logits.expect("node head requested"));
    let mut node_probs = Matrix::zeros(z.rows(), z.cols());
    let mut node_classes = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        let p = softmax(z.row(r));
        node_classes.push(Pattern::from_index(softmax_argmax(&p))?);
        node_probs.row_mut(r).copy_from_slice(&p);
    }
    Ok(ImagePrediction {
        label,
        coerced,
        probs_primary,
        probs_secondary,
        node_probs,
        node_classes,
    })
}

/// Decoded image label from the graph heads only.
pub fn predict_label(model: &Model, graph: &TissueGraph) -> Result<GleasonLabel> {
    let p = model.predict_graph(graph)?;
    Ok(GleasonLabel::decode(
        Pattern::from_index(softmax_argmax(&p.probs_primary))?,
        Pattern::from_index(softmax_argmax(&p.probs_secondary))?,
    )
    .0)
}

fn image_label(graph: &TissueGraph) -> Result<GleasonLabel> {
    graph
        .image_label
        .ok_or_else(|| Error::InvalidInput("graph has no image label".into()))
}

/// Gleason-grade weighted F1 of the graph heads on labelled graphs.
pub fn evaluate_wf1(model: &Model, graphs: &[TissueGraph]) -> Result<f64> {
    let mut pred = Vec::with_capacity(graphs.len());
    let mut truth = Vec::with_capacity(graphs.len());
    for g in graphs {
        truth.push(image_label(g)?.grade());
        pred.push(predict_label(model, g)?.grade());
    }
    weighted_f1(&pred, &truth)
}

/// Fraction of labelled nodes whose node-head argmax matches the label.
pub fn node_accuracy(model: &Model, graphs: &[TissueGraph]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for g in graphs {
        if !g.has_node_labels() {
            continue;
        }
        let classes = model.predict_nodes(g)?.classes();
        for (c, l) in classes.iter().zip(&g.node_labels) {
            if let Some(l) = l {
                total += 1;
                hit += (*c == l.index()) as usize;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("no labelled nodes to score".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Inference-mode node embeddings `H^(T)` for every graph.
pub fn embed_all(model: &Model, graphs: &[TissueGraph]) -> Result<Vec<Matrix>> {
    graphs
        .iter()
        .map(|g| {
            let mut tape = Tape::new();
            let adj = Rc::new(g.adjacency()?);
            let (_, h) = model.embed(&mut tape, &g.model_input()?, &adj, &mut Pass::Inference)?;
            Ok(tape.value(h).clone())
        })
        .collect()
}

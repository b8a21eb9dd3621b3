//! Gradient-weighted node attribution on the graph heads and pseudo node
//! label synthesis.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::TissueGraph;
use crate::heads::{GleasonLabel, Pattern, NUM_CLASSES};
use crate::nn::{Matrix, Model, Pass, Tape, Var};

/// Which graph head an attribution is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphHead {
    Primary,
    Secondary,
}

/// Node importance for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub class: Pattern,
    pub scores: Vec<f64>,
}

impl AttributionMap {
    pub fn normalized(&self) -> AttributionMap {
        AttributionMap {
            class: self.class,
            scores: minmax_normalize(&self.scores),
        }
    }
}

/// Attribution of a scalar `head` output with respect to the node
/// embeddings `h`: channel weights are the node-averaged gradients, and each
/// node scores `ReLU(Σ_c α_c h_{v,c})`.
pub fn grad_cam_scores<F>(h: &Matrix, head: F) -> Result<Vec<f64>>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    if h.rows() == 0 {
        return Err(Error::InvalidInput("attribution over an empty graph".into()));
    }
    let mut tape = Tape::new();
    let hv = tape.variable(h.clone());
    let y = head(&mut tape, hv)?;
    let grads = tape.backward(y)?;
    let n = h.rows() as f64;
    let alpha: Vec<f64> = match grads.wrt(hv) {
        Some(g) => g.sum_rows().data().iter().map(|v| v / n).collect(),
        None => vec![0.0; h.cols()],
    };
    Ok((0..h.rows())
        .map(|v| {
            let s: f64 = h.row(v).iter().zip(&alpha).map(|(x, a)| x * a).sum();
            s.max(0.0)
        })
        .collect())
}

/// Raw attribution of class `class` of one graph head on the
/// jumping-knowledge node embeddings.
pub fn graph_grad_cam(
    model: &Model,
    graph: &TissueGraph,
    head: GraphHead,
    class: Pattern,
) -> Result<AttributionMap> {
    let h = model.embeddings(graph)?;
    let scores = grad_cam_scores(&h, |tape, hv| {
        let (_, lp, ls) = model.graph_heads(tape, hv, &mut Pass::Inference)?;
        let logits = match head {
            GraphHead::Primary => lp,
            GraphHead::Secondary => ls,
        };
        tape.element(logits, 0, class.index())
    })?;
    Ok(AttributionMap { class, scores })
}

/// `(s − min) / (max − min)`; a constant input maps to zeros.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| ((s - min) / (max - min)).clamp(0.0, 1.0)).collect()
}

/// Normalized primary-head map for the image's primary pattern and
/// secondary-head map for its secondary pattern.
pub fn label_attributions(
    model: &Model,
    graph: &TissueGraph,
    label: &GleasonLabel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ip = graph_grad_cam(model, graph, GraphHead::Primary, label.primary())?;
    let is = graph_grad_cam(model, graph, GraphHead::Secondary, label.secondary())?;
    Ok((ip.normalized().scores, is.normalized().scores))
}

/// Node-wise argmax over the raw primary-head maps of all classes.
pub fn attribution_argmax(model: &Model, graph: &TissueGraph) -> Result<Vec<Pattern>> {
    let maps = Pattern::ALL
        .iter()
        .map(|&k| graph_grad_cam(model, graph, GraphHead::Primary, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..graph.num_nodes())
        .map(|v| {
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if maps[k].scores[v] > maps[best].scores[v] {
                    best = k;
                }
            }
            Pattern::ALL[best]
        })
        .collect())
}

/// Pseudo node labels of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// One entry per node; `None` leaves the node out of the node loss.
    pub assignments: Vec<Option<Pattern>>,
    /// Normalized score of the assigned class (1 for the benign rule, 0 when
    /// unassigned).
    pub scores: Vec<f64>,
    pub n_percent: f64,
    pub threshold: f64,
}

impl PseudoLabelSet {
    pub fn num_assigned(&self) -> usize {
        self.assignments.iter().flatten().count()
    }

    pub fn count(&self, class: Pattern) -> usize {
        self.assignments.iter().filter(|a| **a == Some(class)).count()
    }
}

/// Largest number of nodes one class may receive: `ceil(n% · |V|)`.
pub fn selection_budget(n_percent: f64, num_nodes: usize) -> usize {
    (n_percent * num_nodes as f64 / 100.0).ceil() as usize
}

fn candidates(scores: &[f64], t: f64, budget: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..scores.len()).filter(|&v| scores[v] >= t).collect();
    c.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    c.truncate(budget);
    c
}

/// Selects, per class, the nodes scoring at least `t`, capped at the
/// `ceil(n% · |V|)` best (ties to the lower node id). A node chosen for both
/// classes keeps the one with the larger score, primary on ties. When the
/// patterns coincide only the primary map is used; a benign label marks
/// every node benign.
pub fn synthesize_pseudo_labels(
    ip: &[f64],
    is: &[f64],
    label: &GleasonLabel,
    n_percent: f64,
    t: f64,
) -> Result<PseudoLabelSet> {
    if !(n_percent > 0.0 && n_percent <= 100.0) {
        return Err(Error::InvalidInput(format!("selection percentage {n_percent} outside (0, 100]")));
    }
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("threshold {t} outside [0, 1)")));
    }
    if ip.len() != is.len() || ip.is_empty() {
        return Err(Error::Shape(format!(
            "attribution maps of {} and {} nodes",
            ip.len(),
            is.len()
        )));
    }
    let n = ip.len();
    let mut set = PseudoLabelSet {
        assignments: vec![None; n],
        scores: vec![0.0; n],
        n_percent,
        threshold: t,
    };
    if label.is_benign() {
        set.assignments = vec![Some(Pattern::B); n];
        set.scores = vec![1.0; n];
        return Ok(set);
    }
    let budget = selection_budget(n_percent, n);
    let (p, s) = (label.primary(), label.secondary());
    for v in candidates(ip, t, budget) {
        set.assignments[v] = Some(p);
        set.scores[v] = ip[v];
    }
    if p != s {
        for v in candidates(is, t, budget) {
            if set.assignments[v].is_none() || is[v] > ip[v] {
                set.assignments[v] = Some(s);
                set.scores[v] = is[v];
            }
        }
    }
    Ok(set)
}

/// Writes `graph_id,node_id,class,score` rows for every assigned node.
pub fn save_pseudo_labels(path: &Path, sets: &[(String, PseudoLabelSet)]) -> Result<()> {
    fsutil::write_atomic_with(path, |tmp| {
        let mut w = csv::Writer::from_path(tmp)?;
        w.write_record(["graph_id", "node_id", "class", "score"])?;
        for (id, set) in sets {
            for (v, a) in set.assignments.iter().enumerate() {
                if let Some(c) = a {
                    w.write_record([id.as_str(), &v.to_string(), c.as_str(), &set.scores[v].to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(tmp, e))
    })
}

/// One pseudo-labelled node read back from a dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelRow {
    pub node_id: usize,
    pub class: Pattern,
    pub score: f64,
}

pub fn load_pseudo_labels(path: &Path) -> Result<BTreeMap<String, Vec<PseudoLabelRow>>> {
    let bad = |detail: String| Error::format("pseudo-labels", format!("{}: {detail}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header != vec!["graph_id", "node_id", "class", "score"] {
        return Err(bad("expected header graph_id,node_id,class,score".into()));
    }
    let mut out: BTreeMap<String, Vec<PseudoLabelRow>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let r = record.map_err(|e| bad(e.to_string()))?;
        let row = PseudoLabelRow {
            node_id: r[1].parse().map_err(|_| bad(format!("row {}: bad node id", i + 2)))?,
            class: r[2].parse().map_err(|e: Error| bad(format!("row {}: {e}", i + 2)))?,
            score: r[3]
                .parse::<f64>()
                .ok()
                .filter(|s| s.is_finite())
                .ok_or_else(|| bad(format!("row {}: bad score", i + 2)))?,
        };
        out.entry(r[0].to_string()).or_default().push(row);
    }
    Ok(out)
}

/// Expands dump rows into a per-node assignment vector.
pub fn assignments_from_rows(rows: &[PseudoLabelRow], num_nodes: usize) -> Result<Vec<Option<Pattern>>> {
    let mut out = vec![None; num_nodes];
    for r in rows {
        let slot = out.get_mut(r.node_id).ok_or_else(|| {
            Error::InvalidInput(format!("pseudo-label for node {} of a {num_nodes}-node graph", r.node_id))
        })?;
        if slot.replace(r.class).is_some() {
            return Err(Error::InvalidInput(format!("node {} pseudo-labelled twice", r.node_id)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Pattern::*;

    fn label(p: Pattern, s: Pattern) -> GleasonLabel {
        GleasonLabel::new(p, s).unwrap()
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[3.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn mean_of_channel_zero_head() {
        let h = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0], vec![0.5, 9.0]]).unwrap();
        let scores = grad_cam_scores(&h, |tape, hv| {
            let m = tape.mean_rows(hv)?;
            tape.element(m, 0, 0)
        })
        .unwrap();
        for v in 0..3 {
            assert!((scores[v] - h.get(v, 0) / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_head_scores_zero() {
        let h = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let scores = grad_cam_scores(&h, |tape, _| Ok(tape.constant(Matrix::row_vector(vec![3.0])))).unwrap();
        assert_eq!(scores, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_head_orders_by_weighted_sum() {
        let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![2.0], vec![0.5]]).unwrap();
        let scores = grad_cam_scores(&h, |tape, hv| {
            let m = tape.mean_rows(hv)?;
            let wv = tape.constant(w.clone());
            let y = tape.matmul(m, wv)?;
            tape.element(y, 0, 0)
        })
        .unwrap();
        // alpha = (2/3, 1/6)
        assert!((scores[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((scores[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((scores[2] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn top_n_above_threshold() {
        let ip = [0.9, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.0];
        let is = [0.1; 10];
        let set = synthesize_pseudo_labels(&ip, &is, &label(G4, G3), 20.0, 0.7).unwrap();
        assert_eq!(set.assignments[0], Some(G4));
        assert_eq!(set.assignments[1], Some(G4));
        assert_eq!(set.num_assigned(), 2);
    }

    #[test]
    fn conflict_goes_to_larger_score() {
        let set = synthesize_pseudo_labels(&[0.8, 0.0], &[0.9, 0.0], &label(G4, G3), 50.0, 0.5).unwrap();
        assert_eq!(set.assignments, vec![Some(G3), None]);
        let set = synthesize_pseudo_labels(&[0.9, 0.0], &[0.9, 0.0], &label(G4, G3), 50.0, 0.5).unwrap();
        assert_eq!(set.assignments, vec![Some(G4), None]);
    }

    #[test]
    fn benign_labels_everything() {
        let set = synthesize_pseudo_labels(&[0.0, 0.3, 1.0], &[1.0, 0.0, 0.2], &GleasonLabel::BENIGN, 5.0, 0.6).unwrap();
        assert_eq!(set.assignments, vec![Some(B); 3]);
    }

    #[test]
    fn equal_patterns_use_primary_map() {
        let set = synthesize_pseudo_labels(&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0], &label(G5, G5), 100.0, 0.5).unwrap();
        assert_eq!(set.assignments, vec![Some(G5), None, None]);
    }

    #[test]
    fn budget_ties_prefer_lower_id() {
        let set = synthesize_pseudo_labels(&[0.9, 0.9, 0.9, 0.0], &[0.0; 4], &label(G3, G3), 50.0, 0.5).unwrap();
        assert_eq!(set.assignments, vec![Some(G3), Some(G3), None, None]);
    }

    #[test]
    fn invalid_parameters() {
        let l = label(G3, G4);
        assert!(synthesize_pseudo_labels(&[0.5], &[0.5], &l, 0.0, 0.5).is_err());
        assert!(synthesize_pseudo_labels(&[0.5], &[0.5], &l, 101.0, 0.5).is_err());
        assert!(synthesize_pseudo_labels(&[0.5], &[0.5], &l, 10.0, 1.0).is_err());
        assert!(synthesize_pseudo_labels(&[0.5], &[0.5, 0.1], &l, 10.0, 0.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set = synthesize_pseudo_labels(&[0.9, 0.1, 0.7], &[0.2, 0.95, 0.1], &label(G4, G3), 50.0, 0.5).unwrap();
        save_pseudo_labels(&path, &[("img_0".to_string(), set.clone())]).unwrap();
        let rows = load_pseudo_labels(&path).unwrap();
        let back = assignments_from_rows(&rows["img_0"], 3).unwrap();
        assert_eq!(back, set.assignments);
    }
}

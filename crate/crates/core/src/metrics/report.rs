use std::path::Path;

use serde::{Deserialize, Serialize};

use super::calibration::{brier_nll, ece_from_bins, reliability_bins, ReliabilityBin};
use super::classification::{confusion_matrix, quadratic_kappa, weighted_f1};
use super::dice::{dice_scores, DiceAggregation, DiceScores};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::heads::{ClassMask, GleasonLabel, Pattern};
use crate::nn::softmax_argmax;

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEvaluation {
    pub truth: GleasonLabel,
    pub probs_primary: Vec<f64>,
    pub probs_secondary: Vec<f64>,
    pub predicted_mask: Option<ClassMask>,
    pub truth_mask: Option<ClassMask>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub ece_bins: usize,
    pub dice: DiceAggregation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ece_bins: 10,
            dice: DiceAggregation::Micro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub labels: Vec<String>,
    /// Rows are ground truth, columns predictions.
    pub counts: Vec<Vec<usize>>,
}

/// Everything reported for one evaluated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_images: usize,
    /// Present only when every image has both masks.
    pub dice: Option<DiceScores>,
    pub dice_aggregation: DiceAggregation,
    pub weighted_f1: f64,
    pub quadratic_kappa: f64,
    pub brier_primary: f64,
    pub brier_secondary: f64,
    pub brier: f64,
    pub nll_primary: f64,
    pub nll_secondary: f64,
    pub nll: f64,
    /// Calibration of the primary head.
    pub ece: f64,
    pub ece_secondary: f64,
    /// Predicted pairs that violated the benign rule and were coerced.
    pub coerced_predictions: usize,
    pub predicted_grades: Vec<String>,
    pub confusion_grade: ConfusionTable,
    pub confusion_isup: ConfusionTable,
    pub confusion_primary: ConfusionTable,
    pub confusion_secondary: ConfusionTable,
    pub reliability: Vec<ReliabilityBin>,
    pub reliability_secondary: Vec<ReliabilityBin>,
}

fn grade_labels(grades: &[String]) -> Vec<String> {
    let mut labels: Vec<String> = GleasonLabel::all().iter().map(|l| l.grade()).collect();
    labels.retain(|l| l == "B" || grades.contains(l));
    labels.sort();
    labels
}

impl MetricReport {
    pub fn compute(images: &[ImageEvaluation], options: &EvalOptions) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidInput("nothing to evaluate".into()));
        }
        let mut predicted = Vec::with_capacity(images.len());
        let mut coerced = 0;
        for im in images {
            let p = Pattern::from_index(softmax_argmax(&im.probs_primary))?;
            let s = Pattern::from_index(softmax_argmax(&im.probs_secondary))?;
            let (label, changed) = GleasonLabel::decode(p, s);
            coerced += changed as usize;
            predicted.push(label);
        }
        let truth: Vec<GleasonLabel> = images.iter().map(|im| im.truth).collect();

        let pred_grades: Vec<String> = predicted.iter().map(|l| l.grade()).collect();
        let true_grades: Vec<String> = truth.iter().map(|l| l.grade()).collect();
        let pred_isup: Vec<u8> = predicted.iter().map(|l| l.isup()).collect();
        let true_isup: Vec<u8> = truth.iter().map(|l| l.isup()).collect();

        let probs_p: Vec<Vec<f64>> = images.iter().map(|im| im.probs_primary.clone()).collect();
        let probs_s: Vec<Vec<f64>> = images.iter().map(|im| im.probs_secondary.clone()).collect();
        let tp: Vec<usize> = truth.iter().map(|l| l.primary().index()).collect();
        let ts: Vec<usize> = truth.iter().map(|l| l.secondary().index()).collect();
        let (brier_p, nll_p) = brier_nll(&probs_p, &tp)?;
        let (brier_s, nll_s) = brier_nll(&probs_s, &ts)?;

        let head_bins = |probs: &[Vec<f64>], targets: &[usize]| -> Result<Vec<ReliabilityBin>> {
            let conf: Vec<f64> = probs
                .iter()
                .map(|p| p.iter().cloned().fold(0.0, f64::max).min(1.0))
                .collect();
            let ok: Vec<bool> = probs
                .iter()
                .zip(targets)
                .map(|(p, &t)| softmax_argmax(p) == t)
                .collect();
            reliability_bins(&conf, &ok, options.ece_bins)
        };
        let reliability = head_bins(&probs_p, &tp)?;
        let reliability_secondary = head_bins(&probs_s, &ts)?;

        let dice = if images.iter().all(|im| im.predicted_mask.is_some() && im.truth_mask.is_some()) {
            let preds: Vec<ClassMask> = images.iter().filter_map(|im| im.predicted_mask.clone()).collect();
            let gts: Vec<ClassMask> = images.iter().filter_map(|im| im.truth_mask.clone()).collect();
            Some(dice_scores(&preds, &gts, options.dice)?)
        } else {
            None
        };

        let mut all_grades = true_grades.clone();
        all_grades.extend(pred_grades.iter().cloned());
        let grade_set = grade_labels(&all_grades);
        let isup_set: Vec<u8> = (0..6).collect();
        let pattern_names: Vec<String> = Pattern::ALL.iter().map(|p| p.to_string()).collect();
        let pp: Vec<Pattern> = predicted.iter().map(|l| l.primary()).collect();
        let ps: Vec<Pattern> = predicted.iter().map(|l| l.secondary()).collect();
        let gp: Vec<Pattern> = truth.iter().map(|l| l.primary()).collect();
        let gs: Vec<Pattern> = truth.iter().map(|l| l.secondary()).collect();

        Ok(Self {
            num_images: images.len(),
            dice,
            dice_aggregation: options.dice,
            weighted_f1: weighted_f1(&pred_grades, &true_grades)?,
            quadratic_kappa: quadratic_kappa(&pred_isup, &true_isup, 6)?,
            brier_primary: brier_p,
            brier_secondary: brier_s,
            brier: 0.5 * (brier_p + brier_s),
            nll_primary: nll_p,
            nll_secondary: nll_s,
            nll: 0.5 * (nll_p + nll_s),
            ece: ece_from_bins(&reliability),
            ece_secondary: ece_from_bins(&reliability_secondary),
            coerced_predictions: coerced,
            confusion_grade: ConfusionTable {
                counts: confusion_matrix(&pred_grades, &true_grades, &grade_set)?,
                labels: grade_set,
            },
            confusion_isup: ConfusionTable {
                labels: isup_set.iter().map(|g| g.to_string()).collect(),
                counts: confusion_matrix(&pred_isup, &true_isup, &isup_set)?,
            },
            confusion_primary: ConfusionTable {
                labels: pattern_names.clone(),
                counts: confusion_matrix(&pp, &gp, &Pattern::ALL)?,
            },
            confusion_secondary: ConfusionTable {
                labels: pattern_names,
                counts: confusion_matrix(&ps, &gs, &Pattern::ALL)?,
            },
            predicted_grades: pred_grades,
            reliability,
            reliability_secondary,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fsutil::write_atomic(path, text.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format("report", format!("{}: {e}", path.display())))
    }

    /// Reliability-diagram bins of both heads as CSV.
    pub fn save_reliability_csv(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic_with(path, |tmp| {
            let mut w = csv::Writer::from_path(tmp)?;
            w.write_record(["head", "bin", "lower", "upper", "count", "mean_confidence", "accuracy"])?;
            for (head, bins) in [("primary", &self.reliability), ("secondary", &self.reliability_secondary)] {
                for (i, b) in bins.iter().enumerate() {
                    w.write_record([
                        head.to_string(),
                        i.to_string(),
                        b.lower.to_string(),
                        b.upper.to_string(),
                        b.count.to_string(),
                        b.mean_confidence().to_string(),
                        b.accuracy().to_string(),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io(tmp, e))
        })
    }
}

//! Segmentation, grading and calibration metrics.

mod calibration;
mod classification;
mod dice;
mod report;

pub use calibration::{brier_nll, ece, ece_from_bins, reliability_bins, ReliabilityBin};
pub use classification::{confusion_matrix, quadratic_kappa, weighted_f1};
pub use dice::{dice_scores, DiceAggregation, DiceCounts, DiceScores};
pub use report::{EvalOptions, ImageEvaluation, MetricReport, ConfusionTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{ClassMask, NUM_CLASSES};

/// Pixel TP/FP/FN counts per class; merging is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DiceCounts {
    pub tp: [u64; NUM_CLASSES],
    pub fp: [u64; NUM_CLASSES],
    pub fn_: [u64; NUM_CLASSES],
}

impl DiceCounts {
    pub fn add(&mut self, pred: &ClassMask, gt: &ClassMask) -> Result<()> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(Error::Shape(format!(
                "predicted mask {}x{} vs ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        for (&p, &g) in pred.classes().iter().zip(gt.classes()) {
            if p == g {
                self.tp[p as usize] += 1;
            } else {
                self.fp[p as usize] += 1;
                self.fn_[g as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DiceCounts) {
        for c in 0..NUM_CLASSES {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
    }

    /// Dice of each class present in prediction or ground truth.
    pub fn per_class(&self) -> [Option<f64>; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let denom = 2 * self.tp[c] + self.fp[c] + self.fn_[c];
            (denom > 0).then(|| 2.0 * self.tp[c] as f64 / denom as f64)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceAggregation {
    /// Counts pooled over all images, then per class.
    #[default]
    Micro,
    /// Per image per class, averaged over the images where the class occurs.
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: [Option<f64>; NUM_CLASSES],
    /// Unweighted mean over the included classes.
    pub average: f64,
}

fn macro_average(per_class: [Option<f64>; NUM_CLASSES]) -> DiceScores {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    DiceScores {
        per_class,
        average: present.iter().sum::<f64>() / present.len() as f64,
    }
}

pub fn dice_scores(preds: &[ClassMask], gts: &[ClassMask], mode: DiceAggregation) -> Result<DiceScores> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predicted masks for {} ground truths", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no masks to score".into()));
    }
    match mode {
        DiceAggregation::Micro => {
            let mut counts = DiceCounts::default();
            for (p, g) in preds.iter().zip(gts) {
                counts.add(p, g)?;
            }
            Ok(macro_average(counts.per_class()))
        }
        DiceAggregation::PerImage => {
            let mut sums = [0.0; NUM_CLASSES];
            let mut n = [0usize; NUM_CLASSES];
            for (p, g) in preds.iter().zip(gts) {
                let mut counts = DiceCounts::default();
                counts.add(p, g)?;
                for (c, d) in counts.per_class().iter().enumerate() {
                    if let Some(d) = d {
                        sums[c] += d;
                        n[c] += 1;
                    }
                }
            }
            Ok(macro_average(std::array::from_fn(|c| (n[c] > 0).then(|| sums[c] / n[c] as f64))))
        }
    }
}

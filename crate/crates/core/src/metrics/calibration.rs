use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Mean squared error against one-hot targets, summed over classes, and the
/// negative log-likelihood of the target class. Probabilities of exactly
/// zero are floored at the smallest positive double.
pub fn brier_nll(probs: &[Vec<f64>], targets: &[usize]) -> Result<(f64, f64)> {
    if probs.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", probs.len(), targets.len())));
    }
    if probs.is_empty() {
        return Err(Error::InvalidInput("Brier score of an empty set".into()));
    }
    let (mut brier, mut nll) = (0.0, 0.0);
    for (p, &t) in probs.iter().zip(targets) {
        if t >= p.len() {
            return Err(Error::InvalidInput(format!("target {t} outside {} classes", p.len())));
        }
        if p.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidInput("negative or non-finite probability".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
        }
        for (c, &v) in p.iter().enumerate() {
            let y = if c == t { 1.0 } else { 0.0 };
            brier += (y - v) * (y - v);
        }
        nll -= p[t].max(f64::MIN_POSITIVE).ln();
    }
    let n = probs.len() as f64;
    Ok((brier / n, nll / n))
}

/// One equal-width confidence bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub confidence_sum: f64,
    pub correct: usize,
}

impl ReliabilityBin {
    /// Mean confidence; 0 for an empty bin.
    pub fn mean_confidence(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.confidence_sum / self.count as f64
        }
    }

    /// Fraction correct; 0 for an empty bin.
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

fn bin_index(c: f64, bins: usize) -> usize {
    (0..bins)
        .find(|&b| c <= (b + 1) as f64 / bins as f64)
        .unwrap_or(bins - 1)
}

/// `B` equal-width bins over `[0, 1]`, half-open `(l, u]` except the first,
/// which is closed `[0, u]`.
pub fn reliability_bins(confidences: &[f64], correct: &[bool], bins: usize) -> Result<Vec<ReliabilityBin>> {
    if confidences.len() != correct.len() {
        return Err(Error::Shape(format!(
            "{} confidences for {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if confidences.is_empty() {
        return Err(Error::InvalidInput("calibration of an empty set".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("at least one bin is required".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidInput(format!("confidence {c} outside [0, 1]")));
    }
    let mut out: Vec<ReliabilityBin> = (0..bins)
        .map(|b| ReliabilityBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count: 0,
            confidence_sum: 0.0,
            correct: 0,
        })
        .collect();
    for (&c, &ok) in confidences.iter().zip(correct) {
        let bin = &mut out[bin_index(c, bins)];
        bin.count += 1;
        bin.confidence_sum += c;
        bin.correct += ok as usize;
    }
    Ok(out)
}

/// `Σ_b (N_b / N) |acc(b) − conf(b)|`.
pub fn ece_from_bins(bins: &[ReliabilityBin]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.accuracy() - b.mean_confidence()).abs())
        .sum()
}

pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    Ok(ece_from_bins(&reliability_bins(confidences, correct, bins)?))
}

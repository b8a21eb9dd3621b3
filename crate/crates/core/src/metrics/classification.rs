use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Per-class F1 weighted by ground-truth support over the classes seen in
/// either sequence. A class with no true positives contributes 0.
pub fn weighted_f1<T: Ord + Clone>(preds: &[T], gts: &[T]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), gts.len())));
    }
    if gts.is_empty() {
        return Err(Error::InvalidInput("weighted F1 of an empty set".into()));
    }
    // (tp, fp, fn, support)
    let mut stats: BTreeMap<&T, [usize; 4]> = BTreeMap::new();
    for (p, g) in preds.iter().zip(gts) {
        stats.entry(g).or_default()[3] += 1;
        if p == g {
            stats.entry(g).or_default()[0] += 1;
        } else {
            stats.entry(p).or_default()[1] += 1;
            stats.entry(g).or_default()[2] += 1;
        }
    }
    let n = gts.len() as f64;
    Ok(stats
        .values()
        .map(|[tp, fp, fn_, support]| {
            let denom = 2 * tp + fp + fn_;
            let f1 = if denom == 0 { 0.0 } else { 2.0 * *tp as f64 / denom as f64 };
            f1 * *support as f64 / n
        })
        .sum())
}

/// Quadratically weighted Cohen's kappa over ordinal grades `0..k`.
pub fn quadratic_kappa(preds: &[u8], gts: &[u8], k: usize) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), gts.len())));
    }
    if gts.is_empty() {
        return Err(Error::InvalidInput("kappa of an empty set".into()));
    }
    if k < 2 {
        return Err(Error::InvalidInput("kappa needs at least two grades".into()));
    }
    if let Some(v) = preds.iter().chain(gts).find(|&&v| v as usize >= k) {
        return Err(Error::InvalidInput(format!("grade {v} outside 0..{k}")));
    }
    let mut observed = vec![0.0; k * k];
    let mut row = vec![0.0; k];
    let mut col = vec![0.0; k];
    for (&p, &g) in preds.iter().zip(gts) {
        observed[g as usize * k + p as usize] += 1.0;
        row[g as usize] += 1.0;
        col[p as usize] += 1.0;
    }
    let n = gts.len() as f64;
    let scale = ((k - 1) * (k - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64).powi(2)) / scale;
            num += w * observed[i * k + j];
            den += w * row[i] * col[j] / n;
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}

/// Counts with rows indexed by ground truth and columns by prediction, in
/// the order of `labels`.
pub fn confusion_matrix<T: PartialEq + std::fmt::Debug>(
    preds: &[T],
    gts: &[T],
    labels: &[T],
) -> Result<Vec<Vec<usize>>> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), gts.len())));
    }
    let index = |v: &T| {
        labels
            .iter()
            .position(|l| l == v)
            .ok_or_else(|| Error::InvalidInput(format!("label {v:?} outside the label set")))
    };
    let mut m = vec![vec![0; labels.len()]; labels.len()];
    for (p, g) in preds.iter().zip(gts) {
        m[index(g)?][index(p)?] += 1;
    }
    Ok(m)
}

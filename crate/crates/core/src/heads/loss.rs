use super::gleason::GleasonLabel;
use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

/// `w_i = ln(Σ_j N_j / N_i)`. A class with no samples gets the largest
/// weight among the classes that have some.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("class weights need at least one labelled sample".into()));
    }
    let total = total as f64;
    let defined: Vec<Option<f64>> = counts
        .iter()
        .map(|&n| (n > 0).then(|| (total / n as f64).ln()))
        .collect();
    let max = defined
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(defined.into_iter().map(|w| w.unwrap_or(max)).collect())
}

/// `-w[t] · ln softmax(logits)[t]`.
pub fn weighted_ce(logits: &[f64], target: usize, weights: &[f64]) -> Result<f64> {
    if target >= logits.len() || weights.len() != logits.len() {
        return Err(Error::Shape(format!(
            "target {target} with {} logits and {} weights",
            logits.len(),
            weights.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(weights[target] * (log_sum - (logits[target] - max)))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `λ·CE(primary) + (1−λ)·CE(secondary)`.
pub fn graph_loss(
    logits_primary: &[f64],
    logits_secondary: &[f64],
    label: &GleasonLabel,
    lambda: f64,
    weights: &[f64],
) -> Result<f64> {
    check_lambda(lambda)?;
    let p = weighted_ce(logits_primary, label.primary().index(), weights)?;
    let s = weighted_ce(logits_secondary, label.secondary().index(), weights)?;
    Ok(lambda * p + (1.0 - lambda) * s)
}

/// Records the graph loss of one graph on a tape.
pub fn graph_loss_on_tape(
    tape: &mut Tape,
    logits_primary: Var,
    logits_secondary: Var,
    label: &GleasonLabel,
    lambda: f64,
    weights: &[f64],
) -> Result<Var> {
    check_lambda(lambda)?;
    let p = tape.weighted_ce(logits_primary, &[Some(label.primary().index())], weights)?;
    let s = tape.weighted_ce(logits_secondary, &[Some(label.secondary().index())], weights)?;
    let p = tape.scale(p, lambda)?;
    let s = tape.scale(s, 1.0 - lambda)?;
    tape.add(p, s)
}

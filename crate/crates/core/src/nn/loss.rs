use super::NnError;

/// Numerically stable softmax followed by cross-entropy against `target`.
///
/// Returns `(loss, probabilities)`; the gradient of the loss with respect to
/// the scores is `probabilities - onehot(target)`.
pub fn softmax_cross_entropy(scores: &[f64], target: usize) -> Result<(f64, Vec<f64>), NnError> {
    if target >= scores.len() {
        return Err(NnError::TargetOutOfRange {
            target,
            classes: scores.len(),
        });
    }
    let probs = softmax(scores);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok((log_z - scores[target], probs))
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

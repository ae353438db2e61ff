//! Categorical cross-entropy on softmax outputs.

use super::NnError;

pub const PROB_CLIP: f32 = 1e-7;

/// Mean `−ln p[label]` with `p` clipped to `[1e-7, 1]`, and the gradient
/// with respect to the pre-softmax logits, `(p − onehot) / N`.
pub fn cross_entropy(probs: &[f32], labels: &[usize], classes: usize) -> Result<(f32, Vec<f32>), NnError> {
    let n = labels.len();
    if probs.len() != n * classes {
        return Err(NnError::ShapeMismatch(format!(
            "{} probabilities for {n} labels of {classes} classes",
            probs.len()
        )));
    }
    let mut total = 0.0f64;
    let mut grad = probs.to_vec();
    let inv_n = 1.0 / n as f32;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(NnError::LabelOutOfRange { index: i, label, classes });
        }
        let p = probs[i * classes + label].clamp(PROB_CLIP, 1.0);
        total -= (p as f64).ln();
        grad[i * classes + label] -= 1.0;
    }
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok(((total / n.max(1) as f64) as f32, grad))
}

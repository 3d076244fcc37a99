use super::TrainerError;

/// Clipped surrogate over a batch of sequences.
///
/// Per sequence `r = exp(sum(new) - sum(old))` and the term is
/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`; the loss is the negated
/// batch mean. Returns the loss and its gradient w.r.t. every step of
/// `new_log_probs`.
pub fn ppo_clipped_loss(
    new_log_probs: &[Vec<f64>],
    old_log_probs: &[Vec<f64>],
    advantages: &[f64],
    clip_epsilon: f64,
) -> Result<(f64, Vec<Vec<f64>>), TrainerError> {
    if new_log_probs.len() != old_log_probs.len() || new_log_probs.len() != advantages.len() {
        return Err(TrainerError::LengthMismatch);
    }
    let n = new_log_probs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(new_log_probs.len());
    for ((new, old), &adv) in new_log_probs.iter().zip(old_log_probs).zip(advantages) {
        if new.len() != old.len() {
            return Err(TrainerError::LengthMismatch);
        }
        let ratio = (new.iter().sum::<f64>() - old.iter().sum::<f64>()).exp();
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
        let (unclipped_term, clipped_term) = (ratio * adv, clipped * adv);
        let binding = clipped_term < unclipped_term;
        loss -= unclipped_term.min(clipped_term);
        // d(r * A)/d new_i = r * A, shared by every step of the sequence
        let g = if binding { 0.0 } else { -ratio * adv / n };
        grads.push(vec![g; new.len()]);
    }
    Ok((loss / n, grads))
}

//! Group-relative advantages and the three training objectives.
//!
//! Every loss returns `(value, gradient)` where the gradient is with respect
//! to the flat parameter vector, and descending the returned loss ascends
//! the corresponding surrogate objective.

use crate::policy::{CompletionBatch, Encoded, PolicyParams};
use crate::render::Image;
use crate::tasks::{TaskKind, TokenSequence};
use crate::{Error, Result};

/// `(r_i - mean) / std` with the population standard deviation.
///
/// Groups whose reward spread is at or below `eps` carry no learning signal
/// and get all-zero advantages.
pub fn grpo_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std <= eps {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// One prompt's sampled group together with what the update needs from the
/// sampling pass.
#[derive(Debug, Clone, Copy)]
pub struct GroupInput<'a> {
    pub task: TaskKind,
    pub batch: &'a CompletionBatch,
    /// Per-completion, per-token log-probabilities recorded at sampling time.
    pub old_logprobs: &'a [Vec<f64>],
    pub advantages: &'a [f64],
}

fn check_group(g: &GroupInput<'_>) -> Result<()> {
    let n = g.batch.completions.len();
    if g.old_logprobs.len() != n || g.advantages.len() != n {
        return Err(Error::Loss(format!(
            "group of {n} completions has {} old log-prob rows and {} advantages",
            g.old_logprobs.len(),
            g.advantages.len()
        )));
    }
    for (i, (c, old)) in g.batch.completions.iter().zip(g.old_logprobs).enumerate() {
        if c.tokens.is_empty() {
            return Err(Error::Loss(format!("completion {i} is empty")));
        }
        if old.len() != c.tokens.len() {
            return Err(Error::Loss(format!("completion {i}: old log-probs do not match its tokens")));
        }
    }
    Ok(())
}

/// The clipped surrogate term and its derivative with respect to `ln ratio`.
fn clipped_term(ratio: f64, adv: f64, eta: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eta, 1.0 + eta) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Whether a token with this ratio and advantage receives gradient.
pub fn is_active(ratio: f64, adv: f64, eta: f64) -> bool {
    clipped_term(ratio, adv, eta).1 != 0.0
}

/// Token-level clipped surrogate, normalized by the group's total token count.
pub fn grpo_loss(
    params: &PolicyParams,
    enc: &Encoded,
    group: GroupInput<'_>,
    eta: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_group(&group)?;
    let total_tokens: usize = group.batch.completions.iter().map(|c| c.tokens.len()).sum();
    let norm = 1.0 / total_tokens as f64;
    let mut fg = params.feature_grad();
    let mut objective = 0.0;
    for ((c, old), &adv) in group.batch.completions.iter().zip(group.old_logprobs).zip(group.advantages) {
        let new = params.token_logprobs(enc, group.task, &c.tokens);
        let mut weights = Vec::with_capacity(new.len());
        for (n, o) in new.iter().zip(old) {
            let (term, dterm) = clipped_term((n - o).exp(), adv, eta);
            objective += term;
            weights.push(-norm * dterm);
        }
        if weights.iter().any(|&w| w != 0.0) {
            params.accumulate_decoder_grad(enc, group.task, &c.tokens, &weights, grad, &mut fg);
        }
    }
    params.finish_feature_grad(enc, &fg, grad);
    Ok(-norm * objective)
}

/// Sequence-level clipped surrogate with the length-normalized ratio
/// `exp((log π_new(c) - log π_old(c)) / |c|)`, averaged over the group.
pub fn gspo_loss(
    params: &PolicyParams,
    enc: &Encoded,
    group: GroupInput<'_>,
    eta: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_group(&group)?;
    let n = group.batch.completions.len() as f64;
    let mut fg = params.feature_grad();
    let mut objective = 0.0;
    for ((c, old), &adv) in group.batch.completions.iter().zip(group.old_logprobs).zip(group.advantages) {
        let len = c.tokens.len() as f64;
        let new: f64 = params.token_logprobs(enc, group.task, &c.tokens).iter().sum();
        let old: f64 = old.iter().sum();
        let (term, dterm) = clipped_term(((new - old) / len).exp(), adv, eta);
        objective += term;
        let w = -dterm / (n * len);
        if w != 0.0 {
            params.accumulate_decoder_grad(enc, group.task, &c.tokens, &vec![w; c.tokens.len()], grad, &mut fg);
        }
    }
    params.finish_feature_grad(enc, &fg, grad);
    Ok(-objective / n)
}

/// Teacher-forced token cross-entropy `-Σ_t log p(y_t | y_<t)`, END included.
/// Adds `scale · ∇loss` into `grad`.
pub fn sft_loss_into(
    params: &PolicyParams,
    enc: &Encoded,
    task: TaskKind,
    target: &TokenSequence,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let ids = target.ids();
    if ids.is_empty() || ids.len() > params.arch.max_len {
        return Err(Error::Loss(format!(
            "target length {} outside 1..={}",
            ids.len(),
            params.arch.max_len
        )));
    }
    let mut fg = params.feature_grad();
    let lps = params.accumulate_decoder_grad(enc, task, &ids, &vec![-scale; ids.len()], grad, &mut fg);
    params.finish_feature_grad(enc, &fg, grad);
    Ok(-lps.iter().sum::<f64>())
}

pub fn sft_loss(
    params: &PolicyParams,
    target: &TokenSequence,
    image: &Image,
    task: TaskKind,
) -> Result<(f64, Vec<f64>)> {
    let enc = params.encode(image)?;
    let mut grad = params.zeros_like();
    let loss = sft_loss_into(params, &enc, task, target, 1.0, &mut grad)?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_group() {
        assert_eq!(grpo_advantages(&[5.0; 4], 1e-6), vec![0.0; 4]);
        assert_eq!(grpo_advantages(&[0.1; 3], 1e-6), vec![0.0; 3]);
    }

    #[test]
    fn three_point_example() {
        let a = grpo_advantages(&[1.0, 0.0, -1.0], 1e-6);
        let s = (1.5f64).sqrt();
        assert!((a[0] - s).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] + s).abs() < 1e-12);
        assert!((a[0] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn clipped_term_branches() {
        let eta = 0.2;
        assert_eq!(clipped_term(1.0, 2.0, eta), (2.0, 2.0));
        assert_eq!(clipped_term(1.5, 2.0, eta).1, 0.0);
        assert!((clipped_term(1.5, 2.0, eta).0 - 2.4).abs() < 1e-12);
        assert_eq!(clipped_term(1.5, -2.0, eta), (-3.0, -3.0));
        assert_eq!(clipped_term(0.5, -2.0, eta).1, 0.0);
        assert_eq!(clipped_term(0.5, 2.0, eta), (1.0, 1.0));
        assert!(!is_active(1.0, 0.0, eta));
    }
}

mod common;

use common::fd::*;
use proptest::prelude::*;
use towerlab::policy::{Completion, CompletionBatch, Encoded, PolicyParams};
use towerlab::tasks::{TaskKind, TokenSequence};
use towerlab::train::loss::is_active;
use towerlab::train::{grpo_advantages, sft_loss};

#[test]
fn logprob_gradient_matches_finite_differences() {
    let p = params(1);
    let img = image(TaskKind::XYSide, 3);
    let tokens = TokenSequence::from_text("-412,600 END").unwrap();
    let (lp, g) = p.logprob_and_grad(&tokens, &img, TaskKind::XYSide).unwrap();
    assert!(lp <= 0.0);
    fd_check(&p, &g, 11, |q| {
        let enc = q.encode(&img).unwrap();
        q.sequence_logprob(&enc, TaskKind::XYSide, &tokens.ids())
    });
}

#[test]
fn sft_gradient_matches_finite_differences() {
    let p = jittered(&params(2), 0.05, 1);
    let img = image(TaskKind::XOnlyTop, 8);
    let target = TokenSequence::from_text("-37 END").unwrap();
    let (loss, g) = sft_loss(&p, &target, &img, TaskKind::XOnlyTop).unwrap();
    assert!(loss > 0.0);
    fd_check(&p, &g, 12, |q| sft_loss(q, &target, &img, TaskKind::XOnlyTop).unwrap().0);
}

#[test]
fn grpo_gradient_matches_finite_differences() {
    let old_p = params(3);
    let p = jittered(&old_p, 0.01, 2);
    let img = image(TaskKind::XOnlySide, 5);
    let (batch, old) = group(&old_p, &img, TaskKind::XOnlySide, 8, 4);
    let adv = random_advantages(8, 5);
    let (_, g) = loss_value(&p, &img, TaskKind::XOnlySide, &batch, &old, &adv, 0.2, false);
    fd_check(&p, &g, 13, |q| loss_value(q, &img, TaskKind::XOnlySide, &batch, &old, &adv, 0.2, false).0);
}

#[test]
fn gspo_gradient_matches_finite_differences() {
    let old_p = params(4);
    let p = jittered(&old_p, 0.01, 3);
    let img = image(TaskKind::XYSide, 6);
    let (batch, old) = group(&old_p, &img, TaskKind::XYSide, 8, 7);
    let adv = random_advantages(8, 8);
    let (_, g) = loss_value(&p, &img, TaskKind::XYSide, &batch, &old, &adv, 0.2, true);
    fd_check(&p, &g, 14, |q| loss_value(q, &img, TaskKind::XYSide, &batch, &old, &adv, 0.2, true).0);
}

/// Ratios far enough from one that a tight clip deactivates some tokens.
#[test]
fn clipped_branch_gradients_match_finite_differences() {
    let old_p = params(5);
    let p = jittered(&old_p, 0.08, 4);
    let task = TaskKind::XOnlyTop;
    let img = image(task, 9);
    let (batch, old) = group(&old_p, &img, task, 8, 10);
    let adv = random_advantages(8, 11);
    let eta = 0.05;
    let enc = p.encode(&img).unwrap();
    let (mut active, mut inactive) = (0, 0);
    for ((c, o), &a) in batch.completions.iter().zip(&old).zip(&adv) {
        for (n, o) in p.token_logprobs(&enc, task, &c.tokens).iter().zip(o) {
            if is_active((n - o).exp(), a, eta) {
                active += 1;
            } else {
                inactive += 1;
            }
        }
    }
    assert!(active > 0 && inactive > 0, "active {active}, inactive {inactive}");
    for gspo in [false, true] {
        let (_, g) = loss_value(&p, &img, task, &batch, &old, &adv, eta, gspo);
        fd_check(&p, &g, 15, |q| loss_value(q, &img, task, &batch, &old, &adv, eta, gspo).0);
    }
}

#[test]
fn ratio_one_identities() {
    let p = params(6);
    let task = TaskKind::XYSide;
    let img = image(task, 2);
    let (batch, old) = group(&p, &img, task, 16, 3);
    let adv = random_advantages(16, 4);
    let lens: Vec<f64> = batch.completions.iter().map(|c| c.tokens.len() as f64).collect();
    let total: f64 = lens.iter().sum();

    let (v, g) = loss_value(&p, &img, task, &batch, &old, &adv, 0.2, false);
    let weighted = adv.iter().zip(&lens).map(|(a, l)| a * l).sum::<f64>() / total;
    assert!((v + weighted).abs() <= 1e-10, "{v} vs {}", -weighted);
    let w: Vec<f64> = adv.iter().map(|a| -a / total).collect();
    let pg = plain_policy_gradient(&p, &img, &batch, &w);
    assert!(max_abs_diff(&g, &pg) <= 1e-10);

    let (v, g) = loss_value(&p, &img, task, &batch, &old, &adv, 0.2, true);
    let mean_adv = adv.iter().sum::<f64>() / adv.len() as f64;
    assert!((v + mean_adv).abs() <= 1e-10);
    let n = adv.len() as f64;
    let w: Vec<f64> = adv.iter().zip(&lens).map(|(a, l)| -a / (n * l)).collect();
    let pg = plain_policy_gradient(&p, &img, &batch, &w);
    assert!(max_abs_diff(&g, &pg) <= 1e-10);
}

fn single_token_batch(p: &PolicyParams, enc: &Encoded, task: TaskKind, ids: &[usize]) -> CompletionBatch {
    CompletionBatch {
        task,
        temperature: 1.0,
        completions: ids
            .iter()
            .map(|&t| Completion {
                tokens: vec![t],
                logprobs: p.token_logprobs(enc, task, &[t]),
                reward: 0.0,
            })
            .collect(),
    }
}

#[test]
fn gspo_equals_grpo_on_single_token_sequences() {
    let old_p = params(7);
    let p = jittered(&old_p, 0.05, 5);
    let task = TaskKind::BinaryStabilityTop;
    let img = image(task, 1);
    let enc = old_p.encode(&img).unwrap();
    let batch = single_token_batch(&old_p, &enc, task, &[0, 3, 10, 11, 14, 14]);
    let old: Vec<Vec<f64>> = batch.completions.iter().map(|c| c.logprobs.clone()).collect();
    let adv = random_advantages(6, 1);
    for eta in [0.01, 0.2, 0.9] {
        let (a, ga) = loss_value(&p, &img, task, &batch, &old, &adv, eta, false);
        let (b, gb) = loss_value(&p, &img, task, &batch, &old, &adv, eta, true);
        assert!((a - b).abs() <= 1e-12);
        assert!(max_abs_diff(&ga, &gb) <= 1e-12);
    }
}

#[test]
fn widening_the_clip_never_deactivates_tokens() {
    let old_p = params(8);
    let task = TaskKind::XOnlySide;
    let img = image(task, 4);
    let (batch, old) = group(&old_p, &img, task, 16, 2);
    let adv = random_advantages(16, 3);
    for jitter_seed in 0..4 {
        let p = jittered(&old_p, 0.1, jitter_seed);
        let enc = p.encode(&img).unwrap();
        let ratios: Vec<(f64, f64)> = batch
            .completions
            .iter()
            .zip(&old)
            .zip(&adv)
            .flat_map(|((c, o), &a)| {
                p.token_logprobs(&enc, task, &c.tokens)
                    .into_iter()
                    .zip(o.clone())
                    .map(move |(n, o)| ((n - o).exp(), a))
            })
            .collect();
        let mut prev = 0;
        for k in 1..20 {
            let eta = k as f64 * 0.05;
            let count = ratios.iter().filter(|(r, a)| is_active(*r, *a, eta)).count();
            assert!(count >= prev, "eta {eta}: {count} < {prev}");
            prev = count;
            // the loss gradient agrees with the count: zero iff nothing is active
            let (_, g) = loss_value(&p, &img, task, &batch, &old, &adv, eta, false);
            assert_eq!(count == 0, g.iter().all(|&v| v == 0.0));
        }
    }
}

proptest! {
    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-5.0f64..20.0, 2..64)) {
        let a = grpo_advantages(&rewards, 1e-6);
        prop_assert_eq!(a.len(), rewards.len());
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() <= 1e-9);
        let rm = rewards.iter().sum::<f64>() / n;
        let rstd = (rewards.iter().map(|r| (r - rm).powi(2)).sum::<f64>() / n).sqrt();
        if rstd > 1e-6 {
            let std = (a.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            prop_assert!((std - 1.0).abs() <= 1e-6);
        } else {
            prop_assert!(a.iter().all(|&v| v == 0.0));
        }
    }
}

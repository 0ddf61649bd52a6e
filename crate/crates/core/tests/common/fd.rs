//! Finite-difference and loss helpers for the policy-gradient tests.

use rand::seq::SliceRandom;
use rand::Rng;
use towerlab::env::Environment;
use towerlab::policy::{Architecture, CompletionBatch, PolicyParams};
use towerlab::render::Image;
use towerlab::tasks::TaskKind;
use towerlab::train::{grpo_advantages, grpo_loss, gspo_loss, GroupInput};

pub const H: f64 = 1e-5;
pub const N_COORDS: usize = 64;

pub fn params(seed: u64) -> PolicyParams {
    PolicyParams::init(Architecture::default(), seed).unwrap()
}

pub fn image(task: TaskKind, seed: u64) -> Image {
    Environment::default().instance(task, seed).unwrap().1
}

/// Copy of `p` with every value jittered by up to `scale`.
pub fn jittered(p: &PolicyParams, scale: f64, seed: u64) -> PolicyParams {
    let mut rng = towerlab::seed::rng(seed);
    let values = p.values.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
    PolicyParams::from_values(p.arch, values).unwrap()
}

/// 64 coordinates: most drawn where the analytic gradient is non-negligible,
/// the rest anywhere.
pub fn coords(grad: &[f64], seed: u64) -> Vec<usize> {
    let mut rng = towerlab::seed::rng(seed);
    let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut live: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-4 * max).collect();
    live.shuffle(&mut rng);
    let mut out: Vec<usize> = live.into_iter().take(N_COORDS - 8).collect();
    out.extend((0..8).map(|_| rng.gen_range(0..grad.len())));
    out
}

pub fn fd_check(p: &PolicyParams, grad: &[f64], seed: u64, f: impl Fn(&PolicyParams) -> f64) {
    let ids = coords(grad, seed);
    assert_eq!(ids.len(), N_COORDS);
    let mut worst = (0.0, 0);
    for &i in &ids {
        let mut plus = p.clone();
        plus.values[i] += H;
        let mut minus = p.clone();
        minus.values[i] -= H;
        let fd = (f(&plus) - f(&minus)) / (2.0 * H);
        let e = super::rel_err(fd, grad[i]);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    assert!(
        worst.0 <= 1e-4,
        "coordinate {} ({:?}): relative error {:.3e}",
        worst.1,
        p.layout.tensor_of(worst.1),
        worst.0
    );
}

/// A sampled group with old log-probabilities from `sampler`.
pub fn group(sampler: &PolicyParams, img: &Image, task: TaskKind, n: usize, seed: u64) -> (CompletionBatch, Vec<Vec<f64>>) {
    let batch = sampler.sample_completions(img, task, n, 1.0, seed).unwrap();
    let old = batch.completions.iter().map(|c| c.logprobs.clone()).collect();
    (batch, old)
}

pub fn random_advantages(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = towerlab::seed::rng(seed);
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..20.0)).collect();
    grpo_advantages(&r, 1e-6)
}

pub fn loss_value(
    p: &PolicyParams,
    img: &Image,
    task: TaskKind,
    batch: &CompletionBatch,
    old: &[Vec<f64>],
    adv: &[f64],
    eta: f64,
    gspo: bool,
) -> (f64, Vec<f64>) {
    let enc = p.encode(img).unwrap();
    let mut g = p.zeros_like();
    let input = GroupInput {
        task,
        batch,
        old_logprobs: old,
        advantages: adv,
    };
    let v = if gspo {
        gspo_loss(p, &enc, input, eta, &mut g).unwrap()
    } else {
        grpo_loss(p, &enc, input, eta, &mut g).unwrap()
    };
    (v, g)
}

pub fn plain_policy_gradient(p: &PolicyParams, img: &Image, batch: &CompletionBatch, weights: &[f64]) -> Vec<f64> {
    let mut g = p.zeros_like();
    for (c, &w) in batch.completions.iter().zip(weights) {
        let (_, gi) = p.logprob_and_grad(&c.sequence(), img, batch.task).unwrap();
        for (a, b) in g.iter_mut().zip(gi) {
            *a += w * b;
        }
    }
    g
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}


//! Compact image-conditioned autoregressive token policy.
//!
//! Encoder: the 256×256 RGB image is average-pooled to 32×32, cut into 4×4
//! patches, each patch is embedded by a shared affine map with `tanh`, and the
//! concatenated patch embeddings pass through two `tanh` layers of width 128.
//!
//! Decoder: at position `t` the input is the image features, a task
//! embedding, a position embedding and the sum of position-specific
//! embeddings of every earlier token. Two `tanh` layers of width 128 feed a
//! linear head over the answer vocabulary.
//!
//! All parameters live in one flat `Vec<f64>` so optimizers, checkpoints and
//! finite-difference checks can treat them uniformly. Gradients are computed
//! by hand-written reverse-mode passes.

mod checkpoint;
pub mod linalg;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::Checkpoint;

use crate::render::Image;
use crate::seed;
use crate::tasks::{TaskKind, Token, TokenSequence, VOCAB_SIZE};
use crate::{Error, Result};
use linalg::*;

pub const N_TASKS: usize = 4;
const END_ID: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Side length of the pooled image fed to the patcher.
    pub pooled_size: usize,
    /// Patch side length, in pooled pixels.
    pub patch_size: usize,
    pub patch_dim: usize,
    pub enc_hidden: usize,
    pub embed_dim: usize,
    pub prefix_dim: usize,
    pub dec_hidden: usize,
    /// Maximum completion length including END.
    pub max_len: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            pooled_size: 32,
            patch_size: 4,
            patch_dim: 16,
            enc_hidden: 128,
            embed_dim: 16,
            prefix_dim: 32,
            dec_hidden: 128,
            max_len: 10,
        }
    }
}

/// Named parameter tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    PatchW,
    PatchB,
    Enc1W,
    Enc1B,
    Enc2W,
    Enc2B,
    TaskEmb,
    PosEmb,
    PrefixEmb,
    Dec1W,
    Dec1B,
    Dec2W,
    Dec2B,
    HeadW,
    HeadB,
}

impl Tensor {
    pub const ALL: [Tensor; 15] = [
        Tensor::PatchW,
        Tensor::PatchB,
        Tensor::Enc1W,
        Tensor::Enc1B,
        Tensor::Enc2W,
        Tensor::Enc2B,
        Tensor::TaskEmb,
        Tensor::PosEmb,
        Tensor::PrefixEmb,
        Tensor::Dec1W,
        Tensor::Dec1B,
        Tensor::Dec2W,
        Tensor::Dec2B,
        Tensor::HeadW,
        Tensor::HeadB,
    ];

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            Tensor::PatchB | Tensor::Enc1B | Tensor::Enc2B | Tensor::Dec1B | Tensor::Dec2B | Tensor::HeadB
        )
    }

    pub fn is_embedding(self) -> bool {
        matches!(self, Tensor::TaskEmb | Tensor::PosEmb | Tensor::PrefixEmb)
    }

    pub fn is_encoder(self) -> bool {
        matches!(
            self,
            Tensor::PatchW | Tensor::PatchB | Tensor::Enc1W | Tensor::Enc1B | Tensor::Enc2W | Tensor::Enc2B
        )
    }
}

impl Architecture {
    pub fn n_patches(&self) -> usize {
        (self.pooled_size / self.patch_size).pow(2)
    }

    pub fn patch_in(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn dec_in(&self) -> usize {
        self.enc_hidden + 2 * self.embed_dim + self.prefix_dim
    }

    /// `(rows, cols)` of a tensor; biases and embeddings rows are the leading axis.
    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        match t {
            Tensor::PatchW => (self.patch_dim, self.patch_in()),
            Tensor::PatchB => (self.patch_dim, 1),
            Tensor::Enc1W => (self.enc_hidden, self.n_patches() * self.patch_dim),
            Tensor::Enc1B => (self.enc_hidden, 1),
            Tensor::Enc2W => (self.enc_hidden, self.enc_hidden),
            Tensor::Enc2B => (self.enc_hidden, 1),
            Tensor::TaskEmb => (N_TASKS, self.embed_dim),
            Tensor::PosEmb => (self.max_len, self.embed_dim),
            Tensor::PrefixEmb => (self.max_len * VOCAB_SIZE, self.prefix_dim),
            Tensor::Dec1W => (self.dec_hidden, self.dec_in()),
            Tensor::Dec1B => (self.dec_hidden, 1),
            Tensor::Dec2W => (self.dec_hidden, self.dec_hidden),
            Tensor::Dec2B => (self.dec_hidden, 1),
            Tensor::HeadW => (VOCAB_SIZE, self.dec_hidden),
            Tensor::HeadB => (VOCAB_SIZE, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pooled_size == 0 || self.patch_size == 0 || self.pooled_size % self.patch_size != 0 {
            return Err(Error::Config("pooled_size must be a positive multiple of patch_size".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if self.param_count() >= 1_000_000 {
            return Err(Error::Config(format!(
                "architecture has {} parameters; limit is 10^6",
                self.param_count()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Tensor::ALL
            .iter()
            .map(|&t| {
                let (r, c) = self.shape(t);
                r * c
            })
            .sum()
    }

    /// Stable identifier of the layout; checkpoints refuse to load across a mismatch.
    pub fn hash(&self) -> u64 {
        let desc = format!(
            "towerlab-policy/tanh-mlp/v1;vocab={VOCAB_SIZE};tasks={N_TASKS};pooled={};patch={};patch_dim={};enc={};emb={};prefix={};dec={};max_len={}",
            self.pooled_size,
            self.patch_size,
            self.patch_dim,
            self.enc_hidden,
            self.embed_dim,
            self.prefix_dim,
            self.dec_hidden,
            self.max_len
        );
        let d = Sha256::digest(desc.as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("sha256 yields 32 bytes"))
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    offsets: [usize; 16],
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut offsets = [0usize; 16];
        for (i, &t) in Tensor::ALL.iter().enumerate() {
            let (r, c) = arch.shape(t);
            offsets[i + 1] = offsets[i] + r * c;
        }
        Layout { offsets }
    }

    pub fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let i = t as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn len(&self) -> usize {
        self.offsets[15]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Which tensor a flat index belongs to.
    pub fn tensor_of(&self, index: usize) -> Tensor {
        let i = self.offsets[1..].iter().position(|&end| index < end).unwrap_or(14);
        Tensor::ALL[i]
    }
}

/// All trainable tensors of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: Architecture,
    pub layout: Layout,
    pub values: Vec<f64>,
}

/// Per-layer encoder activations (post-nonlinearity) for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    /// Layer 0: patch embeddings; 1 and 2: hidden layers.
    pub layers: Vec<Vec<f64>>,
}

/// Cached encoder pass for one image.
#[derive(Debug, Clone)]
pub struct Encoded {
    patch_inputs: Vec<f64>,
    patch_act: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    /// Decoder first-layer pre-activation contribution of the features plus bias.
    feat_proj: Vec<f64>,
}

impl Encoded {
    pub fn features(&self) -> &[f64] {
        &self.h2
    }

    pub fn trace(&self) -> ActivationTrace {
        ActivationTrace {
            layers: vec![self.patch_act.clone(), self.h1.clone(), self.h2.clone()],
        }
    }
}

struct StepCache {
    rest: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    logits: Vec<f64>,
}

/// One sampled completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub tokens: Vec<usize>,
    /// Per-token log-probabilities under the sampling distribution.
    pub logprobs: Vec<f64>,
    pub reward: f64,
}

impl Completion {
    pub fn sequence(&self) -> TokenSequence {
        TokenSequence::from_ids(&self.tokens).expect("sampled ids are in the vocabulary")
    }

    pub fn logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    pub fn is_terminated(&self) -> bool {
        self.tokens.last() == Some(&END_ID)
    }
}

/// The group of completions sampled for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionBatch {
    pub task: TaskKind,
    pub temperature: f64,
    pub completions: Vec<Completion>,
}

impl CompletionBatch {
    pub fn rewards(&self) -> Vec<f64> {
        self.completions.iter().map(|c| c.reward).collect()
    }
}

/// Accumulates the decoder's first-layer gradient flowing into the image
/// features for one encoded image, so the encoder is back-propagated once.
pub struct FeatureGrad {
    dz1_sum: Vec<f64>,
}

impl PolicyParams {
    /// Weights ~ N(0, 1/fan_in), biases zero. Embedding tables have fan-in 1.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut values = vec![0.0; layout.len()];
        let mut rng = seed::rng(seed::derive(seed, &[0x696e6974]));
        for t in Tensor::ALL {
            if t.is_bias() {
                continue;
            }
            let (_, cols) = arch.shape(t);
            let fan_in = if t.is_embedding() { 1 } else { cols };
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for v in &mut values[layout.range(t)] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(PolicyParams { arch, layout, values })
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if values.len() != layout.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(PolicyParams { arch, layout, values })
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.values[self.layout.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.layout.range(t);
        &mut self.values[r]
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn pool_and_patch(&self, image: &Image) -> Result<Vec<f64>> {
        let a = &self.arch;
        if image.width != image.height || image.width % a.pooled_size != 0 {
            return Err(Error::Render(format!(
                "encoder expects a square image whose side is a multiple of {}, got {}x{}",
                a.pooled_size, image.width, image.height
            )));
        }
        let f = image.width / a.pooled_size;
        let p = a.pooled_size;
        let mut pooled = vec![0.0; p * p * 3];
        let norm = 1.0 / (255.0 * (f * f) as f64);
        for r in 0..image.height {
            let pr = r / f;
            let row = &image.pixels[r * image.width * 3..(r + 1) * image.width * 3];
            for (c, px) in row.chunks_exact(3).enumerate() {
                let base = (pr * p + c / f) * 3;
                pooled[base] += px[0] as f64;
                pooled[base + 1] += px[1] as f64;
                pooled[base + 2] += px[2] as f64;
            }
        }
        for v in &mut pooled {
            *v = *v * norm - 0.5;
        }
        let ps = a.patch_size;
        let grid = p / ps;
        let mut out = Vec::with_capacity(a.n_patches() * a.patch_in());
        for gr in 0..grid {
            for gc in 0..grid {
                for dy in 0..ps {
                    let row = gr * ps + dy;
                    let start = (row * p + gc * ps) * 3;
                    out.extend_from_slice(&pooled[start..start + ps * 3]);
                }
            }
        }
        Ok(out)
    }

    /// Encode an image; deterministic in `(image, params)`.
    pub fn encode(&self, image: &Image) -> Result<Encoded> {
        let a = &self.arch;
        let patch_inputs = self.pool_and_patch(image)?;
        let (pw, pb) = (self.tensor(Tensor::PatchW), self.tensor(Tensor::PatchB));
        let mut patch_act = vec![0.0; a.n_patches() * a.patch_dim];
        for (inp, out) in patch_inputs
            .chunks_exact(a.patch_in())
            .zip(patch_act.chunks_exact_mut(a.patch_dim))
        {
            affine(pw, pb, inp, out);
        }
        tanh_inplace(&mut patch_act);
        let mut h1 = vec![0.0; a.enc_hidden];
        affine(self.tensor(Tensor::Enc1W), self.tensor(Tensor::Enc1B), &patch_act, &mut h1);
        tanh_inplace(&mut h1);
        let mut h2 = vec![0.0; a.enc_hidden];
        affine(self.tensor(Tensor::Enc2W), self.tensor(Tensor::Enc2B), &h1, &mut h2);
        tanh_inplace(&mut h2);
        let mut feat_proj = self.tensor(Tensor::Dec1B).to_vec();
        add_block_matvec(self.tensor(Tensor::Dec1W), a.dec_in(), 0, &h2, &mut feat_proj);
        Ok(Encoded {
            patch_inputs,
            patch_act,
            h1,
            h2,
            feat_proj,
        })
    }

    fn step(&self, enc: &Encoded, task: TaskKind, prefix: &[usize]) -> StepCache {
        let a = &self.arch;
        let (e, pdim) = (a.embed_dim, a.prefix_dim);
        let t = prefix.len();
        debug_assert!(t < a.max_len);
        let mut rest = vec![0.0; 2 * e + pdim];
        rest[..e].copy_from_slice(&self.tensor(Tensor::TaskEmb)[task.index() * e..(task.index() + 1) * e]);
        rest[e..2 * e].copy_from_slice(&self.tensor(Tensor::PosEmb)[t * e..(t + 1) * e]);
        let pe = self.tensor(Tensor::PrefixEmb);
        for (s, &tok) in prefix.iter().enumerate() {
            let row = s * VOCAB_SIZE + tok;
            axpy(1.0, &pe[row * pdim..(row + 1) * pdim], &mut rest[2 * e..]);
        }
        let mut g1 = enc.feat_proj.clone();
        add_block_matvec(self.tensor(Tensor::Dec1W), a.dec_in(), a.enc_hidden, &rest, &mut g1);
        tanh_inplace(&mut g1);
        let mut g2 = vec![0.0; a.dec_hidden];
        affine(self.tensor(Tensor::Dec2W), self.tensor(Tensor::Dec2B), &g1, &mut g2);
        tanh_inplace(&mut g2);
        let mut logits = vec![0.0; VOCAB_SIZE];
        affine(self.tensor(Tensor::HeadW), self.tensor(Tensor::HeadB), &g2, &mut logits);
        StepCache { rest, g1, g2, logits }
    }

    /// Raw next-token logits after `prefix`.
    pub fn next_token_logits(&self, enc: &Encoded, task: TaskKind, prefix: &[usize]) -> Vec<f64> {
        self.step(enc, task, prefix).logits
    }

    /// Next-token probabilities at temperature 1.
    pub fn next_token_distribution(&self, enc: &Encoded, task: TaskKind, prefix: &[usize]) -> Vec<f64> {
        log_softmax(&self.next_token_logits(enc, task, prefix))
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    /// Draw one completion at `temperature`, recording exact log-probabilities
    /// under the tempered sampling distribution.
    pub fn sample(&self, enc: &Encoded, task: TaskKind, temperature: f64, rng: &mut impl Rng) -> Completion {
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        while tokens.len() < self.arch.max_len {
            let logits = self.step(enc, task, &tokens).logits;
            let lp = if temperature == 1.0 {
                log_softmax(&logits)
            } else {
                log_softmax(&logits.iter().map(|z| z / temperature).collect::<Vec<_>>())
            };
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut pick = None;
            for (i, l) in lp.iter().enumerate() {
                cum += l.exp();
                if u < cum {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave u above the final cumulative sum
            let pick = pick.unwrap_or_else(|| argmax(&lp));
            tokens.push(pick);
            logprobs.push(lp[pick]);
            if pick == END_ID {
                break;
            }
        }
        Completion {
            tokens,
            logprobs,
            reward: 0.0,
        }
    }

    /// `n` i.i.d. completions for one image, reproducible from `seed`.
    pub fn sample_completions(
        &self,
        image: &Image,
        task: TaskKind,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<CompletionBatch> {
        if n < 2 {
            return Err(Error::Config("group size must be at least 2".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let enc = self.encode(image)?;
        Ok(self.sample_group(&enc, task, n, temperature, seed))
    }

    pub fn sample_group(&self, enc: &Encoded, task: TaskKind, n: usize, temperature: f64, seed: u64) -> CompletionBatch {
        let mut rng = seed::rng(seed);
        let completions = (0..n).map(|_| self.sample(enc, task, temperature, &mut rng)).collect();
        CompletionBatch {
            task,
            temperature,
            completions,
        }
    }

    /// Greedy decode (argmax at every step).
    pub fn greedy(&self, enc: &Encoded, task: TaskKind) -> TokenSequence {
        let mut tokens = Vec::new();
        while tokens.len() < self.arch.max_len {
            let pick = argmax(&self.step(enc, task, &tokens).logits);
            tokens.push(pick);
            if pick == END_ID {
                break;
            }
        }
        TokenSequence::from_ids(&tokens).expect("argmax ids are in the vocabulary")
    }

    /// Per-token log-probabilities of `tokens` at temperature 1 (teacher forcing).
    pub fn token_logprobs(&self, enc: &Encoded, task: TaskKind, tokens: &[usize]) -> Vec<f64> {
        (0..tokens.len().min(self.arch.max_len))
            .map(|t| log_softmax(&self.step(enc, task, &tokens[..t]).logits)[tokens[t]])
            .collect()
    }

    pub fn sequence_logprob(&self, enc: &Encoded, task: TaskKind, tokens: &[usize]) -> f64 {
        self.token_logprobs(enc, task, tokens).iter().sum()
    }

    pub fn feature_grad(&self) -> FeatureGrad {
        FeatureGrad {
            dz1_sum: vec![0.0; self.arch.dec_hidden],
        }
    }

    /// Add `Σ_t weights[t] · ∇ log π(tokens[t] | tokens[<t])` for the decoder
    /// into `grad`, and the part flowing into the image features into `fg`.
    /// Returns the per-token log-probabilities.
    pub fn accumulate_decoder_grad(
        &self,
        enc: &Encoded,
        task: TaskKind,
        tokens: &[usize],
        weights: &[f64],
        grad: &mut [f64],
        fg: &mut FeatureGrad,
    ) -> Vec<f64> {
        let a = &self.arch;
        let (e, pdim, h) = (a.embed_dim, a.prefix_dim, a.enc_hidden);
        let stride = a.dec_in();
        let l = &self.layout;
        let mut logps = Vec::with_capacity(tokens.len());
        for (t, (&tok, &w)) in tokens.iter().zip(weights).enumerate() {
            let c = self.step(enc, task, &tokens[..t]);
            let lp = log_softmax(&c.logits);
            logps.push(lp[tok]);
            if w == 0.0 {
                continue;
            }
            let mut dlogits: Vec<f64> = lp.iter().map(|v| -w * v.exp()).collect();
            dlogits[tok] += w;

            axpy(1.0, &dlogits, &mut grad[l.range(Tensor::HeadB)]);
            add_block_outer(&mut grad[l.range(Tensor::HeadW)], a.dec_hidden, 0, &dlogits, &c.g2);
            let mut dz2 = vec![0.0; a.dec_hidden];
            add_block_matvec_t(self.tensor(Tensor::HeadW), a.dec_hidden, 0, &dlogits, &mut dz2);
            tanh_backward(&c.g2, &mut dz2);

            axpy(1.0, &dz2, &mut grad[l.range(Tensor::Dec2B)]);
            add_block_outer(&mut grad[l.range(Tensor::Dec2W)], a.dec_hidden, 0, &dz2, &c.g1);
            let mut dz1 = vec![0.0; a.dec_hidden];
            add_block_matvec_t(self.tensor(Tensor::Dec2W), a.dec_hidden, 0, &dz2, &mut dz1);
            tanh_backward(&c.g1, &mut dz1);

            axpy(1.0, &dz1, &mut fg.dz1_sum);
            add_block_outer(&mut grad[l.range(Tensor::Dec1W)], stride, h, &dz1, &c.rest);
            let mut drest = vec![0.0; 2 * e + pdim];
            add_block_matvec_t(self.tensor(Tensor::Dec1W), stride, h, &dz1, &mut drest);

            let ti = task.index();
            axpy(1.0, &drest[..e], &mut grad[l.range(Tensor::TaskEmb)][ti * e..(ti + 1) * e]);
            axpy(1.0, &drest[e..2 * e], &mut grad[l.range(Tensor::PosEmb)][t * e..(t + 1) * e]);
            let pe = &mut grad[l.range(Tensor::PrefixEmb)];
            for (s, &ptok) in tokens[..t].iter().enumerate() {
                let row = s * VOCAB_SIZE + ptok;
                axpy(1.0, &drest[2 * e..], &mut pe[row * pdim..(row + 1) * pdim]);
            }
        }
        logps
    }

    /// Back-propagate the accumulated feature gradient through the decoder's
    /// feature columns and the encoder.
    pub fn finish_feature_grad(&self, enc: &Encoded, fg: &FeatureGrad, grad: &mut [f64]) {
        let a = &self.arch;
        let l = &self.layout;
        let stride = a.dec_in();
        if fg.dz1_sum.iter().all(|&v| v == 0.0) {
            return;
        }
        axpy(1.0, &fg.dz1_sum, &mut grad[l.range(Tensor::Dec1B)]);
        add_block_outer(&mut grad[l.range(Tensor::Dec1W)], stride, 0, &fg.dz1_sum, &enc.h2);
        let mut dh2 = vec![0.0; a.enc_hidden];
        add_block_matvec_t(self.tensor(Tensor::Dec1W), stride, 0, &fg.dz1_sum, &mut dh2);
        tanh_backward(&enc.h2, &mut dh2);

        axpy(1.0, &dh2, &mut grad[l.range(Tensor::Enc2B)]);
        add_block_outer(&mut grad[l.range(Tensor::Enc2W)], a.enc_hidden, 0, &dh2, &enc.h1);
        let mut dh1 = vec![0.0; a.enc_hidden];
        add_block_matvec_t(self.tensor(Tensor::Enc2W), a.enc_hidden, 0, &dh2, &mut dh1);
        tanh_backward(&enc.h1, &mut dh1);

        let n_flat = a.n_patches() * a.patch_dim;
        axpy(1.0, &dh1, &mut grad[l.range(Tensor::Enc1B)]);
        add_block_outer(&mut grad[l.range(Tensor::Enc1W)], n_flat, 0, &dh1, &enc.patch_act);
        let mut dpatch = vec![0.0; n_flat];
        add_block_matvec_t(self.tensor(Tensor::Enc1W), n_flat, 0, &dh1, &mut dpatch);
        tanh_backward(&enc.patch_act, &mut dpatch);

        let pin = a.patch_in();
        for (dz, inp) in dpatch
            .chunks_exact(a.patch_dim)
            .zip(enc.patch_inputs.chunks_exact(pin))
        {
            axpy(1.0, dz, &mut grad[l.range(Tensor::PatchB)]);
            add_block_outer(&mut grad[l.range(Tensor::PatchW)], pin, 0, dz, inp);
        }
    }

    /// Exact sequence log-probability and its gradient.
    pub fn logprob_and_grad(&self, tokens: &TokenSequence, image: &Image, task: TaskKind) -> Result<(f64, Vec<f64>)> {
        let enc = self.encode(image)?;
        let ids = tokens.ids();
        if ids.len() > self.arch.max_len {
            return Err(Error::Config(format!(
                "sequence of {} tokens exceeds max_len {}",
                ids.len(),
                self.arch.max_len
            )));
        }
        let mut grad = self.zeros_like();
        let mut fg = self.feature_grad();
        let lps = self.accumulate_decoder_grad(&enc, task, &ids, &vec![1.0; ids.len()], &mut grad, &mut fg);
        self.finish_feature_grad(&enc, &fg, &mut grad);
        Ok((lps.iter().sum(), grad))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Convenience for turning token ids into text.
pub fn ids_to_text(ids: &[usize]) -> String {
    ids.iter()
        .filter_map(|&i| Token::from_id(i))
        .map(|t| t.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{rasterize, CameraConfig};
    use crate::world::{generate_top_block_scene, WorldConfig};

    fn image(seed: u64) -> Image {
        rasterize(&generate_top_block_scene(seed, &WorldConfig::default(), None), &CameraConfig::default()).unwrap()
    }

    #[test]
    fn parameter_count_is_bounded() {
        let a = Architecture::default();
        assert!(a.param_count() < 1_000_000);
        assert_eq!(Layout::new(&a).len(), a.param_count());
    }

    #[test]
    fn layout_lookup() {
        let a = Architecture::default();
        let l = Layout::new(&a);
        for t in Tensor::ALL {
            let r = l.range(t);
            assert_eq!(l.tensor_of(r.start), t);
            assert_eq!(l.tensor_of(r.end - 1), t);
        }
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let p = PolicyParams::init(Architecture::default(), 1).unwrap();
        let img = image(3);
        let a = p.encode(&img).unwrap();
        let b = p.encode(&img).unwrap();
        assert_eq!(a.features(), b.features());
        let blank = Image::filled(256, 256, CameraConfig::default().background);
        let f = p.encode(&blank).unwrap();
        assert!(f.features().iter().all(|v| v.is_finite()));
        assert_eq!(f.trace().layers.len(), 3);
    }

    #[test]
    fn distributions_normalize_at_every_step() {
        let p = PolicyParams::init(Architecture::default(), 2).unwrap();
        let enc = p.encode(&image(1)).unwrap();
        let mut prefix = vec![];
        for t in 0..9 {
            let s: f64 = p.next_token_distribution(&enc, TaskKind::XYSide, &prefix).iter().sum();
            assert!((s - 1.0).abs() < 1e-8);
            prefix.push(t % VOCAB_SIZE);
        }
    }

    #[test]
    fn sampled_logprobs_match_recomputation() {
        let p = PolicyParams::init(Architecture::default(), 5).unwrap();
        let img = image(2);
        let batch = p.sample_completions(&img, TaskKind::XOnlyTop, 16, 1.0, 9).unwrap();
        let enc = p.encode(&img).unwrap();
        for c in &batch.completions {
            assert!(c.tokens.len() <= p.arch.max_len);
            let re = p.sequence_logprob(&enc, TaskKind::XOnlyTop, &c.tokens);
            assert!((re - c.logprob()).abs() < 1e-10);
            assert!(c.logprob() <= 0.0);
        }
        assert_eq!(batch, p.sample_completions(&img, TaskKind::XOnlyTop, 16, 1.0, 9).unwrap());
    }

    #[test]
    fn near_zero_temperature_is_greedy() {
        let p = PolicyParams::init(Architecture::default(), 6).unwrap();
        let img = image(4);
        let batch = p.sample_completions(&img, TaskKind::XOnlySide, 8, 1e-9, 1).unwrap();
        let enc = p.encode(&img).unwrap();
        let g = p.greedy(&enc, TaskKind::XOnlySide).ids();
        for c in &batch.completions {
            assert_eq!(c.tokens, g);
        }
    }

    #[test]
    fn bad_sampling_arguments_are_rejected() {
        let p = PolicyParams::init(Architecture::default(), 6).unwrap();
        let img = image(4);
        assert!(p.sample_completions(&img, TaskKind::XOnlySide, 1, 1.0, 1).is_err());
        assert!(p.sample_completions(&img, TaskKind::XOnlySide, 4, 0.0, 1).is_err());
    }
}

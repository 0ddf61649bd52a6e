//! GRPO, GSPO and SFT post-training loops.
//!
//! A step draws fresh procedural instances, renders them and either samples
//! a group of completions per prompt (RL) or scores the oracle answers
//! (SFT), then applies one Adam update per inner epoch. All randomness is
//! keyed by `(seed, step, slot)`, so a run resumed from a checkpoint follows
//! the same trajectory as an uninterrupted one, and per-prompt results are
//! reduced in index order so the worker count does not change any bit.

mod adam;
pub mod loss;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{grpo_advantages, grpo_loss, gspo_loss, sft_loss, sft_loss_into, GroupInput};

use crate::env::Environment;
use crate::policy::{Architecture, Checkpoint, PolicyParams};
use crate::seed;
use crate::tasks::{action_tokens, random_legal_action, sft_target, TaskKind};
use crate::{Error, Result};

pub const RUNNING_WINDOW: usize = 25;
/// Sequences per independent gradient chunk in an SFT step.
const SFT_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grpo,
    Gspo,
    Sft,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::Gspo => "gspo",
            Method::Sft => "sft",
        }
    }

    pub fn is_rl(self) -> bool {
        self != Method::Sft
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grpo" => Ok(Method::Grpo),
            "gspo" => Ok(Method::Gspo),
            "sft" => Ok(Method::Sft),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Where SFT targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SftTargets {
    /// The oracle answer for the pictured scene.
    #[default]
    Oracle,
    /// A uniformly random legal answer, independent of the image. Training
    /// on these teaches the answer format and nothing about the scene.
    RandomLegal,
}

impl FromStr for SftTargets {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(SftTargets::Oracle),
            "random-legal" => Ok(SftTargets::RandomLegal),
            other => Err(Error::Config(format!("unknown SFT target source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub task: TaskKind,
    pub steps: u64,
}

/// Which task each step trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// Segments run back to back on one parameter set.
    Blocked { segments: Vec<Segment> },
    /// Each step draws its task from the mixture.
    Interleaved { weights: Vec<(TaskKind, f64)>, steps: u64 },
}

impl Schedule {
    pub fn single(task: TaskKind, steps: u64) -> Self {
        Schedule::Blocked {
            segments: vec![Segment { task, steps }],
        }
    }

    /// `"xonly-side:10000,binary-top:10000"`.
    pub fn parse_blocked(s: &str) -> Result<Self> {
        let segments = parse_pairs(s)?
            .into_iter()
            .map(|(task, v)| {
                v.parse::<u64>()
                    .map(|steps| Segment { task, steps })
                    .map_err(|_| Error::Config(format!("bad step count '{v}' in schedule '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Schedule::Blocked { segments })
    }

    /// `"xonly-side:0.5,binary-top:0.5"` over `steps` total steps.
    pub fn parse_interleaved(s: &str, steps: u64) -> Result<Self> {
        let weights = parse_pairs(s)?
            .into_iter()
            .map(|(task, v)| match v.parse::<f64>() {
                Ok(w) if w >= 0.0 && w.is_finite() => Ok((task, w)),
                _ => Err(Error::Config(format!("bad weight '{v}' in mixture '{s}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if weights.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("mixture '{s}' has no positive weight")));
        }
        Ok(Schedule::Interleaved { weights, steps })
    }

    pub fn total_steps(&self) -> u64 {
        match self {
            Schedule::Blocked { segments } => segments.iter().map(|s| s.steps).sum(),
            Schedule::Interleaved { steps, .. } => *steps,
        }
    }

    pub fn tasks(&self) -> Vec<TaskKind> {
        let mut v: Vec<TaskKind> = match self {
            Schedule::Blocked { segments } => segments.iter().map(|s| s.task).collect(),
            Schedule::Interleaved { weights, .. } => weights.iter().map(|w| w.0).collect(),
        };
        v.dedup();
        v
    }

    /// Task for 1-based `step`.
    pub fn task_at(&self, step: u64, run_seed: u64) -> TaskKind {
        match self {
            Schedule::Blocked { segments } => {
                let mut end = 0;
                for s in segments {
                    end += s.steps;
                    if step <= end {
                        return s.task;
                    }
                }
                segments.last().expect("validated non-empty").task
            }
            Schedule::Interleaved { weights, .. } => {
                let total: f64 = weights.iter().map(|w| w.1).sum();
                let mut rng = seed::rng(seed::derive(run_seed, &[0x6d6978, step]));
                let mut u = rng.gen::<f64>() * total;
                for &(task, w) in weights {
                    if u < w {
                        return task;
                    }
                    u -= w;
                }
                weights.iter().rev().find(|w| w.1 > 0.0).expect("positive weight").0
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Schedule::Blocked { segments } if segments.is_empty() => {
                Err(Error::Config("schedule has no segments".into()))
            }
            Schedule::Interleaved { weights, .. } if weights.is_empty() => {
                Err(Error::Config("mixture has no tasks".into()))
            }
            _ => Ok(()),
        }
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(TaskKind, String)>> {
    if s.trim().is_empty() {
        return Err(Error::Config("empty schedule".into()));
    }
    s.split(',')
        .map(|part| {
            let (t, v) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry '{part}' is not task:value")))?;
            Ok((t.trim().parse()?, v.trim().to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub schedule: Schedule,
    pub group_size: usize,
    pub prompts_per_batch: usize,
    /// Sequences per SFT step; defaults to `group_size * prompts_per_batch`.
    pub sft_batch_size: usize,
    #[serde(default)]
    pub sft_targets: SftTargets,
    pub clip_eta: f64,
    pub adam: AdamConfig,
    pub advantage_eps: f64,
    pub temperature: f64,
    /// Adam updates per sampled batch.
    pub inner_epochs: usize,
    pub checkpoint_interval: u64,
    /// Draw training instances from a fixed pool of this many seeds.
    pub fixed_dataset: Option<usize>,
    pub seed: u64,
    /// Start from these weights instead of a fresh initialization.
    pub init_checkpoint: Option<PathBuf>,
    pub arch: Architecture,
    pub env: Environment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Grpo,
            schedule: Schedule::single(TaskKind::XOnlyTop, 10_000),
            group_size: 16,
            prompts_per_batch: 4,
            sft_batch_size: 64,
            sft_targets: SftTargets::Oracle,
            clip_eta: 0.2,
            adam: AdamConfig::default(),
            advantage_eps: 1e-6,
            temperature: 1.0,
            inner_epochs: 1,
            checkpoint_interval: 1000,
            fixed_dataset: None,
            seed: 0,
            init_checkpoint: None,
            arch: Architecture::default(),
            env: Environment::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".into()));
        }
        if self.prompts_per_batch == 0 || self.sft_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.clip_eta > 0.0 && self.clip_eta < 1.0) {
            return Err(Error::Config("clip_eta must lie in (0, 1)".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.inner_epochs == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config("inner_epochs and checkpoint_interval must be positive".into()));
        }
        if self.fixed_dataset == Some(0) {
            return Err(Error::Config("fixed_dataset must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.schedule.validate()?;
        self.arch.validate()?;
        self.env.validate()
    }

    /// Label for the training task(s), e.g. `xonly-top` or `xonly-side>binary-top`.
    pub fn trained_on_label(&self) -> String {
        let sep = match self.schedule {
            Schedule::Blocked { .. } => ">",
            Schedule::Interleaved { .. } => "+",
        };
        self.schedule
            .tasks()
            .iter()
            .map(|t| t.name())
            .collect::<Vec<_>>()
            .join(sep)
    }

    fn instance_seed(&self, step: u64, slot: u64) -> u64 {
        match self.fixed_dataset {
            None => seed::train_instance_seed(self.seed, step, slot),
            Some(k) => {
                let pick = seed::derive(self.seed, &[0x706f6f6c, step, slot]) % k as u64;
                seed::train_instance_seed(self.seed ^ 0xF1ED_DA7A, u64::MAX, pick)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub task: TaskKind,
    /// Mean sampled reward (RL) or mean per-sequence loss (SFT).
    pub mean_reward_or_loss: f64,
    pub running_avg25: f64,
    pub sequences_seen: u64,
    pub tokens_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub checkpoints: Vec<u64>,
}

impl TrainLog {
    fn push(&mut self, step: u64, task: TaskKind, value: f64, sequences: u64, tokens: u64) {
        let (seq0, tok0) = self
            .records
            .last()
            .map_or((0, 0), |r| (r.sequences_seen, r.tokens_seen));
        let window: Vec<f64> = self
            .records
            .iter()
            .rev()
            .take(RUNNING_WINDOW - 1)
            .map(|r| r.mean_reward_or_loss)
            .chain(std::iter::once(value))
            .collect();
        let running = window.iter().sum::<f64>() / window.len() as f64;
        self.records.push(LogRecord {
            step,
            task,
            mean_reward_or_loss: value,
            running_avg25: running,
            sequences_seen: seq0 + sequences,
            tokens_seen: tok0 + tokens,
        });
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        write_atomic(path, &bytes)
    }

    pub fn read_csv(path: &Path) -> Result<Vec<LogRecord>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
    }

    /// Value-at-step lookup.
    pub fn values(&self) -> BTreeMap<u64, f64> {
        self.records.iter().map(|r| (r.step, r.mean_reward_or_loss)).collect()
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("checkpoint-{step:06}.bin"))
}

/// Steps of all checkpoints found under `out_dir`, ascending.
pub fn list_checkpoints(out_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let dir = out_dir.join("checkpoints");
    let mut out = Vec::new();
    let entries = match std::fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(&dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(step) = name
            .strip_prefix("checkpoint-")
            .and_then(|s| s.strip_suffix(".bin"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub resume: bool,
    /// Rayon worker count; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Print a progress line every this many steps.
    pub progress_every: Option<u64>,
}

struct StepOutcome {
    grad: Vec<f64>,
    value: f64,
    sequences: u64,
    tokens: u64,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
}

impl Trainer<'_> {
    fn rl_step(&self, params: &mut PolicyParams, state: &mut AdamState, task: TaskKind, step: u64) -> Result<StepOutcome> {
        let cfg = self.cfg;
        let m = cfg.prompts_per_batch;
        let sampled = (0..m as u64)
            .into_par_iter()
            .map(|slot| {
                let (inst, img) = cfg.env.instance(task, cfg.instance_seed(step, slot))?;
                let enc = params.encode(&img)?;
                let sample_seed = seed::derive(cfg.seed, &[0x73616d70, step, slot]);
                let mut batch = params.sample_group(&enc, task, cfg.group_size, cfg.temperature, sample_seed);
                for c in &mut batch.completions {
                    c.reward = cfg.env.score(&inst, &c.sequence()).0;
                    // the loss scores the untempered policy, so the old side must match
                    if cfg.temperature != 1.0 {
                        c.logprobs = params.token_logprobs(&enc, task, &c.tokens);
                    }
                }
                let adv = grpo_advantages(&batch.rewards(), cfg.advantage_eps);
                Ok((img, enc, batch, adv))
            })
            .collect::<Result<Vec<_>>>()?;

        let n_seq = (m * cfg.group_size) as u64;
        let n_tok: u64 = sampled
            .iter()
            .flat_map(|s| s.2.completions.iter())
            .map(|c| c.tokens.len() as u64)
            .sum();
        let mean_reward = sampled
            .iter()
            .flat_map(|s| s.2.completions.iter())
            .map(|c| c.reward)
            .sum::<f64>()
            / n_seq as f64;

        let mut last_grad = Vec::new();
        for epoch in 0..cfg.inner_epochs {
            let current: &PolicyParams = params;
            let parts = sampled
                .par_iter()
                .map(|(img, enc0, batch, adv)| {
                    let mut grad = current.zeros_like();
                    if adv.iter().all(|&a| a == 0.0) {
                        return Ok(grad);
                    }
                    let fresh;
                    let enc = if epoch == 0 {
                        enc0
                    } else {
                        fresh = current.encode(img)?;
                        &fresh
                    };
                    let old: Vec<Vec<f64>> = batch.completions.iter().map(|c| c.logprobs.clone()).collect();
                    let group = GroupInput {
                        task,
                        batch,
                        old_logprobs: &old,
                        advantages: adv,
                    };
                    let loss = match cfg.method {
                        Method::Grpo => grpo_loss(current, enc, group, cfg.clip_eta, &mut grad)?,
                        Method::Gspo => gspo_loss(current, enc, group, cfg.clip_eta, &mut grad)?,
                        Method::Sft => unreachable!("rl_step is only called for RL methods"),
                    };
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("surrogate loss {loss}")));
                    }
                    Ok(grad)
                })
                .collect::<Result<Vec<_>>>()?;
            let grad = reduce_mean(parts);
            adam_step(&mut params.values, &grad, state, &cfg.adam)?;
            last_grad = grad;
        }
        Ok(StepOutcome {
            grad: last_grad,
            value: mean_reward,
            sequences: n_seq,
            tokens: n_tok,
        })
    }

    fn sft_step(&self, params: &mut PolicyParams, state: &mut AdamState, task: TaskKind, step: u64) -> Result<StepOutcome> {
        let cfg = self.cfg;
        let b = cfg.sft_batch_size;
        let scale = 1.0 / b as f64;
        let current: &PolicyParams = params;
        let chunks: Vec<(usize, usize)> = (0..b).step_by(SFT_CHUNK).map(|s| (s, (s + SFT_CHUNK).min(b))).collect();
        let parts = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut grad = current.zeros_like();
                let mut loss = 0.0;
                let mut tokens = 0u64;
                for slot in lo..hi {
                    let (inst, img) = cfg.env.instance(task, cfg.instance_seed(step, slot as u64))?;
                    let enc = current.encode(&img)?;
                    let target = match cfg.sft_targets {
                        SftTargets::Oracle => sft_target(&inst),
                        SftTargets::RandomLegal => {
                            let mut rng = seed::rng(seed::derive(cfg.seed, &[0x7461726774, step, slot as u64]));
                            action_tokens(random_legal_action(task, &mut rng))
                        }
                    };
                    tokens += target.len() as u64;
                    loss += sft_loss_into(current, &enc, task, &target, scale, &mut grad)?;
                }
                Ok((grad, loss, tokens))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grad = current.zeros_like();
        let mut loss = 0.0;
        let mut tokens = 0;
        for (g, l, t) in parts {
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            loss += l;
            tokens += t;
        }
        let value = loss * scale;
        if !value.is_finite() {
            return Ok(StepOutcome {
                grad,
                value,
                sequences: b as u64,
                tokens,
            });
        }
        adam_step(&mut params.values, &grad, state, &cfg.adam)?;
        Ok(StepOutcome {
            grad,
            value,
            sequences: b as u64,
            tokens,
        })
    }
}

fn reduce_mean(parts: Vec<Vec<f64>>) -> Vec<f64> {
    let n = parts.len() as f64;
    let mut iter = parts.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for g in iter {
        for (a, b) in acc.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    acc
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    step: u64,
    task: TaskKind,
    value: f64,
    param_norm: f64,
    grad_norm: f64,
    non_finite_params: usize,
    non_finite_grad: usize,
    error: &'a str,
}

fn write_diagnostic(out_dir: &Path, diag: &Diagnostic<'_>) -> Result<()> {
    let path = out_dir.join("diagnostic.json");
    let text = serde_json::to_string_pretty(diag)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub const CONFIG_FILE: &str = "train_config.json";
pub const LOG_FILE: &str = "trainlog.csv";

/// Run (or resume) a training schedule, writing checkpoints, the log and
/// the frozen config into `out_dir`.
pub fn train(cfg: &TrainConfig, out_dir: &Path, opts: TrainOptions) -> Result<TrainLog> {
    cfg.validate()?;
    match opts.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| train_inner(cfg, out_dir, opts)),
        None => train_inner(cfg, out_dir, opts),
    }
}

fn train_inner(cfg: &TrainConfig, out_dir: &Path, opts: TrainOptions) -> Result<TrainLog> {
    std::fs::create_dir_all(out_dir.join("checkpoints")).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join(CONFIG_FILE);
    let log_path = out_dir.join(LOG_FILE);
    let config_text = serde_json::to_string_pretty(cfg)?;
    let total = cfg.schedule.total_steps();

    let (mut params, mut state, mut log, start) = if opts.resume {
        let frozen = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let frozen: TrainConfig = serde_json::from_str(&frozen)?;
        if &frozen != cfg {
            return Err(Error::Config(format!(
                "resume config differs from the frozen config in {}",
                config_path.display()
            )));
        }
        let (step, path) = list_checkpoints(out_dir)?
            .pop()
            .ok_or_else(|| Error::Checkpoint(format!("no checkpoint to resume in {}", out_dir.display())))?;
        let ck = Checkpoint::load(&path, Some(&cfg.arch))?;
        let state = ck.adam.unwrap_or_else(|| AdamState::new(ck.params.values.len()));
        let mut log = TrainLog {
            records: TrainLog::read_csv(&log_path)?
                .into_iter()
                .filter(|r| r.step <= step)
                .collect(),
            checkpoints: list_checkpoints(out_dir)?
                .into_iter()
                .map(|c| c.0)
                .filter(|&s| s <= step)
                .collect(),
        };
        if log.records.len() as u64 != step {
            return Err(Error::Checkpoint(format!(
                "log has {} records but checkpoint is at step {step}",
                log.records.len()
            )));
        }
        log.checkpoints.dedup();
        (ck.params, state, log, step)
    } else {
        if log_path.exists() {
            return Err(Error::Config(format!(
                "{} already holds a training run; resume it or choose another directory",
                out_dir.display()
            )));
        }
        std::fs::write(&config_path, &config_text).map_err(|e| Error::io(&config_path, e))?;
        let params = match &cfg.init_checkpoint {
            Some(p) => Checkpoint::load(p, Some(&cfg.arch))?.params,
            None => PolicyParams::init(cfg.arch, cfg.seed)?,
        };
        let state = AdamState::new(params.values.len());
        let ck = Checkpoint {
            step: 0,
            params: params.clone(),
            adam: Some(state.clone()),
        };
        ck.save(&checkpoint_path(out_dir, 0))?;
        let log = TrainLog {
            records: Vec::new(),
            checkpoints: vec![0],
        };
        log.write_csv(&log_path)?;
        (params, state, log, 0)
    };

    let trainer = Trainer { cfg };
    for step in start + 1..=total {
        let task = cfg.schedule.task_at(step, cfg.seed);
        let outcome = if cfg.method.is_rl() {
            trainer.rl_step(&mut params, &mut state, task, step)
        } else {
            trainer.sft_step(&mut params, &mut state, task, step)
        };
        let outcome = match outcome {
            Ok(o) if o.value.is_finite() && params.all_finite() => o,
            Ok(o) => {
                let msg = "non-finite loss or parameters";
                write_diagnostic(
                    out_dir,
                    &Diagnostic {
                        step,
                        task,
                        value: o.value,
                        param_norm: norm(&params.values),
                        grad_norm: norm(&o.grad),
                        non_finite_params: params.values.iter().filter(|v| !v.is_finite()).count(),
                        non_finite_grad: o.grad.iter().filter(|v| !v.is_finite()).count(),
                        error: msg,
                    },
                )?;
                return Err(Error::NonFinite(format!("step {step}: {msg}; see diagnostic.json")));
            }
            Err(e @ Error::NonFinite(_)) => {
                let msg = e.to_string();
                write_diagnostic(
                    out_dir,
                    &Diagnostic {
                        step,
                        task,
                        value: f64::NAN,
                        param_norm: norm(&params.values),
                        grad_norm: f64::NAN,
                        non_finite_params: params.values.iter().filter(|v| !v.is_finite()).count(),
                        non_finite_grad: 0,
                        error: &msg,
                    },
                )?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        log.push(step, task, outcome.value, outcome.sequences, outcome.tokens);
        if let Some(every) = opts.progress_every {
            if step % every == 0 {
                let r = log.records.last().expect("just pushed");
                eprintln!(
                    "step {step}/{total} {} {}: {:.4} (avg25 {:.4})",
                    cfg.method, task, r.mean_reward_or_loss, r.running_avg25
                );
            }
        }
        if step % cfg.checkpoint_interval == 0 || step == total {
            log.write_csv(&log_path)?;
            Checkpoint {
                step,
                params: params.clone(),
                adam: Some(state.clone()),
            }
            .save(&checkpoint_path(out_dir, step))?;
            log.checkpoints.push(step);
        }
    }
    log.write_csv(&log_path)?;
    Ok(log)
}

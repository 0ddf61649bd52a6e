//! Command-line front end.
//!
//! Every flag has an environment-variable twin (`TOWERLAB_<FLAG>`). Each
//! invocation resolves its flags into a [`RunConfig`], writes it to
//! `<out>/run_config.json` and executes it; `--from-config` replays such a
//! file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analyze::{
    collect_probe_data, emit_report, evaluate_with, external_binary_eval, generalization_matrix, probes_csv,
    read_probes_csv, report, run_probes, task_baselines, write_matrix_files, EvalMatrix, ModelRun,
    PolicyResponder, ProbeConfig, ProbeTarget, StepSelection,
};
use crate::env::Environment;
use crate::policy::{Architecture, Checkpoint};
use crate::render::rasterize;
use crate::seed;
use crate::tasks::{baseline_reward, TaskKind, MIN_BASELINE_SAMPLES};
use crate::train::{self, AdamConfig, Method, Schedule, SftTargets, TrainConfig, TrainLog, TrainOptions};
use crate::world::{generate_scene, DatasetKind, SceneRecord};
use crate::{Error, Result};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const SMOKE_STEPS: u64 = 1000;

#[derive(Debug, Parser)]
#[command(name = "towerlab", version, about = "Block-tower intuitive-physics post-training lab")]
pub struct Cli {
    /// Base seed for everything the command draws at random.
    #[arg(long, global = true, env = "TOWERLAB_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, global = true, env = "TOWERLAB_OUT")]
    pub out: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "TOWERLAB_WORKERS")]
    pub workers: Option<usize>,

    /// Replay a frozen run_config.json instead of parsing a subcommand.
    #[arg(long, global = true, env = "TOWERLAB_FROM_CONFIG")]
    pub from_config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a dataset of scenes to PNGs plus a JSON-lines sidecar.
    GenData(GenDataArgs),
    /// Train a policy with GRPO, GSPO or SFT.
    Train(TrainArgs),
    /// Train the format-only base model (SFT on random legal answers for all tasks).
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint on held-out instances of one task.
    Eval(EvalArgs),
    /// Binary stability evaluation on a directory of external images.
    EvalExternal(EvalExternalArgs),
    /// Evaluate every run on every task and emit the generalization matrix.
    Matrix(MatrixArgs),
    /// Linear probes on pixel rows and encoder activations.
    Probe(ProbeArgs),
    /// Monte-Carlo random-action baselines.
    Baseline(BaselineArgs),
    /// Assemble CSV/SVG/HTML report from matrix, probe and training outputs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, env = "TOWERLAB_DATASET")]
    pub dataset: DatasetKind,
    #[arg(long, env = "TOWERLAB_N")]
    pub n: usize,
    /// Replace a non-empty output directory.
    #[arg(long, env = "TOWERLAB_FORCE")]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "TOWERLAB_METHOD", default_value = "grpo")]
    pub method: Method,
    /// Single training task (use with --steps).
    #[arg(long, env = "TOWERLAB_TASK", conflicts_with_all = ["schedule"])]
    pub task: Option<TaskKind>,
    /// Steps for --task or --interleave.
    #[arg(long, env = "TOWERLAB_STEPS")]
    pub steps: Option<u64>,
    /// Blocked schedule, e.g. "xonly-side:10000,binary-top:10000".
    #[arg(long, env = "TOWERLAB_SCHEDULE", conflicts_with = "interleave")]
    pub schedule: Option<String>,
    /// Interleaved mixture, e.g. "xonly-side:0.5,binary-top:0.5".
    #[arg(long, env = "TOWERLAB_INTERLEAVE")]
    pub interleave: Option<String>,
    #[arg(long, env = "TOWERLAB_LR", default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, env = "TOWERLAB_GROUP_SIZE", default_value_t = 16)]
    pub group_size: usize,
    #[arg(long, env = "TOWERLAB_PROMPTS", default_value_t = 4)]
    pub prompts: usize,
    /// Sequences per SFT step (default: group size x prompts).
    #[arg(long, env = "TOWERLAB_SFT_BATCH")]
    pub sft_batch: Option<usize>,
    #[arg(long, env = "TOWERLAB_SFT_TARGETS", default_value = "oracle")]
    pub sft_targets: SftTargets,
    #[arg(long, env = "TOWERLAB_CLIP", default_value_t = 0.2)]
    pub clip: f64,
    #[arg(long, env = "TOWERLAB_TEMPERATURE", default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, env = "TOWERLAB_INNER_EPOCHS", default_value_t = 1)]
    pub inner_epochs: usize,
    #[arg(long, env = "TOWERLAB_CHECKPOINT_INTERVAL", default_value_t = 1000)]
    pub checkpoint_interval: u64,
    /// Train on a fixed pool of K instances instead of fresh ones.
    #[arg(long, env = "TOWERLAB_FIXED_DATASET")]
    pub fixed_dataset: Option<usize>,
    /// Initialize from this checkpoint (e.g. a pretrained base model).
    #[arg(long, env = "TOWERLAB_INIT")]
    pub init: Option<PathBuf>,
    /// Maximum generated tokens per answer.
    #[arg(long, env = "TOWERLAB_MAX_LEN")]
    pub max_len: Option<usize>,
    /// Continue from the latest checkpoint in --out.
    #[arg(long, env = "TOWERLAB_RESUME")]
    pub resume: bool,
    /// Short CI profile: 1000 steps, checkpoint every 250.
    #[arg(long, env = "TOWERLAB_SMOKE")]
    pub smoke: bool,
    /// Delete an existing run in --out first.
    #[arg(long, env = "TOWERLAB_FORCE")]
    pub force: bool,
    /// Print a progress line every N steps.
    #[arg(long, env = "TOWERLAB_PROGRESS")]
    pub progress: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, env = "TOWERLAB_STEPS", default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, env = "TOWERLAB_LR", default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, env = "TOWERLAB_SFT_BATCH", default_value_t = 64)]
    pub sft_batch: usize,
    #[arg(long, env = "TOWERLAB_CHECKPOINT_INTERVAL", default_value_t = 1000)]
    pub checkpoint_interval: u64,
    #[arg(long, env = "TOWERLAB_FORCE")]
    pub force: bool,
    #[arg(long, env = "TOWERLAB_PROGRESS")]
    pub progress: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "TOWERLAB_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "TOWERLAB_TASK")]
    pub task: TaskKind,
    #[arg(long, env = "TOWERLAB_N", default_value_t = 400)]
    pub n: usize,
    /// Report the mean over parseable answers only.
    #[arg(long, env = "TOWERLAB_LEGAL_ONLY")]
    pub legal_only: bool,
}

#[derive(Debug, Args)]
pub struct EvalExternalArgs {
    #[arg(long, env = "TOWERLAB_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "TOWERLAB_IMAGES")]
    pub images: PathBuf,
    /// CSV with columns filename,stable (stable is 0 or 1).
    #[arg(long, env = "TOWERLAB_LABELS")]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    /// Training run directories (repeatable).
    #[arg(long = "run", env = "TOWERLAB_RUNS", value_delimiter = ',', required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, env = "TOWERLAB_N", default_value_t = 400)]
    pub n: usize,
    /// Only evaluate each run's last checkpoint.
    #[arg(long, env = "TOWERLAB_FINAL_ONLY")]
    pub final_only: bool,
    #[arg(long, env = "TOWERLAB_BASELINE_SAMPLES", default_value_t = MIN_BASELINE_SAMPLES)]
    pub baseline_samples: usize,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Model to probe; without it only the pixel control runs.
    #[arg(long, env = "TOWERLAB_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "TOWERLAB_TAG")]
    pub tag: Option<String>,
    #[arg(long, env = "TOWERLAB_N", default_value_t = 600)]
    pub n: usize,
    #[arg(long, env = "TOWERLAB_FOLDS", default_value_t = 10)]
    pub folds: usize,
    #[arg(long, env = "TOWERLAB_LAMBDA", default_value_t = 1.0)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Task, or all four when omitted.
    #[arg(long, env = "TOWERLAB_TASK")]
    pub task: Option<TaskKind>,
    #[arg(long, env = "TOWERLAB_SAMPLES", default_value_t = MIN_BASELINE_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding matrix.csv (and baselines.csv).
    #[arg(long, env = "TOWERLAB_MATRIX")]
    pub matrix: Option<PathBuf>,
    /// probes.csv files (repeatable).
    #[arg(long = "probes", env = "TOWERLAB_PROBES", value_delimiter = ',')]
    pub probes: Vec<PathBuf>,
    /// Training run directories whose logs to plot (repeatable).
    #[arg(long = "run", env = "TOWERLAB_RUNS", value_delimiter = ',')]
    pub runs: Vec<PathBuf>,
}

/// A fully resolved invocation. The output directory and worker count are
/// deliberately not part of it: neither changes any result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub run: Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Resolved {
    GenData {
        dataset: DatasetKind,
        n: usize,
        force: bool,
        env: Environment,
    },
    Train {
        train: TrainConfig,
        resume: bool,
        force: bool,
        progress: Option<u64>,
    },
    Eval {
        checkpoint: PathBuf,
        task: TaskKind,
        n: usize,
        legal_only: bool,
        env: Environment,
    },
    EvalExternal {
        checkpoint: PathBuf,
        images: PathBuf,
        labels: PathBuf,
    },
    Matrix {
        runs: Vec<PathBuf>,
        n: usize,
        final_only: bool,
        baseline_samples: usize,
        env: Environment,
    },
    Probe {
        checkpoint: Option<PathBuf>,
        tag: String,
        probe: ProbeConfig,
        env: Environment,
    },
    Baseline {
        tasks: Vec<TaskKind>,
        samples: usize,
        env: Environment,
    },
    Report {
        matrix: Option<PathBuf>,
        probes: Vec<PathBuf>,
        runs: Vec<PathBuf>,
    },
}

impl Resolved {
    fn name(&self) -> &'static str {
        match self {
            Resolved::GenData { .. } => "gen-data",
            Resolved::Train { .. } => "train",
            Resolved::Eval { .. } => "eval",
            Resolved::EvalExternal { .. } => "eval-external",
            Resolved::Matrix { .. } => "matrix",
            Resolved::Probe { .. } => "probe",
            Resolved::Baseline { .. } => "baseline",
            Resolved::Report { .. } => "report",
        }
    }
}

fn train_schedule(a: &TrainArgs) -> Result<Schedule> {
    let steps = if a.smoke { Some(SMOKE_STEPS) } else { a.steps };
    if let Some(s) = &a.schedule {
        if a.smoke {
            return Err(Error::Config("--smoke sets the step count and cannot be combined with --schedule".into()));
        }
        return Schedule::parse_blocked(s);
    }
    if let Some(mix) = &a.interleave {
        let steps = steps.ok_or_else(|| Error::Config("--interleave needs --steps".into()))?;
        return Schedule::parse_interleaved(mix, steps);
    }
    match a.task {
        Some(task) => Ok(Schedule::single(task, steps.unwrap_or(10_000))),
        None => Err(Error::Config("give one of --task, --schedule or --interleave".into())),
    }
}

/// Resolve parsed flags into a run description.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let env = Environment::default();
    let command = cli
        .command
        .as_ref()
        .ok_or_else(|| Error::Config("no subcommand given (and no --from-config)".into()))?;
    let run = match command {
        Command::GenData(a) => Resolved::GenData {
            dataset: a.dataset,
            n: a.n,
            force: a.force,
            env,
        },
        Command::Train(a) => {
            let mut arch = Architecture::default();
            if let Some(m) = a.max_len {
                arch.max_len = m;
            }
            let train = TrainConfig {
                method: a.method,
                schedule: train_schedule(a)?,
                group_size: a.group_size,
                prompts_per_batch: a.prompts,
                sft_batch_size: a.sft_batch.unwrap_or(a.group_size * a.prompts),
                sft_targets: a.sft_targets,
                clip_eta: a.clip,
                adam: AdamConfig {
                    lr: a.lr,
                    ..AdamConfig::default()
                },
                temperature: a.temperature,
                inner_epochs: a.inner_epochs,
                checkpoint_interval: if a.smoke { 250 } else { a.checkpoint_interval },
                fixed_dataset: a.fixed_dataset,
                seed: cli.seed,
                init_checkpoint: a.init.clone(),
                arch,
                env,
                ..TrainConfig::default()
            };
            Resolved::Train {
                train,
                resume: a.resume,
                force: a.force,
                progress: a.progress,
            }
        }
        Command::Pretrain(a) => {
            let mix = TaskKind::ALL
                .iter()
                .map(|t| format!("{}:1", t.name()))
                .collect::<Vec<_>>()
                .join(",");
            Resolved::Train {
                train: TrainConfig {
                    method: Method::Sft,
                    schedule: Schedule::parse_interleaved(&mix, a.steps)?,
                    sft_batch_size: a.sft_batch,
                    sft_targets: SftTargets::RandomLegal,
                    adam: AdamConfig {
                        lr: a.lr,
                        ..AdamConfig::default()
                    },
                    checkpoint_interval: a.checkpoint_interval,
                    seed: cli.seed,
                    env,
                    ..TrainConfig::default()
                },
                resume: false,
                force: a.force,
                progress: a.progress,
            }
        }
        Command::Eval(a) => Resolved::Eval {
            checkpoint: a.checkpoint.clone(),
            task: a.task,
            n: a.n,
            legal_only: a.legal_only,
            env,
        },
        Command::EvalExternal(a) => Resolved::EvalExternal {
            checkpoint: a.checkpoint.clone(),
            images: a.images.clone(),
            labels: a.labels.clone(),
        },
        Command::Matrix(a) => Resolved::Matrix {
            runs: a.runs.clone(),
            n: a.n,
            final_only: a.final_only,
            baseline_samples: a.baseline_samples,
            env,
        },
        Command::Probe(a) => Resolved::Probe {
            checkpoint: a.checkpoint.clone(),
            tag: a.tag.clone().unwrap_or_else(|| match &a.checkpoint {
                Some(p) => p
                    .parent()
                    .and_then(Path::parent)
                    .and_then(Path::file_name)
                    .map_or("model".to_string(), |n| n.to_string_lossy().into_owned()),
                None => "pixels".to_string(),
            }),
            probe: ProbeConfig {
                n_images: a.n,
                folds: a.folds,
                lambda: a.lambda,
                seed: cli.seed,
                ..ProbeConfig::default()
            },
            env,
        },
        Command::Baseline(a) => Resolved::Baseline {
            tasks: a.task.map_or(TaskKind::ALL.to_vec(), |t| vec![t]),
            samples: a.samples,
            env,
        },
        Command::Report(a) => Resolved::Report {
            matrix: a.matrix.clone(),
            probes: a.probes.clone(),
            runs: a.runs.clone(),
        },
    };
    Ok(RunConfig { seed: cli.seed, run })
}

fn default_out(run: &Resolved) -> PathBuf {
    PathBuf::from("towerlab-out").join(run.name())
}

fn is_non_empty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if is_non_empty_dir(out) {
        if !force {
            return Err(Error::Config(format!(
                "{} is not empty; pass --force to replace it",
                out.display()
            )));
        }
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn freeze(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(RUN_CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_params(path: &Path) -> Result<crate::policy::PolicyParams> {
    Ok(Checkpoint::load(path, None)?.params)
}

/// Execute a resolved run, writing outputs under `out`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<()> {
    let seed = cfg.seed;
    match &cfg.run {
        Resolved::GenData { dataset, n, force, env } => {
            prepare_out(out, *force)?;
            freeze(cfg, out)?;
            let mut lines = String::new();
            for i in 0..*n as u64 {
                let scene_seed = seed::eval_instance_seed(seed, i);
                let scene = generate_scene(*dataset, scene_seed, &env.world);
                let img = rasterize(&scene, &env.camera)?;
                img.save_png(&out.join(format!("{}_{scene_seed}.png", dataset.name())))?;
                lines.push_str(&SceneRecord::from_scene(&scene, &env.world).to_json_line()?);
                lines.push('\n');
            }
            let path = out.join("scenes.jsonl");
            std::fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
            println!("wrote {n} {} scenes to {}", dataset.name(), out.display());
        }
        Resolved::Train {
            train: tc,
            resume,
            force,
            progress,
        } => {
            if !*resume {
                prepare_out(out, *force)?;
            }
            freeze(cfg, out)?;
            let log = train::train(
                tc,
                out,
                TrainOptions {
                    resume: *resume,
                    workers: None,
                    progress_every: *progress,
                },
            )?;
            match log.records.last() {
                Some(r) => println!(
                    "trained {} steps ({}); final running average {:.4}",
                    r.step,
                    tc.trained_on_label(),
                    r.running_avg25
                ),
                None => println!("no steps to run; wrote checkpoint 0"),
            }
        }
        Resolved::Eval {
            checkpoint,
            task,
            n,
            legal_only,
            env,
        } => {
            let params = load_params(checkpoint)?;
            let (res, _) = evaluate_with(&PolicyResponder(&params), env, *task, *n, seed)?;
            freeze(cfg, out)?;
            write_json(&out.join("eval.json"), &res)?;
            let s = res.headline(*legal_only);
            println!(
                "{}{}: mean {:.4} [{:.4}, {:.4}] n={} legal_rate {:.4}",
                task,
                if *legal_only { " (legal only)" } else { "" },
                s.mean,
                s.ci_low,
                s.ci_high,
                s.n,
                res.legal_rate
            );
            if let Some(acc) = res.accuracy {
                println!("accuracy {acc:.4}");
            }
        }
        Resolved::EvalExternal {
            checkpoint,
            images,
            labels,
        } => {
            let params = load_params(checkpoint)?;
            let res = external_binary_eval(&params, images, labels)?;
            freeze(cfg, out)?;
            write_json(&out.join("external_eval.json"), &res)?;
            println!(
                "accuracy {:.4} [{:.4}, {:.4}] n={} score {:.4} legal_rate {:.4}",
                res.accuracy, res.accuracy_ci.0, res.accuracy_ci.1, res.n, res.score.mean, res.legal_rate
            );
        }
        Resolved::Matrix {
            runs,
            n,
            final_only,
            baseline_samples,
            env,
        } => {
            let models = runs.iter().map(|d| ModelRun::from_dir(d)).collect::<Result<Vec<_>>>()?;
            let baselines = task_baselines(env, *baseline_samples, seed)?;
            let sel = if *final_only { StepSelection::Final } else { StepSelection::All };
            let m = generalization_matrix(&models, sel, env, *n, seed, &baselines)?;
            freeze(cfg, out)?;
            write_matrix_files(&m, out)?;
            println!("wrote {} matrix cells to {}", m.cells.len(), out.join("matrix.csv").display());
        }
        Resolved::Probe {
            checkpoint,
            tag,
            probe,
            env,
        } => {
            let params = checkpoint.as_deref().map(load_params).transpose()?;
            let data = collect_probe_data(params.as_ref(), env, probe.n_images, seed)?;
            let results = run_probes(&data, tag, probe)?;
            freeze(cfg, out)?;
            let path = out.join("probes.csv");
            std::fs::write(&path, probes_csv(&results)?).map_err(|e| Error::io(&path, e))?;
            let svg = out.join("probes.svg");
            std::fs::write(&svg, report::probes_svg(&results)).map_err(|e| Error::io(&svg, e))?;
            for r in &results {
                println!("{} {} {}: {:.4}", r.model_tag, r.target.name(), r.layer, r.mean());
            }
            for target in [ProbeTarget::BinaryStability, ProbeTarget::XOffset] {
                if let Some(best) = results
                    .iter()
                    .filter(|r| r.target == target && r.layer != "pixels")
                    .max_by(|a, b| a.mean().total_cmp(&b.mean()))
                {
                    println!("best encoder layer for {}: {} ({:.4})", target.name(), best.layer, best.mean());
                }
            }
        }
        Resolved::Baseline { tasks, samples, env } => {
            freeze(cfg, out)?;
            let mut rows = Vec::new();
            for &t in tasks {
                let b = baseline_reward(t, &env.world, &env.reward, *samples, seed)?;
                let (lo, hi) = b.ci95();
                println!("{t}: {:.4} ± {:.4} (95% CI [{lo:.4}, {hi:.4}], n={})", b.mean, 1.96 * b.std_err, b.n);
                rows.push((t, b));
            }
            write_json(&out.join("baselines.json"), &rows)?;
        }
        Resolved::Report { matrix, probes, runs } => {
            let m = match matrix {
                Some(d) => EvalMatrix::read_dir(d)?,
                None => EvalMatrix::default(),
            };
            let mut all_probes = Vec::new();
            for p in probes {
                all_probes.extend(read_probes_csv(p)?);
            }
            let mut logs = Vec::new();
            for r in runs {
                let name = r.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
                logs.push((name, TrainLog::read_csv(&r.join(train::LOG_FILE))?));
            }
            freeze(cfg, out)?;
            let files = emit_report(&m, &all_probes, &logs, out)?;
            println!("wrote {} report files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

/// Parse arguments and run. Clap handles `--help` and usage errors itself.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::parse_from(args);
    let cfg = match &cli.from_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<RunConfig>(&text)?
        }
        None => resolve(&cli)?,
    };
    let out = cli.out.clone().unwrap_or_else(|| default_out(&cfg.run));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute(&cfg, &out))
}

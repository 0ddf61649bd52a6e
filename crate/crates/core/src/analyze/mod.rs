//! Held-out evaluation, the cross-task generalization matrix, external
//! image evaluation, activation probes and report emission.

pub mod probe;
pub mod report;
mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use probe::{
    collect_probe_data, probes_csv, read_probes_csv, logistic_fit, pixel_rows, ridge_fit, run_probes, stratified_folds, LogisticModel,
    ProbeConfig, ProbeData, ProbeResult, ProbeTarget, RidgeModel,
};
pub use report::{emit_report, write_matrix_files};

use crate::env::Environment;
use crate::policy::{Checkpoint, PolicyParams};
use crate::render::{Image, IMAGE_SIZE};
use crate::seed;
use crate::tasks::{
    action_tokens, baseline_reward, mean_and_std_err, oracle_action, random_legal_action, BaselineEstimate,
    ParsedAction, TaskInstance, TaskKind, TokenSequence,
};
use crate::train::{list_checkpoints, Method, TrainConfig, CONFIG_FILE};
use crate::{Error, Result};

pub const MIN_EVAL_INSTANCES: usize = 100;
const Z95: f64 = 1.96;

/// Produces an answer for one evaluation instance.
pub trait Responder: Sync {
    fn respond(&self, instance: &TaskInstance, image: &Image, index: u64) -> Result<TokenSequence>;
}

/// Greedy decoding from a policy.
pub struct PolicyResponder<'a>(pub &'a PolicyParams);

impl Responder for PolicyResponder<'_> {
    fn respond(&self, instance: &TaskInstance, image: &Image, _index: u64) -> Result<TokenSequence> {
        let enc = self.0.encode(image)?;
        Ok(self.0.greedy(&enc, instance.task))
    }
}

/// Always answers with the oracle action.
pub struct OracleResponder;

impl Responder for OracleResponder {
    fn respond(&self, instance: &TaskInstance, _image: &Image, _index: u64) -> Result<TokenSequence> {
        Ok(action_tokens(oracle_action(instance)))
    }
}

/// Uniformly random legal actions, ignoring the image.
pub struct RandomResponder {
    pub seed: u64,
}

impl Responder for RandomResponder {
    fn respond(&self, instance: &TaskInstance, _image: &Image, index: u64) -> Result<TokenSequence> {
        let mut rng = seed::rng(seed::derive(self.seed, &[0x72616e64, index]));
        Ok(action_tokens(random_legal_action(instance.task, &mut rng)))
    }
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Self {
        let (mean, se) = mean_and_std_err(values);
        Stats {
            n: values.len(),
            mean,
            ci_low: mean - Z95 * se,
            ci_high: mean + Z95 * se,
        }
    }

    pub fn from_baseline(b: &BaselineEstimate) -> Self {
        let (ci_low, ci_high) = b.ci95();
        Stats {
            n: b.n,
            mean: b.mean,
            ci_low,
            ci_high,
        }
    }

    pub fn overlaps(&self, other: &Stats) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: TaskKind,
    pub all: Stats,
    /// Scores restricted to parseable answers; `n = 0` (and NaN mean) when none parse.
    pub legal_only: Stats,
    pub legal_rate: f64,
    /// Fraction of binary answers matching the label (binary task only).
    pub accuracy: Option<f64>,
}

impl EvalResult {
    pub fn headline(&self, legal_only: bool) -> &Stats {
        if legal_only {
            &self.legal_only
        } else {
            &self.all
        }
    }
}

/// One scored evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub index: u64,
    pub answer: TokenSequence,
    pub reward: f64,
    pub legal: bool,
    pub correct: bool,
}

/// Score `responder` on `n` held-out instances of `task`.
///
/// Instances come from the evaluation seed range, so they never coincide
/// with training instances. Per-instance work runs in parallel; the
/// reduction is in index order.
pub fn evaluate_with(
    responder: &dyn Responder,
    env: &Environment,
    task: TaskKind,
    n: usize,
    eval_seed: u64,
) -> Result<(EvalResult, Vec<Scored>)> {
    if n < MIN_EVAL_INSTANCES {
        return Err(Error::Config(format!(
            "evaluation needs at least {MIN_EVAL_INSTANCES} instances, got {n}"
        )));
    }
    let scored = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (inst, img) = env.instance(task, seed::eval_instance_seed(eval_seed, i))?;
            let answer = responder.respond(&inst, &img, i)?;
            let (reward, legal) = env.score(&inst, &answer);
            let correct = task.is_binary() && reward == 1.0;
            Ok(Scored {
                index: i,
                answer,
                reward,
                legal,
                correct,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(task, &scored), scored))
}

fn summarize(task: TaskKind, scored: &[Scored]) -> EvalResult {
    let all: Vec<f64> = scored.iter().map(|s| s.reward).collect();
    let legal: Vec<f64> = scored.iter().filter(|s| s.legal).map(|s| s.reward).collect();
    let n = scored.len() as f64;
    EvalResult {
        task,
        all: Stats::from_values(&all),
        legal_only: Stats::from_values(&legal),
        legal_rate: legal.len() as f64 / n,
        accuracy: task
            .is_binary()
            .then(|| scored.iter().filter(|s| s.correct).count() as f64 / n),
    }
}

/// Greedy-decoding evaluation of a policy.
pub fn evaluate(params: &PolicyParams, env: &Environment, task: TaskKind, n: usize, eval_seed: u64) -> Result<EvalResult> {
    Ok(evaluate_with(&PolicyResponder(params), env, task, n, eval_seed)?.0)
}

/// Monte-Carlo random-action baselines for every task.
pub fn task_baselines(env: &Environment, n: usize, seed: u64) -> Result<BTreeMap<TaskKind, BaselineEstimate>> {
    TaskKind::ALL
        .par_iter()
        .map(|&t| Ok((t, baseline_reward(t, &env.world, &env.reward, n, seed)?)))
        .collect()
}

/// A training run directory as seen by the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub method: Method,
    pub trained_on: String,
    pub dir: PathBuf,
}

impl ModelRun {
    /// Reads the method and training tasks from the run's frozen config.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        Ok(ModelRun {
            method: cfg.method,
            trained_on: cfg.trained_on_label(),
            dir: dir.to_path_buf(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSelection {
    All,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub method: String,
    pub trained_on: String,
    pub evaluated_on: TaskKind,
    pub step: u64,
    /// `None` marks a missing checkpoint.
    pub result: Option<CellScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub legal_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalMatrix {
    pub cells: Vec<MatrixCell>,
    pub baselines: BTreeMap<TaskKind, Stats>,
}

pub const MATRIX_SCHEMA_VERSION: u32 = 1;
pub const MATRIX_COLUMNS: [&str; 8] = [
    "method",
    "trained_on",
    "evaluated_on",
    "step",
    "mean",
    "ci_low",
    "ci_high",
    "legal_rate",
];
const ABSENT: &str = "NA";

pub(crate) fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        ABSENT.to_string()
    }
}

fn parse_num(s: &str) -> Result<Option<f64>> {
    if s == ABSENT {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Config(format!("bad number '{s}' in matrix CSV")))
}

impl EvalMatrix {
    pub fn trained_on_labels(&self) -> Vec<String> {
        self.cells
            .iter()
            .map(|c| c.trained_on.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn methods(&self) -> Vec<String> {
        self.cells
            .iter()
            .map(|c| c.method.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Final-step cell for a model and evaluation task.
    pub fn final_cell(&self, method: &str, trained_on: &str, evaluated_on: TaskKind) -> Option<&MatrixCell> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.trained_on == trained_on && c.evaluated_on == evaluated_on)
            .max_by_key(|c| c.step)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MATRIX_COLUMNS)?;
        for c in &self.cells {
            let (mean, lo, hi, legal) = match &c.result {
                Some(s) => (fmt_num(s.mean), fmt_num(s.ci_low), fmt_num(s.ci_high), fmt_num(s.legal_rate)),
                None => (ABSENT.into(), ABSENT.into(), ABSENT.into(), ABSENT.into()),
            };
            w.write_record([
                c.method.clone(),
                c.trained_on.clone(),
                c.evaluated_on.name().to_string(),
                c.step.to_string(),
                mean,
                lo,
                hi,
                legal,
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn baselines_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task", "mean", "ci_low", "ci_high", "n"])?;
        for (t, s) in &self.baselines {
            w.write_record([t.name().to_string(), fmt_num(s.mean), fmt_num(s.ci_low), fmt_num(s.ci_high), s.n.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Read `matrix.csv` and (if present) `baselines.csv` from `dir`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("matrix.csv");
        let mut r = csv::Reader::from_path(&path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != MATRIX_COLUMNS {
            return Err(Error::Config(format!("{} does not have the matrix columns", path.display())));
        }
        let mut cells = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let nums = (4..8).map(|i| parse_num(&rec[i])).collect::<Result<Vec<_>>>()?;
            let result = match (nums[0], nums[1], nums[2], nums[3]) {
                (Some(mean), Some(ci_low), Some(ci_high), Some(legal_rate)) => Some(CellScore {
                    mean,
                    ci_low,
                    ci_high,
                    legal_rate,
                }),
                _ => None,
            };
            cells.push(MatrixCell {
                method: rec[0].to_string(),
                trained_on: rec[1].to_string(),
                evaluated_on: rec[2].parse()?,
                step: rec[3]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad step '{}' in matrix CSV", &rec[3])))?,
                result,
            });
        }
        let mut baselines = BTreeMap::new();
        let bpath = dir.join("baselines.csv");
        if bpath.exists() {
            let mut r = csv::Reader::from_path(&bpath)?;
            for rec in r.records() {
                let rec = rec?;
                let num = |i: usize| parse_num(&rec[i]).map(|v| v.unwrap_or(f64::NAN));
                baselines.insert(
                    rec[0].parse()?,
                    Stats {
                        mean: num(1)?,
                        ci_low: num(2)?,
                        ci_high: num(3)?,
                        n: rec[4].parse().map_err(|_| Error::Config("bad n in baselines.csv".into()))?,
                    },
                );
            }
        }
        Ok(EvalMatrix { cells, baselines })
    }
}

/// Evaluate every checkpoint of every run on every task.
///
/// The step grid is the union of checkpoint steps across runs; a run that
/// lacks one of those steps gets an absent cell there.
pub fn generalization_matrix(
    runs: &[ModelRun],
    selection: StepSelection,
    env: &Environment,
    n: usize,
    eval_seed: u64,
    baselines: &BTreeMap<TaskKind, BaselineEstimate>,
) -> Result<EvalMatrix> {
    let mut found = Vec::with_capacity(runs.len());
    for run in runs {
        let mut cks: BTreeMap<u64, PathBuf> = list_checkpoints(&run.dir)?.into_iter().collect();
        if selection == StepSelection::Final {
            cks = cks.into_iter().next_back().into_iter().collect();
        }
        found.push(cks);
    }
    let mut grid: BTreeSet<u64> = found.iter().flat_map(|m| m.keys().copied()).collect();
    if grid.is_empty() {
        grid.insert(0);
    }
    let mut cells = Vec::new();
    for (run, cks) in runs.iter().zip(&found) {
        let steps: Vec<u64> = match selection {
            StepSelection::All => grid.iter().copied().collect(),
            StepSelection::Final => vec![cks.keys().next_back().copied().unwrap_or(*grid.iter().next_back().unwrap())],
        };
        for step in steps {
            let params = match cks.get(&step) {
                Some(p) => Some(Checkpoint::load(p, None)?.params),
                None => None,
            };
            for &task in &TaskKind::ALL {
                let result = match &params {
                    Some(p) => {
                        let r = evaluate(p, env, task, n, eval_seed)?;
                        Some(CellScore {
                            mean: r.all.mean,
                            ci_low: r.all.ci_low,
                            ci_high: r.all.ci_high,
                            legal_rate: r.legal_rate,
                        })
                    }
                    None => None,
                };
                cells.push(MatrixCell {
                    method: run.method.name().to_string(),
                    trained_on: run.trained_on.clone(),
                    evaluated_on: task,
                    step,
                    result,
                });
            }
        }
    }
    Ok(EvalMatrix {
        cells,
        baselines: baselines.iter().map(|(t, b)| (*t, Stats::from_baseline(b))).collect(),
    })
}

/// Real-image binary stability evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEval {
    pub n: usize,
    /// Correct answers over all images.
    pub accuracy: f64,
    pub accuracy_ci: (f64, f64),
    /// Mean binary reward; illegal answers score −1.
    pub score: Stats,
    pub legal_rate: f64,
    pub answers: Vec<(String, String, bool)>,
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Read `(filename, stable)` labels; `stable` must be 0 or 1.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, bool>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Config(format!("{}: expected filename,stable rows", path.display())));
        }
        let stable = match rec[1].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Config(format!(
                    "{}: label '{other}' for {} is not 0 or 1",
                    path.display(),
                    &rec[0]
                )))
            }
        };
        out.insert(rec[0].trim().to_string(), stable);
    }
    Ok(out)
}

/// Greedy binary answers on a directory of images scored against labels.
pub fn external_binary_eval(params: &PolicyParams, image_dir: &Path, labels_csv: &Path) -> Result<ExternalEval> {
    let labels = read_labels(labels_csv)?;
    let entries = std::fs::read_dir(image_dir).map_err(|e| Error::io(image_dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(image_dir, e))?.path();
        if path.is_file() && is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no images found in {}", image_dir.display())));
    }
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    let unlabeled: Vec<&str> = names.iter().filter(|n| !labels.contains_key(*n)).map(String::as_str).collect();
    if !unlabeled.is_empty() {
        return Err(Error::Config(format!("no label for: {}", unlabeled.join(", "))));
    }
    let task = TaskKind::BinaryStabilityTop;
    let results = files
        .par_iter()
        .zip(&names)
        .map(|(path, name)| {
            let img = Image::load_resized(path, IMAGE_SIZE)?;
            let enc = params.encode(&img)?;
            let answer = params.greedy(&enc, task);
            let parsed = crate::tasks::parse_answer(&answer, task);
            let stable = labels[name];
            let reward = match parsed {
                ParsedAction::Yes if stable => 1.0,
                ParsedAction::No if !stable => 1.0,
                ParsedAction::Yes | ParsedAction::No => 0.0,
                _ => crate::tasks::PENALTY_BINARY_ILLEGAL,
            };
            Ok((name.clone(), answer.to_string(), parsed.is_legal(), reward))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = results.len();
    let rewards: Vec<f64> = results.iter().map(|r| r.3).collect();
    let correct: Vec<f64> = rewards.iter().map(|&r| if r == 1.0 { 1.0 } else { 0.0 }).collect();
    let acc = Stats::from_values(&correct);
    Ok(ExternalEval {
        n,
        accuracy: acc.mean,
        accuracy_ci: (acc.ci_low, acc.ci_high),
        score: Stats::from_values(&rewards),
        legal_rate: results.iter().filter(|r| r.2).count() as f64 / n as f64,
        answers: results.into_iter().map(|(a, b, c, _)| (a, b, c)).collect(),
    })
}

/// Render `n` held-out binary instances into `dir` with a labels CSV, in
/// the layout `external_binary_eval` reads.
pub fn write_binary_image_set(env: &Environment, n: usize, eval_seed: u64, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["filename", "stable"])?;
    for i in 0..n as u64 {
        let (inst, img) = env.instance(TaskKind::BinaryStabilityTop, seed::eval_instance_seed(eval_seed, i))?;
        let name = format!("tower_{i:05}.png");
        img.save_png(&dir.join(&name))?;
        w.write_record([name, if inst.stable { "1".into() } else { "0".into() }])?;
    }
    let path = dir.join("labels.csv");
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_hits_every_ceiling() {
        let env = Environment::default();
        for &task in &TaskKind::ALL {
            let (r, _) = evaluate_with(&OracleResponder, &env, task, 100, 5).unwrap();
            assert_eq!(r.all.mean, task.ceiling(), "{task}");
            assert_eq!(r.legal_rate, 1.0);
        }
    }

    #[test]
    fn evaluation_needs_enough_instances() {
        let env = Environment::default();
        assert!(evaluate_with(&OracleResponder, &env, TaskKind::XOnlyTop, 99, 0).is_err());
    }

    #[test]
    fn matrix_csv_round_trip_keeps_absent_cells() {
        let m = EvalMatrix {
            cells: vec![
                MatrixCell {
                    method: "grpo".into(),
                    trained_on: "xonly-top".into(),
                    evaluated_on: TaskKind::XOnlyTop,
                    step: 10,
                    result: Some(CellScore {
                        mean: 19.5,
                        ci_low: 19.0,
                        ci_high: 20.0,
                        legal_rate: 1.0,
                    }),
                },
                MatrixCell {
                    method: "grpo".into(),
                    trained_on: "xonly-top".into(),
                    evaluated_on: TaskKind::XYSide,
                    step: 20,
                    result: None,
                },
            ],
            baselines: BTreeMap::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("matrix.csv"), m.to_csv().unwrap()).unwrap();
        let back = EvalMatrix::read_dir(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_csv().unwrap().contains("NA"));
    }
}

//! Linear decodability probes on frozen activations.
//!
//! Stability is probed with L2-regularized logistic regression fitted by
//! L-BFGS, the signed top-block offset with closed-form ridge regression.
//! Features are standardized with training-fold statistics and the
//! intercept is never penalized.

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::policy::PolicyParams;
use crate::render::{world_to_pixel, Image};
use crate::seed;
use crate::tasks::TaskKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTarget {
    BinaryStability,
    XOffset,
    /// Stability labels permuted at random; a chance-level control.
    ShuffledStability,
}

impl ProbeTarget {
    pub fn name(self) -> &'static str {
        match self {
            ProbeTarget::BinaryStability => "binary-stability",
            ProbeTarget::XOffset => "x-offset",
            ProbeTarget::ShuffledStability => "shuffled-stability",
        }
    }

    pub fn is_classification(self) -> bool {
        self != ProbeTarget::XOffset
    }
}

impl std::str::FromStr for ProbeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary-stability" => Ok(ProbeTarget::BinaryStability),
            "x-offset" => Ok(ProbeTarget::XOffset),
            "shuffled-stability" => Ok(ProbeTarget::ShuffledStability),
            other => Err(Error::Probe(format!("unknown probe target '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n_images: usize,
    pub folds: usize,
    pub lambda: f64,
    pub grad_tol: f64,
    pub max_iters: u64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_images: 600,
            folds: 10,
            lambda: 1.0,
            grad_tol: 1e-6,
            max_iters: 1000,
            seed: 0,
        }
    }
}

/// Per-fold test metric: accuracy for classification targets, R² for the offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub model_tag: String,
    pub target: ProbeTarget,
    pub layer: String,
    pub folds: Vec<f64>,
}

impl ProbeResult {
    pub fn mean(&self) -> f64 {
        self.folds.iter().sum::<f64>() / self.folds.len() as f64
    }
}

/// Activations and labels for a fixed set of top-block images.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    /// `(layer name, rows)`; `pixels` first, then encoder layers when a model is given.
    pub layers: Vec<(String, Vec<Vec<f64>>)>,
    pub stable: Vec<bool>,
    pub offsets: Vec<f64>,
}

/// World heights whose image rows cross the middle of block levels 2 to 4,
/// where a displaced top block can sit.
const PIXEL_ROW_HEIGHTS: [f64; 3] = [300.0, 500.0, 700.0];

/// Raw RGB values (scaled to [0, 1]) along the rows crossing the possible
/// top-block levels.
pub fn pixel_rows(img: &Image, env: &Environment) -> Vec<f64> {
    let mut out = Vec::with_capacity(PIXEL_ROW_HEIGHTS.len() * img.width * 3);
    for &y in &PIXEL_ROW_HEIGHTS {
        let (_, row) = world_to_pixel(0.0, y, &env.camera);
        let row = row.clamp(0, img.height as i64 - 1) as usize;
        out.extend(
            img.pixels[row * img.width * 3..(row + 1) * img.width * 3]
                .iter()
                .map(|&v| v as f64 / 255.0),
        );
    }
    out
}

/// Render `n` held-out top-block images and capture pixel rows plus, if a
/// model is given, every encoder layer.
pub fn collect_probe_data(params: Option<&PolicyParams>, env: &Environment, n: usize, eval_seed: u64) -> Result<ProbeData> {
    let rows = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (inst, img) = env.instance(TaskKind::BinaryStabilityTop, seed::eval_instance_seed(eval_seed, i))?;
            let mut layers = vec![pixel_rows(&img, env)];
            if let Some(p) = params {
                layers.extend(p.encode(&img)?.trace().layers);
            }
            Ok((layers, inst.stable, inst.scene.displaced_offset(&env.world)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_layers = rows.first().map_or(1, |r| r.0.len());
    let mut layers: Vec<(String, Vec<Vec<f64>>)> = (0..n_layers)
        .map(|l| {
            let name = if l == 0 { "pixels".to_string() } else { format!("enc{}", l - 1) };
            (name, Vec::with_capacity(n))
        })
        .collect();
    let mut stable = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);
    for (acts, s, o) in rows {
        for (slot, a) in layers.iter_mut().zip(acts) {
            slot.1.push(a);
        }
        stable.push(s);
        offsets.push(o);
    }
    Ok(ProbeData { layers, stable, offsets })
}

/// Fold index per sample, stratified by label: each class is shuffled and
/// dealt round-robin across the folds.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Probe("need at least 2 folds".into()));
    }
    let mut fold = vec![0; labels.len()];
    let mut rng = seed::rng(seed::derive(seed, &[0x666f6c64]));
    let mut offset = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Probe(format!(
                "class {class} has {} samples, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = (j + offset) % k;
        }
        offset = labels.iter().filter(|&&l| l == class).count() % k;
    }
    Ok(fold)
}

/// Column means and standard deviations (constant columns get scale 1).
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&[f64]]) -> Self {
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Negative log-likelihood plus `λ/2 ‖w‖²`; parameter layout `[w, b]`.
struct LogisticProblem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    lambda: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl CostFunction for LogisticProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (w, b) = p.split_at(p.len() - 1);
        let nll: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(x, &y)| {
                let z = dot(w, x) + b[0];
                softplus(z) - y * z
            })
            .sum();
        Ok(nll + 0.5 * self.lambda * dot(w, w))
    }
}

impl Gradient for LogisticProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let d = p.len() - 1;
        let (w, b) = p.split_at(d);
        let mut g: Vec<f64> = w.iter().map(|v| self.lambda * v).chain(std::iter::once(0.0)).collect();
        for (x, &y) in self.x.iter().zip(self.y) {
            let r = sigmoid(dot(w, x) + b[0]) - y;
            for (gi, xi) in g[..d].iter_mut().zip(x) {
                *gi += r * xi;
            }
            g[d] += r;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct LogisticModel {
    std: Standardizer,
    weights: Vec<f64>,
    bias: f64,
}

impl LogisticModel {
    pub fn predict(&self, row: &[f64]) -> bool {
        dot(&self.weights, &self.std.apply(row)) + self.bias > 0.0
    }
}

pub fn logistic_fit(rows: &[&[f64]], labels: &[bool], lambda: f64, grad_tol: f64, max_iters: u64) -> Result<LogisticModel> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::Probe("logistic fit needs matching, non-empty rows and labels".into()));
    }
    let std = Standardizer::fit(rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| std.apply(r)).collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let problem = LogisticProblem { x: &x, y: &y, lambda };
    let d = x[0].len();
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_grad(grad_tol)
        .map_err(|e| Error::Probe(e.to_string()))?
        .with_tolerance_cost(0.0)
        .map_err(|e| Error::Probe(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(vec![0.0; d + 1]).max_iters(max_iters))
        .run()
        .map_err(|e| Error::Probe(format!("logistic fit failed: {e}")))?;
    let p = res
        .state()
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Probe("logistic fit produced no parameters".into()))?;
    Ok(LogisticModel {
        std,
        bias: p[d],
        weights: p[..d].to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct RidgeModel {
    std: Standardizer,
    weights: Vec<f64>,
    intercept: f64,
}

impl RidgeModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        dot(&self.weights, &self.std.apply(row)) + self.intercept
    }
}

/// Closed-form ridge; solves in the primal or dual, whichever is smaller.
pub fn ridge_fit(rows: &[&[f64]], targets: &[f64], lambda: f64) -> Result<RidgeModel> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::Probe("ridge fit needs matching, non-empty rows and targets".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Probe("ridge lambda must be positive".into()));
    }
    let std = Standardizer::fit(rows);
    let n = rows.len();
    let p = rows[0].len();
    let x = DMatrix::from_fn(n, p, |i, j| (rows[i][j] - std.mean[j]) / std.scale[j]);
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
    let singular = || Error::Probe("ridge system is not positive definite".into());
    let w = if p <= n {
        let a = x.tr_mul(&x) + DMatrix::identity(p, p) * lambda;
        a.cholesky().ok_or_else(singular)?.solve(&x.tr_mul(&y))
    } else {
        let k = &x * x.transpose() + DMatrix::identity(n, n) * lambda;
        let alpha = k.cholesky().ok_or_else(singular)?.solve(&y);
        x.tr_mul(&alpha)
    };
    Ok(RidgeModel {
        std,
        weights: w.iter().copied().collect(),
        intercept: y_mean,
    })
}

/// Coefficient of determination against the test fold's own mean.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Cross-validated metric of one probe on one activation matrix.
pub fn cross_validate(
    rows: &[Vec<f64>],
    target: ProbeTarget,
    labels: &[bool],
    offsets: &[f64],
    folds: &[usize],
    cfg: &ProbeConfig,
) -> Result<Vec<f64>> {
    (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..rows.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..rows.len()).filter(|&i| folds[i] == f).collect();
            if test.is_empty() {
                return Err(Error::Probe(format!("fold {f} is empty")));
            }
            let train_rows: Vec<&[f64]> = train.iter().map(|&i| rows[i].as_slice()).collect();
            if target.is_classification() {
                let y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
                let model = logistic_fit(&train_rows, &y, cfg.lambda, cfg.grad_tol, cfg.max_iters)?;
                let correct = test.iter().filter(|&&i| model.predict(&rows[i]) == labels[i]).count();
                Ok(correct as f64 / test.len() as f64)
            } else {
                let y: Vec<f64> = train.iter().map(|&i| offsets[i]).collect();
                let model = ridge_fit(&train_rows, &y, cfg.lambda)?;
                let truth: Vec<f64> = test.iter().map(|&i| offsets[i]).collect();
                let pred: Vec<f64> = test.iter().map(|&i| model.predict(&rows[i])).collect();
                Ok(r_squared(&truth, &pred))
            }
        })
        .collect()
}

/// Probe every captured layer for stability, offset and the shuffled control.
pub fn run_probes(data: &ProbeData, model_tag: &str, cfg: &ProbeConfig) -> Result<Vec<ProbeResult>> {
    let folds = stratified_folds(&data.stable, cfg.folds, cfg.seed)?;
    let mut shuffled = data.stable.clone();
    shuffled.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[0x73687566])));
    let shuffled_folds = stratified_folds(&shuffled, cfg.folds, cfg.seed ^ 1)?;
    let mut out = Vec::new();
    for (name, rows) in &data.layers {
        for target in [ProbeTarget::BinaryStability, ProbeTarget::XOffset, ProbeTarget::ShuffledStability] {
            let (labels, folds) = match target {
                ProbeTarget::ShuffledStability => (&shuffled, &shuffled_folds),
                _ => (&data.stable, &folds),
            };
            out.push(ProbeResult {
                model_tag: model_tag.to_string(),
                target,
                layer: name.clone(),
                folds: cross_validate(rows, target, labels, &data.offsets, folds, cfg)?,
            });
        }
    }
    Ok(out)
}

pub fn probes_csv(results: &[ProbeResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_tag", "target", "layer", "fold", "metric"])?;
    for r in results {
        for (f, m) in r.folds.iter().enumerate() {
            w.write_record([
                r.model_tag.clone(),
                r.target.name().to_string(),
                r.layer.clone(),
                f.to_string(),
                super::fmt_num(*m),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parse a `probes.csv` back into results, preserving row order.
pub fn read_probes_csv(path: &std::path::Path) -> Result<Vec<ProbeResult>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<ProbeResult> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let target: ProbeTarget = rec[1].parse()?;
        let metric: f64 = rec[4].parse().unwrap_or(f64::NAN);
        match out.last_mut() {
            Some(last) if last.model_tag == rec[0] && last.target == target && last.layer == rec[2] => {
                last.folds.push(metric)
            }
            _ => out.push(ProbeResult {
                model_tag: rec[0].to_string(),
                target,
                layer: rec[2].to_string(),
                folds: vec![metric],
            }),
        }
    }
    Ok(out)
}

//! CSV, SVG and HTML report emission.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::probe::{probes_csv, ProbeResult, ProbeTarget};
use super::svg::{esc, Panel, Point, Series, Svg};
use super::{fmt_num, EvalMatrix, MatrixCell, MATRIX_SCHEMA_VERSION};
use crate::tasks::TaskKind;
use crate::train::LogRecord;
use crate::{Error, Result};

const PANEL_W: f64 = 220.0;
const PANEL_H: f64 = 150.0;

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn score_range(task: TaskKind) -> (f64, f64) {
    if task.is_binary() {
        (-1.0, 1.0)
    } else {
        (-5.0, 20.0)
    }
}

fn cell_data(c: &MatrixCell) -> Vec<(&'static str, String)> {
    vec![
        ("method", c.method.clone()),
        ("trained-on", c.trained_on.clone()),
        ("evaluated-on", c.evaluated_on.name().to_string()),
        ("step", c.step.to_string()),
        ("mean", c.result.map_or("NA".to_string(), |r| fmt_num(r.mean))),
    ]
}

/// Grid of per-cell learning curves: rows are evaluation tasks, columns
/// are training tasks, one line per method, dashed random baseline.
pub fn matrix_svg(m: &EvalMatrix) -> String {
    let cols = m.trained_on_labels();
    let methods = m.methods();
    let width = 120.0 + PANEL_W * cols.len().max(1) as f64;
    let height = 40.0 + PANEL_H * TaskKind::ALL.len() as f64;
    let mut svg = Svg::new(width, height);
    svg.text(width / 2.0, 16.0, "middle", 12.0, "trained on (columns) vs evaluated on (rows)");
    if cols.is_empty() {
        svg.text(width / 2.0, height / 2.0, "middle", 12.0, "no data");
        return svg.finish();
    }
    svg.legend(8.0, 40.0, &methods);
    let (step_lo, step_hi) = m
        .cells
        .iter()
        .fold((u64::MAX, 0), |(lo, hi), c| (lo.min(c.step), hi.max(c.step)));
    for (ri, &task) in TaskKind::ALL.iter().enumerate() {
        for (ci, col) in cols.iter().enumerate() {
            let cells: Vec<&MatrixCell> = m
                .cells
                .iter()
                .filter(|c| &c.trained_on == col && c.evaluated_on == task)
                .collect();
            let series: Vec<Series> = methods
                .iter()
                .map(|meth| Series {
                    label: meth.clone(),
                    points: cells
                        .iter()
                        .filter(|c| &c.method == meth && c.result.is_some())
                        .map(|c| Point {
                            x: c.step as f64,
                            y: c.result.unwrap().mean,
                            data: cell_data(c),
                        })
                        .collect(),
                })
                .collect();
            let absent: Vec<&&MatrixCell> = cells.iter().filter(|c| c.result.is_none()).collect();
            let placeholder = if cells.is_empty() {
                Some(("no data", Vec::new()))
            } else if !absent.is_empty() {
                let steps: Vec<String> = absent.iter().map(|c| c.step.to_string()).collect();
                let methods: Vec<String> = absent.iter().map(|c| c.method.clone()).collect();
                Some((
                    "absent",
                    vec![
                        ("method", methods.join(" ")),
                        ("trained-on", col.clone()),
                        ("evaluated-on", task.name().to_string()),
                        ("step", steps.join(" ")),
                        ("mean", "NA".to_string()),
                    ],
                ))
            } else {
                None
            };
            let title = format!("{col} \u{2192} {}", task.name());
            svg.panel(
                110.0 + PANEL_W * ci as f64,
                30.0 + PANEL_H * ri as f64,
                PANEL_W,
                PANEL_H,
                &Panel {
                    title: &title,
                    x_range: (step_lo as f64, step_hi as f64),
                    y_range: score_range(task),
                    series: &series,
                    baseline: m.baselines.get(&task).map(|b| b.mean),
                    placeholder,
                },
            );
        }
    }
    svg.finish()
}

fn layer_order(probes: &[ProbeResult]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in probes {
        if !out.contains(&p.layer) {
            out.push(p.layer.clone());
        }
    }
    out
}

/// Mean probe metric by layer, one panel per target, one line per model.
pub fn probes_svg(probes: &[ProbeResult]) -> String {
    let targets = [ProbeTarget::BinaryStability, ProbeTarget::XOffset, ProbeTarget::ShuffledStability];
    let layers = layer_order(probes);
    let mut tags: Vec<String> = probes.iter().map(|p| p.model_tag.clone()).collect();
    tags.sort();
    tags.dedup();
    let width = 120.0 + PANEL_W * targets.len() as f64;
    let mut svg = Svg::new(width, 60.0 + PANEL_H);
    svg.text(width / 2.0, 16.0, "middle", 12.0, "probe accuracy / R\u{b2} by layer");
    svg.legend(8.0, 40.0, &tags);
    for (i, &target) in targets.iter().enumerate() {
        let series: Vec<Series> = tags
            .iter()
            .map(|tag| Series {
                label: tag.clone(),
                points: probes
                    .iter()
                    .filter(|p| &p.model_tag == tag && p.target == target)
                    .map(|p| Point {
                        x: layers.iter().position(|l| l == &p.layer).unwrap() as f64,
                        y: p.mean(),
                        data: vec![
                            ("model-tag", p.model_tag.clone()),
                            ("target", target.name().to_string()),
                            ("layer", p.layer.clone()),
                            ("metric", fmt_num(p.mean())),
                        ],
                    })
                    .collect(),
            })
            .collect();
        let empty = series.iter().all(|s| s.points.is_empty());
        svg.panel(
            110.0 + PANEL_W * i as f64,
            30.0,
            PANEL_W,
            PANEL_H,
            &Panel {
                title: target.name(),
                x_range: (0.0, layers.len().saturating_sub(1) as f64),
                y_range: if target == ProbeTarget::XOffset { (-0.5, 1.0) } else { (0.0, 1.0) },
                series: &series,
                baseline: target.is_classification().then_some(0.5),
                placeholder: empty.then(|| ("no data", Vec::new())),
            },
        );
    }
    svg.finish()
}

/// Running-average training curves, one panel per log.
pub fn training_svg(logs: &[(String, Vec<LogRecord>)]) -> String {
    let cols = 3usize;
    let rows = logs.len().div_ceil(cols).max(1);
    let width = 20.0 + PANEL_W * cols as f64;
    let mut svg = Svg::new(width, 30.0 + PANEL_H * rows as f64);
    svg.text(width / 2.0, 16.0, "middle", 12.0, "training curves (running average, window 25)");
    if logs.is_empty() {
        svg.text(width / 2.0, 80.0, "middle", 12.0, "no data");
    }
    for (i, (name, recs)) in logs.iter().enumerate() {
        let (lo, hi) = recs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.running_avg25), hi.max(r.running_avg25))
        });
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo.floor(), hi.ceil()) } else { (0.0, 1.0) };
        let series = [Series {
            label: name.clone(),
            points: recs
                .iter()
                .map(|r| Point {
                    x: r.step as f64,
                    y: r.running_avg25,
                    data: Vec::new(),
                })
                .collect(),
        }];
        svg.panel(
            10.0 + PANEL_W * (i % cols) as f64,
            24.0 + PANEL_H * (i / cols) as f64,
            PANEL_W,
            PANEL_H,
            &Panel {
                title: name,
                x_range: (0.0, recs.last().map_or(1.0, |r| r.step as f64)),
                y_range: (lo, hi),
                series: &series,
                baseline: None,
                placeholder: recs.is_empty().then(|| ("no data", Vec::new())),
            },
        );
    }
    svg.finish()
}

fn summary_html(m: &EvalMatrix, probes: &[ProbeResult], logs: &[(String, Vec<LogRecord>)]) -> String {
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>towerlab report</title>\n");
    h.push_str("<style>body{font-family:sans-serif}td,th{border:1px solid #ccc;padding:2px 6px}table{border-collapse:collapse}</style>\n");
    h.push_str("</head><body>\n<h1>towerlab report</h1>\n");

    writeln!(h, "<h2>Generalization matrix (final checkpoints, schema v{MATRIX_SCHEMA_VERSION})</h2>").unwrap();
    let cols = m.trained_on_labels();
    let methods = m.methods();
    if cols.is_empty() {
        h.push_str("<p>no data</p>\n");
    } else {
        for meth in &methods {
            writeln!(h, "<h3>{}</h3>\n<table><tr><th>evaluated on \\ trained on</th>", esc(meth)).unwrap();
            for c in &cols {
                write!(h, "<th>{}</th>", esc(c)).unwrap();
            }
            h.push_str("<th>random baseline</th></tr>\n");
            for &task in &TaskKind::ALL {
                write!(h, "<tr><th>{}</th>", task.name()).unwrap();
                for c in &cols {
                    let cell = m.final_cell(meth, c, task);
                    let text = match cell.and_then(|c| c.result) {
                        Some(r) => format!("{} [{}, {}]", fmt_num(r.mean), fmt_num(r.ci_low), fmt_num(r.ci_high)),
                        None if cell.is_some() => "absent".to_string(),
                        None => "no data".to_string(),
                    };
                    write!(h, "<td>{text}</td>").unwrap();
                }
                let base = m.baselines.get(&task).map_or("no data".to_string(), |b| fmt_num(b.mean));
                writeln!(h, "<td>{base}</td></tr>").unwrap();
            }
            h.push_str("</table>\n");
        }
    }
    h.push_str("<p><img src=\"matrix.svg\" alt=\"matrix\"></p>\n");

    h.push_str("<h2>Probes (mean over folds)</h2>\n");
    if probes.is_empty() {
        h.push_str("<p>no data</p>\n");
    } else {
        h.push_str("<table><tr><th>model</th><th>target</th><th>layer</th><th>mean</th><th>folds</th></tr>\n");
        for p in probes {
            writeln!(
                h,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                esc(&p.model_tag),
                p.target.name(),
                esc(&p.layer),
                fmt_num(p.mean()),
                p.folds.len()
            )
            .unwrap();
        }
        h.push_str("</table>\n");
    }
    h.push_str("<p><img src=\"probes.svg\" alt=\"probes\"></p>\n");

    h.push_str("<h2>Training logs</h2>\n");
    if logs.is_empty() {
        h.push_str("<p>no data</p>\n");
    } else {
        h.push_str("<table><tr><th>run</th><th>steps</th><th>final running average</th><th>sequences</th><th>tokens</th></tr>\n");
        for (name, recs) in logs {
            match recs.last() {
                Some(r) => writeln!(
                    h,
                    "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                    esc(name),
                    r.step,
                    fmt_num(r.running_avg25),
                    r.sequences_seen,
                    r.tokens_seen
                ),
                None => writeln!(h, "<tr><td>{}</td><td colspan=\"4\">no data</td></tr>", esc(name)),
            }
            .unwrap();
        }
        h.push_str("</table>\n");
    }
    h.push_str("<p><img src=\"training.svg\" alt=\"training curves\"></p>\n</body></html>\n");
    h
}

/// Write every report artifact into `out_dir`; returns the written paths.
/// Identical inputs give byte-identical files.
pub fn emit_report(
    matrix: &EvalMatrix,
    probes: &[ProbeResult],
    logs: &[(String, Vec<LogRecord>)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut sorted_logs: Vec<(String, Vec<LogRecord>)> = logs.to_vec();
    sorted_logs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut files = write_matrix_files(matrix, out_dir)?;
    files.extend([
        write_file(out_dir, "probes.csv", &probes_csv(probes)?)?,
        write_file(out_dir, "probes.svg", &probes_svg(probes))?,
        write_file(out_dir, "training.svg", &training_svg(&sorted_logs))?,
        write_file(out_dir, "index.html", &summary_html(matrix, probes, &sorted_logs))?,
    ]);
    Ok(files)
}

/// `matrix.csv`, `baselines.csv`, the schema descriptor and `matrix.svg`.
pub fn write_matrix_files(matrix: &EvalMatrix, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let schema: BTreeMap<&str, serde_json::Value> = [
        ("version", serde_json::json!(MATRIX_SCHEMA_VERSION)),
        ("columns", serde_json::json!(super::MATRIX_COLUMNS)),
        ("absent_marker", serde_json::json!("NA")),
    ]
    .into_iter()
    .collect();
    Ok(vec![
        write_file(out_dir, "matrix.csv", &matrix.to_csv()?)?,
        write_file(out_dir, "baselines.csv", &matrix.baselines_csv()?)?,
        write_file(out_dir, "matrix_schema.json", &(serde_json::to_string_pretty(&schema)? + "\n"))?,
        write_file(out_dir, "matrix.svg", &matrix_svg(matrix))?,
    ])
}

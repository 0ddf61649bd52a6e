//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's geometry or reward code.
#![allow(dead_code)]

pub mod fd;

use towerlab::tasks::{ParsedAction, TaskKind, TaskInstance};
use towerlab::world::{Block, TowerScene};

pub const W: f64 = 200.0;
pub const CENTER_X: f64 = 640.0;
const SAMPLES: usize = 40;
const EPS: f64 = 1e-9;

/// Point masses at the midpoints of a `SAMPLES` x `SAMPLES` grid over a block.
fn mass_points(b: &Block) -> impl Iterator<Item = f64> + '_ {
    let step = b.width / SAMPLES as f64;
    (0..SAMPLES * SAMPLES).map(move |k| b.x_center - b.width / 2.0 + step * ((k % SAMPLES) as f64 + 0.5))
}

/// Hull of the face-to-face contacts under the bottom of `upper`.
fn contact_interval(upper: &Block, below: &[&Block]) -> Option<(f64, f64)> {
    let (ul, ur) = (upper.x_center - upper.width / 2.0, upper.x_center + upper.width / 2.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for b in below {
        if ((b.y_bottom + b.height) - upper.y_bottom).abs() > EPS {
            continue;
        }
        let (l, r) = (ul.max(b.x_center - b.width / 2.0), ur.min(b.x_center + b.width / 2.0));
        if r - l > EPS {
            lo = lo.min(l);
            hi = hi.max(r);
        }
    }
    (hi > lo).then_some((lo, hi))
}

/// Brute-force settling: repeatedly find a block that would move (unsupported
/// or tipping about its contact interval), drop it and whatever it carries to
/// the floor far away, and record the motion. Stable means nothing moved.
pub fn settles_without_motion(scene: &TowerScene) -> bool {
    let mut blocks: Vec<Block> = scene.blocks.clone();
    let mut moved = false;
    let mut dump_x = 10_000.0;
    loop {
        let mut toppled = None;
        // highest first so a falling stack is handled as a unit
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        order.sort_by(|&a, &b| blocks[b].y_bottom.total_cmp(&blocks[a].y_bottom));
        for &i in &order {
            let b = &blocks[i];
            if b.y_bottom <= EPS {
                continue;
            }
            let below: Vec<&Block> = blocks.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b).collect();
            let Some((lo, hi)) = contact_interval(b, &below) else {
                toppled = Some(i);
                break;
            };
            // load: the block and everything resting on it, transitively
            let mut load = vec![i];
            let mut k = 0;
            while k < load.len() {
                let base = blocks[load[k]].clone();
                for (j, other) in blocks.iter().enumerate() {
                    let overlap = (other.x_center - base.x_center).abs() < (other.width + base.width) / 2.0 - EPS;
                    if !load.contains(&j) && (other.y_bottom - (base.y_bottom + base.height)).abs() <= EPS && overlap {
                        load.push(j);
                    }
                }
                k += 1;
            }
            let (mut m, mut mx) = (0.0, 0.0);
            for &j in &load {
                for x in mass_points(&blocks[j]) {
                    m += 1.0;
                    mx += x;
                }
            }
            let com = mx / m;
            // torque about each pivot must be restoring, a zero torque tips
            if !(com - lo > EPS && hi - com > EPS) {
                toppled = Some(i);
                break;
            }
        }
        match toppled {
            None => return !moved,
            Some(i) => {
                moved = true;
                blocks[i].y_bottom = 0.0;
                blocks[i].x_center = dump_x;
                dump_x += 1_000.0;
            }
        }
    }
}

pub fn g(d: f64) -> f64 {
    (-d * d).exp()
}

/// Reward written directly from the task definitions, using only raw block
/// coordinates.
pub fn reference_reward(inst: &TaskInstance, action: ParsedAction) -> f64 {
    let blocks = &inst.scene.blocks;
    let di = inst.scene.displaced_index;
    let moved = &blocks[di];
    let tower: Vec<&Block> = blocks.iter().enumerate().filter(|(i, _)| *i != di).map(|(_, b)| b).collect();
    let top = tower.iter().max_by(|a, b| (a.y_bottom + a.height).total_cmp(&(b.y_bottom + b.height)));
    let (top_x, top_y) = top.map_or((CENTER_X, 0.0), |b| (b.x_center, b.y_bottom + b.height));
    match (inst.task, action) {
        (TaskKind::BinaryStabilityTop, ParsedAction::Yes) => f64::from(inst.stable as u8),
        (TaskKind::BinaryStabilityTop, ParsedAction::No) => f64::from(!inst.stable as u8),
        (TaskKind::BinaryStabilityTop, _) => -1.0,
        (TaskKind::XOnlyTop, ParsedAction::MoveX(dx)) => {
            let x = moved.x_center + dx as f64;
            let d = (x - top_x).abs() / W;
            // a single cube on a cube stays put iff its center is strictly over the support
            if (x - top_x).abs() < W / 2.0 {
                20.0 * g(d)
            } else {
                2.0 * g(d) - 2.0
            }
        }
        (TaskKind::XOnlySide, ParsedAction::MoveX(dx)) => {
            let x = moved.x_center + dx as f64;
            let d = (x - top_x).abs() / W;
            if (x - top_x).abs() < W / 2.0 {
                20.0 * g(d)
            } else {
                2.0 * g(d) - 2.0
            }
        }
        (TaskKind::XYSide, ParsedAction::MoveXY(dx, dy)) => {
            let (x, y) = (moved.x_center + dx as f64, moved.y_bottom + dy as f64);
            if y < 0.0 {
                return -4.0;
            }
            let d = ((x - top_x).powi(2) + (y - top_y).powi(2)).sqrt() / W;
            let intersects = tower
                .iter()
                .any(|b| (x - b.x_center).abs() < W && (y - b.y_bottom).abs() < W);
            if intersects {
                2.0 * g(d) - 4.0
            } else if (y - top_y).abs() <= 10.0 && (x - top_x).abs() < W / 2.0 {
                20.0 * g(d)
            } else {
                2.0 * g(d) - 2.0
            }
        }
        _ => -5.0,
    }
}

/// Relative error used by the finite-difference checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

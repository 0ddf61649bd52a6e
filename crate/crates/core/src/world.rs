//! Block-tower scenes: procedural generation, the quasi-static stability
//! criterion, one-step action application and placement classification.
//!
//! Coordinates are world units with x growing to the right and y growing
//! upwards from the floor at `y = 0`. Towers stand centered on the world's
//! horizontal midpoint. Block offsets are drawn as whole world units so that
//! integer answers can land exactly on the optimal position.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::tasks::{TaskInstance, TaskKind};
use crate::{Error, Result};

const CONTACT_EPS: f64 = 1e-9;

/// Eight saturated colors; scenes draw from these without replacement.
pub const PALETTE: [[u8; 3]; 8] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 187, 0],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
    [227, 66, 170],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub x_center: f64,
    pub y_bottom: f64,
    pub width: f64,
    pub height: f64,
    pub color: [u8; 3],
}

impl Block {
    pub fn cube(x_center: f64, y_bottom: f64, side: f64, color: [u8; 3]) -> Self {
        Block {
            x_center,
            y_bottom,
            width: side,
            height: side,
            color,
        }
    }

    pub fn left(&self) -> f64 {
        self.x_center - self.width / 2.0
    }

    pub fn right(&self) -> f64 {
        self.x_center + self.width / 2.0
    }

    pub fn top(&self) -> f64 {
        self.y_bottom + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Area of the intersection of the two rectangles.
    pub fn overlap_area(&self, other: &Block) -> f64 {
        let w = self.right().min(other.right()) - self.left().max(other.left());
        let h = self.top().min(other.top()) - self.y_bottom.max(other.y_bottom);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    TopBlock,
    SideBlock,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::TopBlock => "top-block",
            DatasetKind::SideBlock => "side-block",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top-block" | "top" => Ok(DatasetKind::TopBlock),
            "side-block" | "side" => Ok(DatasetKind::SideBlock),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

/// A settled (or, after an action, possibly unsettled) tower scene.
///
/// `blocks` holds the tower bottom-to-top followed by the single displaced
/// block, so `displaced_index == blocks.len() - 1` for generated scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerScene {
    pub blocks: Vec<Block>,
    pub displaced_index: usize,
    pub dataset_kind: DatasetKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub block_width: f64,
    pub world_width: f64,
    pub world_height: f64,
    /// Half-extent of a support face, as a fraction of the supporting block's width.
    pub stability_margin: f64,
    /// Vertical slack for a block to count as resting on the tower top.
    pub snap_tolerance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            block_width: 200.0,
            world_width: 1280.0,
            world_height: 1280.0,
            stability_margin: 0.5,
            snap_tolerance: 10.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.block_width;
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Config("block_width must be positive".into()));
        }
        if !(self.stability_margin > 0.0) {
            return Err(Error::Config("stability_margin must be positive".into()));
        }
        if !(self.snap_tolerance >= 0.0) {
            return Err(Error::Config("snap_tolerance must be non-negative".into()));
        }
        let (_, side_hi) = self.side_offset_range();
        if self.world_width / 2.0 < side_hi as f64 + w / 2.0 {
            return Err(Error::Config(
                "world_width too small for the largest side-block offset".into(),
            ));
        }
        if self.world_height < 4.0 * w {
            return Err(Error::Config("world_height too small for a 4-block tower".into()));
        }
        Ok(())
    }

    pub fn tower_center_x(&self) -> f64 {
        self.world_width / 2.0
    }

    /// Integer range of top-block offset magnitudes: [0.05 W, 1.5 W].
    pub fn top_offset_range(&self) -> (i64, i64) {
        (
            (0.05 * self.block_width).ceil() as i64,
            (1.5 * self.block_width).floor() as i64,
        )
    }

    /// Integer range of side-block offset magnitudes: [1.25 W, 2.7 W].
    pub fn side_offset_range(&self) -> (i64, i64) {
        (
            (1.25 * self.block_width).ceil() as i64,
            (2.7 * self.block_width).floor() as i64,
        )
    }

    /// Half-width of the region in which a block counts as aligned with its support.
    pub fn support_half_width(&self) -> f64 {
        self.stability_margin * self.block_width
    }
}

impl TowerScene {
    pub fn displaced(&self) -> &Block {
        &self.blocks[self.displaced_index]
    }

    /// Every block except the displaced one.
    pub fn tower_blocks(&self) -> impl Iterator<Item = &Block> {
        let d = self.displaced_index;
        self.blocks
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != d)
            .map(|(_, b)| b)
    }

    /// Topmost block of the perfectly stacked tower, if any.
    pub fn tower_top_block(&self) -> Option<&Block> {
        self.tower_blocks()
            .max_by(|a, b| a.top().total_cmp(&b.top()))
    }

    /// Height of the tower's top plane (0 for an empty tower).
    pub fn tower_top_y(&self) -> f64 {
        self.tower_top_block().map_or(0.0, Block::top)
    }

    /// Signed x-offset of the displaced block from the tower center.
    pub fn displaced_offset(&self, cfg: &WorldConfig) -> f64 {
        self.displaced().x_center - cfg.tower_center_x()
    }

    /// Reflect the scene about the tower center.
    pub fn mirrored(&self, cfg: &WorldConfig) -> TowerScene {
        let c = cfg.tower_center_x();
        let mut out = self.clone();
        for b in &mut out.blocks {
            b.x_center = 2.0 * c - b.x_center;
        }
        out
    }
}

fn sample_colors(rng: &mut impl Rng, n: usize) -> Vec<[u8; 3]> {
    let mut palette = PALETTE.to_vec();
    palette.shuffle(rng);
    palette.truncate(n);
    palette
}

fn signed(rng: &mut impl Rng, magnitude: i64) -> f64 {
    if rng.gen_bool(0.5) {
        magnitude as f64
    } else {
        -(magnitude as f64)
    }
}

/// Stacked tower of `n` cubes centered on the world midpoint.
fn stacked(cfg: &WorldConfig, colors: &[[u8; 3]]) -> Vec<Block> {
    let w = cfg.block_width;
    colors
        .iter()
        .enumerate()
        .map(|(k, &c)| Block::cube(cfg.tower_center_x(), k as f64 * w, w, c))
        .collect()
}

/// A tower of 2–4 cubes whose top block is displaced sideways.
///
/// Without `force_label` the stable/unstable label is drawn with probability
/// one half; the offset is then resampled until the scene's stability matches.
pub fn generate_top_block_scene(
    seed: u64,
    cfg: &WorldConfig,
    force_label: Option<bool>,
) -> TowerScene {
    let mut rng = seed::rng(seed::derive(seed, &[0x746f70]));
    let n = rng.gen_range(2..=4usize);
    let colors = sample_colors(&mut rng, n);
    let want_stable = force_label.unwrap_or_else(|| rng.gen_bool(0.5));
    let (lo, hi) = cfg.top_offset_range();

    let mut blocks = stacked(cfg, &colors);
    let w = cfg.block_width;
    let mut scene = TowerScene {
        displaced_index: n - 1,
        dataset_kind: DatasetKind::TopBlock,
        seed,
        blocks: Vec::new(),
    };
    loop {
        let mag = rng.gen_range(lo..=hi);
        let offset = signed(&mut rng, mag);
        blocks[n - 1].x_center = cfg.tower_center_x() + offset;
        blocks[n - 1].y_bottom = (n - 1) as f64 * w;
        scene.blocks.clone_from(&blocks);
        if is_stable(&scene, cfg) == want_stable {
            return scene;
        }
    }
}

/// A tower of 1–3 cubes plus one cube resting on the floor beside it.
pub fn generate_side_block_scene(seed: u64, cfg: &WorldConfig) -> TowerScene {
    let mut rng = seed::rng(seed::derive(seed, &[0x73696465]));
    let n_tower = rng.gen_range(1..=3usize);
    let colors = sample_colors(&mut rng, n_tower + 1);
    let (lo, hi) = cfg.side_offset_range();
    let mag = rng.gen_range(lo..=hi);
    let offset = signed(&mut rng, mag);

    let mut blocks = stacked(cfg, &colors[..n_tower]);
    blocks.push(Block::cube(
        cfg.tower_center_x() + offset,
        0.0,
        cfg.block_width,
        colors[n_tower],
    ));
    TowerScene {
        displaced_index: n_tower,
        dataset_kind: DatasetKind::SideBlock,
        seed,
        blocks,
    }
}

pub fn generate_scene(kind: DatasetKind, seed: u64, cfg: &WorldConfig) -> TowerScene {
    match kind {
        DatasetKind::TopBlock => generate_top_block_scene(seed, cfg, None),
        DatasetKind::SideBlock => generate_side_block_scene(seed, cfg),
    }
}

fn rests_on(upper: &Block, lower: &Block) -> bool {
    let touching = (upper.y_bottom - lower.top()).abs() <= CONTACT_EPS;
    let overlap = upper.right().min(lower.right()) - upper.left().max(lower.left());
    touching && overlap > CONTACT_EPS
}

/// Quasi-static stability.
///
/// Every block above the floor must rest on at least one block, and the
/// combined center of mass of that block and everything it carries must lie
/// strictly inside the supporting face, taken as `stability_margin * width`
/// either side of each supporter's center. A center of mass exactly on the
/// edge is unstable.
pub fn is_stable(scene: &TowerScene, cfg: &WorldConfig) -> bool {
    let blocks = &scene.blocks;
    let n = blocks.len();
    // carried[i]: blocks directly resting on block i
    let mut carried: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut supporters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, upper) in blocks.iter().enumerate() {
        for (j, lower) in blocks.iter().enumerate() {
            if i != j && rests_on(upper, lower) {
                carried[j].push(i);
                supporters[i].push(j);
            }
        }
    }

    for (i, block) in blocks.iter().enumerate() {
        if block.y_bottom <= CONTACT_EPS {
            continue;
        }
        if supporters[i].is_empty() {
            return false;
        }
        let mut load = vec![false; n];
        let mut stack = vec![i];
        while let Some(k) = stack.pop() {
            if !load[k] {
                load[k] = true;
                stack.extend(carried[k].iter().copied());
            }
        }
        let (mass, moment) = blocks
            .iter()
            .zip(&load)
            .filter(|(_, &l)| l)
            .fold((0.0, 0.0), |(m, mx), (b, _)| {
                (m + b.area(), mx + b.area() * b.x_center)
            });
        let com = moment / mass;
        let lo = supporters[i]
            .iter()
            .map(|&j| blocks[j].x_center - cfg.stability_margin * blocks[j].width)
            .fold(f64::INFINITY, f64::min);
        let hi = supporters[i]
            .iter()
            .map(|&j| blocks[j].x_center + cfg.stability_margin * blocks[j].width)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(com > lo && com < hi) {
            return false;
        }
    }
    true
}

/// Translate the displaced block by `(dx, dy)`. No settling, no clamping.
pub fn apply_action(scene: &TowerScene, dx: f64, dy: f64) -> TowerScene {
    let mut out = scene.clone();
    let b = &mut out.blocks[out.displaced_index];
    b.x_center += dx;
    b.y_bottom += dy;
    out
}

/// Where a moved side block ended up, checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    BelowFloor,
    WithinTower,
    StableBigger,
    UnstableAbove,
}

pub fn classify_placement(scene_after: &TowerScene, cfg: &WorldConfig) -> Placement {
    let moved = scene_after.displaced();
    if moved.y_bottom < 0.0 {
        return Placement::BelowFloor;
    }
    if scene_after
        .tower_blocks()
        .any(|b| moved.overlap_area(b) > 0.0)
    {
        return Placement::WithinTower;
    }
    let (top_y, top_x) = match scene_after.tower_top_block() {
        Some(b) => (b.top(), b.x_center),
        None => (0.0, cfg.tower_center_x()),
    };
    let resting = (moved.y_bottom - top_y).abs() <= cfg.snap_tolerance;
    let aligned = (moved.x_center - top_x).abs() < cfg.support_half_width();
    if resting && aligned {
        Placement::StableBigger
    } else {
        Placement::UnstableAbove
    }
}

/// The oracle move for an action task, in world units.
pub fn optimal_action(instance: &TaskInstance, cfg: &WorldConfig) -> Result<(f64, f64)> {
    let scene = &instance.scene;
    let b = scene.displaced();
    let tower_x = scene
        .tower_top_block()
        .map_or(cfg.tower_center_x(), |t| t.x_center);
    match instance.task {
        TaskKind::BinaryStabilityTop => Err(Error::Task(
            "binary stability has no optimal move".into(),
        )),
        TaskKind::XOnlyTop | TaskKind::XOnlySide => Ok((tower_x - b.x_center, 0.0)),
        TaskKind::XYSide => Ok((tower_x - b.x_center, scene.tower_top_y() - b.y_bottom)),
    }
}

/// One JSON-lines record describing a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub seed: u64,
    pub dataset_kind: DatasetKind,
    pub displaced_index: usize,
    pub stable: bool,
    pub optimal_dx: f64,
    pub optimal_dy: f64,
    pub blocks: Vec<Block>,
}

impl SceneRecord {
    pub fn from_scene(scene: &TowerScene, cfg: &WorldConfig) -> Self {
        let b = scene.displaced();
        let tower_x = scene
            .tower_top_block()
            .map_or(cfg.tower_center_x(), |t| t.x_center);
        let optimal_dy = match scene.dataset_kind {
            DatasetKind::TopBlock => 0.0,
            DatasetKind::SideBlock => scene.tower_top_y() - b.y_bottom,
        };
        SceneRecord {
            seed: scene.seed,
            dataset_kind: scene.dataset_kind,
            displaced_index: scene.displaced_index,
            stable: is_stable(scene, cfg),
            optimal_dx: tower_x - b.x_center,
            optimal_dy,
            blocks: scene.blocks.clone(),
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

//! The four tasks, the answer-token grammar and the reward functions.
//!
//! Rewards:
//!
//! | task        | unparseable | branches                                                        |
//! |-------------|-------------|-----------------------------------------------------------------|
//! | binary-top  | -1          | wrong 0, correct 1                                              |
//! | xonly-*     | -5          | stable `20 e^{-d^2}`, unstable `2 e^{-d^2} - 2`                  |
//! | xy-side     | -5          | below floor -4, inside tower `2 e^{-d^2} - 4`, stable bigger `20 e^{-d^2}`, otherwise `2 e^{-d^2} - 2` |
//!
//! `d` is the distance to the optimal position divided by
//! [`RewardConfig::distance_scale`]. For `xy-side` it is the euclidean
//! distance of the moved block's bottom-center.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::world::{
    apply_action, classify_placement, generate_side_block_scene, generate_top_block_scene,
    is_stable, optimal_action, DatasetKind, Placement, TowerScene, WorldConfig,
};
use crate::{Error, Result};

pub const X_RANGE: (i64, i64) = (-600, 600);
pub const Y_RANGE: (i64, i64) = (0, 1000);

pub const PENALTY_BINARY_ILLEGAL: f64 = -1.0;
pub const PENALTY_ACTION_ILLEGAL: f64 = -5.0;
pub const PENALTY_BELOW_FLOOR: f64 = -4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "binary-top")]
    BinaryStabilityTop,
    #[serde(rename = "xonly-top")]
    XOnlyTop,
    #[serde(rename = "xonly-side")]
    XOnlySide,
    #[serde(rename = "xy-side")]
    XYSide,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::BinaryStabilityTop,
        TaskKind::XOnlyTop,
        TaskKind::XOnlySide,
        TaskKind::XYSide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::BinaryStabilityTop => "binary-top",
            TaskKind::XOnlyTop => "xonly-top",
            TaskKind::XOnlySide => "xonly-side",
            TaskKind::XYSide => "xy-side",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn dataset(self) -> DatasetKind {
        match self {
            TaskKind::BinaryStabilityTop | TaskKind::XOnlyTop => DatasetKind::TopBlock,
            TaskKind::XOnlySide | TaskKind::XYSide => DatasetKind::SideBlock,
        }
    }

    pub fn is_binary(self) -> bool {
        self == TaskKind::BinaryStabilityTop
    }

    /// Best achievable reward.
    pub fn ceiling(self) -> f64 {
        if self.is_binary() {
            1.0
        } else {
            20.0
        }
    }

    pub fn illegal_penalty(self) -> f64 {
        if self.is_binary() {
            PENALTY_BINARY_ILLEGAL
        } else {
            PENALTY_ACTION_ILLEGAL
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task '{s}'")))
    }
}

/// Answer vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Digit(u8),
    Minus,
    Comma,
    Yes,
    No,
    End,
}

pub const VOCAB_SIZE: usize = 15;

impl Token {
    pub fn id(self) -> usize {
        match self {
            Token::Digit(d) => d as usize,
            Token::Minus => 10,
            Token::Comma => 11,
            Token::Yes => 12,
            Token::No => 13,
            Token::End => 14,
        }
    }

    pub fn from_id(id: usize) -> Option<Token> {
        Some(match id {
            0..=9 => Token::Digit(id as u8),
            10 => Token::Minus,
            11 => Token::Comma,
            12 => Token::Yes,
            13 => Token::No,
            14 => Token::End,
            _ => return None,
        })
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Digit(d) => write!(f, "{d}"),
            Token::Minus => f.write_str("-"),
            Token::Comma => f.write_str(","),
            Token::Yes => f.write_str("Y"),
            Token::No => f.write_str("N"),
            Token::End => f.write_str(" END"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(pub Vec<Token>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.id()).collect()
    }

    pub fn from_ids(ids: &[usize]) -> Option<Self> {
        ids.iter().map(|&i| Token::from_id(i)).collect::<Option<Vec<_>>>().map(TokenSequence)
    }

    /// Parse the textual rendering, e.g. `"-80 END"` or `"12,700 END"`.
    /// Both `-` and `−` denote the minus token; whitespace is ignored.
    pub fn from_text(text: &str) -> Option<Self> {
        let mut out = Vec::new();
        let mut rest = text.trim_start();
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix("END") {
                out.push(Token::End);
                rest = r;
            } else {
                let c = rest.chars().next()?;
                out.push(match c {
                    '0'..='9' => Token::Digit(c as u8 - b'0'),
                    '-' | '−' => Token::Minus,
                    ',' => Token::Comma,
                    'Y' => Token::Yes,
                    'N' => Token::No,
                    _ => return None,
                });
                rest = &rest[c.len_utf8()..];
            }
            rest = rest.trim_start();
        }
        Some(TokenSequence(out))
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParsedAction {
    Yes,
    No,
    MoveX(i64),
    MoveXY(i64, i64),
    Unparseable,
}

impl ParsedAction {
    pub fn is_legal(self) -> bool {
        self != ParsedAction::Unparseable
    }
}

/// Reads an optionally signed integer of 1..=`max_digits` digits from the
/// front of `tokens`, returning it and the remaining tokens.
fn take_int(tokens: &[Token], max_digits: usize) -> Option<(i64, &[Token])> {
    let (negative, rest) = match tokens.first() {
        Some(Token::Minus) => (true, &tokens[1..]),
        _ => (false, tokens),
    };
    let n_digits = rest
        .iter()
        .take_while(|t| matches!(t, Token::Digit(_)))
        .count();
    if n_digits == 0 || n_digits > max_digits {
        return None;
    }
    let magnitude = rest[..n_digits].iter().fold(0i64, |acc, t| match t {
        Token::Digit(d) => acc * 10 + *d as i64,
        _ => unreachable!(),
    });
    Some((if negative { -magnitude } else { magnitude }, &rest[n_digits..]))
}

fn in_range(v: i64, range: (i64, i64)) -> bool {
    v >= range.0 && v <= range.1
}

/// Total parser: anything outside the grammar is `Unparseable`.
pub fn parse_answer(tokens: &TokenSequence, task: TaskKind) -> ParsedAction {
    let t = tokens.0.as_slice();
    match task {
        TaskKind::BinaryStabilityTop => match t {
            [Token::Yes, Token::End] => ParsedAction::Yes,
            [Token::No, Token::End] => ParsedAction::No,
            _ => ParsedAction::Unparseable,
        },
        TaskKind::XOnlyTop | TaskKind::XOnlySide => match take_int(t, 3) {
            Some((dx, [Token::End])) if in_range(dx, X_RANGE) => ParsedAction::MoveX(dx),
            _ => ParsedAction::Unparseable,
        },
        TaskKind::XYSide => {
            let Some((dx, rest)) = take_int(t, 3) else {
                return ParsedAction::Unparseable;
            };
            let [Token::Comma, rest @ ..] = rest else {
                return ParsedAction::Unparseable;
            };
            match take_int(rest, 4) {
                Some((dy, [Token::End])) if in_range(dx, X_RANGE) && in_range(dy, Y_RANGE) => {
                    ParsedAction::MoveXY(dx, dy)
                }
                _ => ParsedAction::Unparseable,
            }
        }
    }
}

/// A scene posed as one of the four tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub task: TaskKind,
    pub scene: TowerScene,
    /// Oracle move for action tasks.
    pub optimal: Option<(f64, f64)>,
    pub stable: bool,
}

impl TaskInstance {
    pub fn from_scene(task: TaskKind, scene: TowerScene, cfg: &WorldConfig) -> Self {
        let stable = is_stable(&scene, cfg);
        let mut inst = TaskInstance {
            task,
            scene,
            optimal: None,
            stable,
        };
        inst.optimal = optimal_action(&inst, cfg).ok();
        inst
    }

    /// Fresh instance drawn from the task's dataset.
    pub fn generate(task: TaskKind, seed: u64, cfg: &WorldConfig) -> Self {
        let scene = match task.dataset() {
            DatasetKind::TopBlock => generate_top_block_scene(seed, cfg, None),
            DatasetKind::SideBlock => generate_side_block_scene(seed, cfg),
        };
        TaskInstance::from_scene(task, scene, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// World units per unit of `d` in the Gaussian reward branches.
    pub distance_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            distance_scale: 200.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distance_scale > 0.0 && self.distance_scale.is_finite() {
            Ok(())
        } else {
            Err(Error::Config("distance_scale must be positive".into()))
        }
    }
}

fn gaussian(d: f64) -> f64 {
    (-d * d).exp()
}

/// Reward for one parsed answer on one instance.
pub fn reward(
    instance: &TaskInstance,
    action: ParsedAction,
    world: &WorldConfig,
    cfg: &RewardConfig,
) -> f64 {
    let scene = &instance.scene;
    let target_x = scene
        .tower_top_block()
        .map_or(world.tower_center_x(), |b| b.x_center);
    match (instance.task, action) {
        (TaskKind::BinaryStabilityTop, ParsedAction::Yes | ParsedAction::No) => {
            if (action == ParsedAction::Yes) == instance.stable {
                1.0
            } else {
                0.0
            }
        }
        (TaskKind::XOnlyTop, ParsedAction::MoveX(dx)) => {
            let after = apply_action(scene, dx as f64, 0.0);
            let d = (after.displaced().x_center - target_x).abs() / cfg.distance_scale;
            if is_stable(&after, world) {
                20.0 * gaussian(d)
            } else {
                2.0 * gaussian(d) - 2.0
            }
        }
        (TaskKind::XOnlySide, ParsedAction::MoveX(dx)) => {
            let after = apply_action(scene, dx as f64, 0.0);
            let off = (after.displaced().x_center - target_x).abs();
            let d = off / cfg.distance_scale;
            if off < world.support_half_width() {
                20.0 * gaussian(d)
            } else {
                2.0 * gaussian(d) - 2.0
            }
        }
        (TaskKind::XYSide, ParsedAction::MoveXY(dx, dy)) => {
            let after = apply_action(scene, dx as f64, dy as f64);
            let placement = classify_placement(&after, world);
            if placement == Placement::BelowFloor {
                return PENALTY_BELOW_FLOOR;
            }
            let b = after.displaced();
            let d = (b.x_center - target_x).hypot(b.y_bottom - scene.tower_top_y())
                / cfg.distance_scale;
            match placement {
                Placement::WithinTower => 2.0 * gaussian(d) - 4.0,
                Placement::StableBigger => 20.0 * gaussian(d),
                Placement::UnstableAbove => 2.0 * gaussian(d) - 2.0,
                Placement::BelowFloor => unreachable!(),
            }
        }
        (task, _) => task.illegal_penalty(),
    }
}

fn int_tokens(v: i64, out: &mut Vec<Token>) {
    if v < 0 {
        out.push(Token::Minus);
    }
    out.extend(
        v.unsigned_abs()
            .to_string()
            .bytes()
            .map(|b| Token::Digit(b - b'0')),
    );
}

/// Canonical token rendering of a legal action.
pub fn action_tokens(action: ParsedAction) -> TokenSequence {
    let mut out = Vec::new();
    match action {
        ParsedAction::Yes => out.push(Token::Yes),
        ParsedAction::No => out.push(Token::No),
        ParsedAction::MoveX(dx) => int_tokens(dx, &mut out),
        ParsedAction::MoveXY(dx, dy) => {
            int_tokens(dx, &mut out);
            out.push(Token::Comma);
            int_tokens(dy, &mut out);
        }
        ParsedAction::Unparseable => {}
    }
    out.push(Token::End);
    TokenSequence(out)
}

/// The oracle answer as a parsed action.
pub fn oracle_action(instance: &TaskInstance) -> ParsedAction {
    let (dx, dy) = instance.optimal.unwrap_or((0.0, 0.0));
    match instance.task {
        TaskKind::BinaryStabilityTop => {
            if instance.stable {
                ParsedAction::Yes
            } else {
                ParsedAction::No
            }
        }
        TaskKind::XOnlyTop | TaskKind::XOnlySide => ParsedAction::MoveX(dx.round() as i64),
        TaskKind::XYSide => ParsedAction::MoveXY(dx.round() as i64, dy.round() as i64),
    }
}

/// Supervised target: the oracle answer, END-terminated.
pub fn sft_target(instance: &TaskInstance) -> TokenSequence {
    action_tokens(oracle_action(instance))
}

/// Uniformly random legal action for the task.
pub fn random_legal_action(task: TaskKind, rng: &mut impl Rng) -> ParsedAction {
    match task {
        TaskKind::BinaryStabilityTop => {
            if rng.gen_bool(0.5) {
                ParsedAction::Yes
            } else {
                ParsedAction::No
            }
        }
        TaskKind::XOnlyTop | TaskKind::XOnlySide => {
            ParsedAction::MoveX(rng.gen_range(X_RANGE.0..=X_RANGE.1))
        }
        TaskKind::XYSide => ParsedAction::MoveXY(
            rng.gen_range(X_RANGE.0..=X_RANGE.1),
            rng.gen_range(Y_RANGE.0..=Y_RANGE.1),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl BaselineEstimate {
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_err, self.mean + 1.96 * self.std_err)
    }
}

pub const MIN_BASELINE_SAMPLES: usize = 10_000;

/// Monte-Carlo mean reward of uniformly random legal actions on fresh
/// evaluation instances.
pub fn baseline_reward(
    task: TaskKind,
    world: &WorldConfig,
    cfg: &RewardConfig,
    n_samples: usize,
    seed: u64,
) -> Result<BaselineEstimate> {
    if n_samples < MIN_BASELINE_SAMPLES {
        return Err(Error::Config(format!(
            "baseline needs at least {MIN_BASELINE_SAMPLES} samples, got {n_samples}"
        )));
    }
    let rewards: Vec<f64> = (0..n_samples as u64)
        .map(|i| {
            let inst = TaskInstance::generate(task, seed::eval_instance_seed(seed, i), world);
            let mut rng = seed::rng(seed::derive(seed, &[0x62617365, i]));
            reward(&inst, random_legal_action(task, &mut rng), world, cfg)
        })
        .collect();
    let (mean, std_err) = mean_and_std_err(&rewards);
    Ok(BaselineEstimate {
        mean,
        std_err,
        n: n_samples,
    })
}

/// Sample mean and standard error (sample standard deviation / sqrt n).
pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Write an (instance × action) reward table as CSV.
///
/// x-only tasks sweep `dx` over the legal range in steps of `stride`; the
/// x-y task sweeps the `dx × dy` grid. Binary instances list both answers.
pub fn write_reward_grid(
    path: &Path,
    instances: &[TaskInstance],
    stride: usize,
    world: &WorldConfig,
    cfg: &RewardConfig,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "task", "dx", "dy", "answer", "reward"])?;
    let stride = stride.max(1);
    for inst in instances {
        let actions: Vec<ParsedAction> = match inst.task {
            TaskKind::BinaryStabilityTop => vec![ParsedAction::Yes, ParsedAction::No],
            TaskKind::XOnlyTop | TaskKind::XOnlySide => (X_RANGE.0..=X_RANGE.1)
                .step_by(stride)
                .map(ParsedAction::MoveX)
                .collect(),
            TaskKind::XYSide => (X_RANGE.0..=X_RANGE.1)
                .step_by(stride)
                .flat_map(|dx| {
                    (Y_RANGE.0..=Y_RANGE.1)
                        .step_by(stride)
                        .map(move |dy| ParsedAction::MoveXY(dx, dy))
                })
                .collect(),
        };
        for a in actions {
            let (dx, dy) = match a {
                ParsedAction::MoveX(dx) => (dx.to_string(), String::new()),
                ParsedAction::MoveXY(dx, dy) => (dx.to_string(), dy.to_string()),
                _ => (String::new(), String::new()),
            };
            w.write_record([
                inst.scene.seed.to_string(),
                inst.task.name().to_string(),
                dx,
                dy,
                action_tokens(a).to_string(),
                reward(inst, a, world, cfg).to_string(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::from_text(s).unwrap()
    }

    #[test]
    fn grammar_examples() {
        assert_eq!(parse_answer(&seq("Y END"), TaskKind::BinaryStabilityTop), ParsedAction::Yes);
        assert_eq!(parse_answer(&seq("N END"), TaskKind::BinaryStabilityTop), ParsedAction::No);
        assert_eq!(parse_answer(&seq("−,5 END"), TaskKind::XOnlyTop), ParsedAction::Unparseable);
        assert_eq!(parse_answer(&seq("12,700 END"), TaskKind::XYSide), ParsedAction::MoveXY(12, 700));
        assert_eq!(parse_answer(&seq("-80 END"), TaskKind::XOnlyTop), ParsedAction::MoveX(-80));
        assert_eq!(parse_answer(&seq("-600,1000 END"), TaskKind::XYSide), ParsedAction::MoveXY(-600, 1000));
    }

    #[test]
    fn grammar_rejections() {
        let x = TaskKind::XOnlySide;
        for bad in ["END", "601 END", "-601 END", "1234 END", "12", "12 END END", "Y END", "--1 END", "1,2 END", ""] {
            assert_eq!(parse_answer(&seq(bad), x), ParsedAction::Unparseable, "{bad}");
        }
        let xy = TaskKind::XYSide;
        for bad in ["1 END", "1,1001 END", "1,-5 END", "700,0 END", "1,2,3 END", ",5 END", "1, END"] {
            assert_eq!(parse_answer(&seq(bad), xy), ParsedAction::Unparseable, "{bad}");
        }
        let b = TaskKind::BinaryStabilityTop;
        for bad in ["Y", "YN END", "Y END END", "1 END"] {
            assert_eq!(parse_answer(&seq(bad), b), ParsedAction::Unparseable, "{bad}");
        }
    }

    #[test]
    fn token_ids_round_trip() {
        for id in 0..VOCAB_SIZE {
            assert_eq!(Token::from_id(id).unwrap().id(), id);
        }
        assert!(Token::from_id(VOCAB_SIZE).is_none());
    }

    fn top_instance(offset: f64, task: TaskKind) -> TaskInstance {
        let cfg = WorldConfig::default();
        let mut scene = generate_top_block_scene(1, &cfg, None);
        let n = scene.blocks.len();
        scene.blocks[n - 1].x_center = cfg.tower_center_x() + offset;
        TaskInstance::from_scene(task, scene, &cfg)
    }

    #[test]
    fn reward_examples() {
        let w = WorldConfig::default();
        let rc = RewardConfig::default();
        let inst = top_instance(80.0, TaskKind::XOnlyTop);
        assert_eq!(reward(&inst, ParsedAction::MoveX(-80), &w, &rc), 20.0);
        // unstable result at exactly one block width from the optimum
        let r = reward(&inst, ParsedAction::MoveX(120), &w, &rc);
        assert!((r - (2.0 * (-1.0f64).exp() - 2.0)).abs() < 1e-12);
        assert!((r + 1.26424).abs() < 1e-5);
        assert_eq!(reward(&inst, ParsedAction::Unparseable, &w, &rc), -5.0);
        assert_eq!(reward(&inst, ParsedAction::Yes, &w, &rc), -5.0);

        let bin = top_instance(30.0, TaskKind::BinaryStabilityTop);
        assert_eq!(reward(&bin, ParsedAction::Unparseable, &w, &rc), -1.0);
        assert_eq!(reward(&bin, ParsedAction::Yes, &w, &rc), 1.0);
        assert_eq!(reward(&bin, ParsedAction::No, &w, &rc), 0.0);

        let side = TaskInstance::generate(TaskKind::XYSide, 4, &w);
        assert_eq!(reward(&side, ParsedAction::MoveXY(0, 0), &w, &rc), 2.0 * (-(side.scene.displaced_offset(&w).powi(2) + side.scene.tower_top_y().powi(2)) / 200f64.powi(2)).exp() - 2.0);
        let mut below = side.clone();
        below.scene.blocks[below.scene.displaced_index].y_bottom = -1.0;
        assert_eq!(reward(&below, ParsedAction::MoveXY(0, 0), &w, &rc), -4.0);
    }

    #[test]
    fn sft_targets_render_canonically() {
        let w = WorldConfig::default();
        let rc = RewardConfig::default();
        assert_eq!(sft_target(&top_instance(80.0, TaskKind::XOnlyTop)).to_string(), "-80 END");
        assert_eq!(sft_target(&top_instance(20.0, TaskKind::BinaryStabilityTop)).to_string(), "Y END");
        assert_eq!(sft_target(&top_instance(-220.0, TaskKind::BinaryStabilityTop)).to_string(), "N END");
        for task in TaskKind::ALL {
            for s in 0..200 {
                let inst = TaskInstance::generate(task, s, &w);
                let t = sft_target(&inst);
                let a = parse_answer(&t, task);
                assert!(a.is_legal(), "{task} {t}");
                assert_eq!(reward(&inst, a, &w, &rc), task.ceiling());
                assert!(t.len() <= 10);
            }
        }
    }

    #[test]
    fn sft_target_is_global_maximum_over_action_grid() {
        let w = WorldConfig::default();
        let rc = RewardConfig::default();
        for task in [TaskKind::XOnlyTop, TaskKind::XOnlySide] {
            for s in 0..5 {
                let inst = TaskInstance::generate(task, s, &w);
                let best = (X_RANGE.0..=X_RANGE.1)
                    .map(|dx| reward(&inst, ParsedAction::MoveX(dx), &w, &rc))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(best, reward(&inst, oracle_action(&inst), &w, &rc));
            }
        }
        let inst = TaskInstance::generate(TaskKind::XYSide, 9, &w);
        let mut best = f64::NEG_INFINITY;
        for dx in (X_RANGE.0..=X_RANGE.1).step_by(3) {
            for dy in (Y_RANGE.0..=Y_RANGE.1).step_by(3) {
                best = best.max(reward(&inst, ParsedAction::MoveXY(dx, dy), &w, &rc));
            }
        }
        assert!(best <= reward(&inst, oracle_action(&inst), &w, &rc));
    }

    #[test]
    fn binary_baseline_is_one_half() {
        let b = baseline_reward(
            TaskKind::BinaryStabilityTop,
            &WorldConfig::default(),
            &RewardConfig::default(),
            10_000,
            3,
        )
        .unwrap();
        assert!((b.mean - 0.5).abs() <= 0.01, "{b:?}");
        assert!(baseline_reward(TaskKind::XOnlyTop, &WorldConfig::default(), &RewardConfig::default(), 9_999, 3).is_err());
    }

    #[test]
    fn reward_grid_csv_has_one_row_per_action() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let w = WorldConfig::default();
        let inst = TaskInstance::generate(TaskKind::XOnlyTop, 1, &w);
        write_reward_grid(&path, &[inst], 100, &w, &RewardConfig::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 13);
    }
}

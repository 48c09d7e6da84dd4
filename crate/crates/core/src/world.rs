//! Scene types for the tabletop: blocks, the arm, and the unit-square table.
//!
//! Every coordinate is a fraction of the table side, so the table is the
//! closed unit square `[0, 1]²` with `x` growing to the right and `y`
//! growing upward.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default block radius in table units.
pub const BLOCK_RADIUS: f64 = 0.02;
/// Default arm radius in table units.
pub const ARM_RADIUS: f64 = 0.03;
/// Default bound on the length of a single action.
pub const MAX_STEP: f64 = 0.05;
/// Upper bound on the number of blocks in a scene.
pub const MAX_BLOCKS: usize = 8;
/// Slack allowed when comparing separations against radii sums.
pub const CONTACT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Moon,
    Pentagon,
    Star,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Blue, Color::Green, Color::Yellow];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Cube, Shape::Moon, Shape::Pentagon, Shape::Star];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Moon => "moon",
            Shape::Pentagon => "pentagon",
            Shape::Star => "star",
        }
    }
}

impl FromStr for Color {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Color::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| WorldError::UnknownName(s.to_string()))
    }
}

impl FromStr for Shape {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Shape::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| WorldError::UnknownName(s.to_string()))
    }
}

/// Identity of a block. The derived ordering (color first, then shape) is the
/// canonical order used wherever ties have to be broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub color: Color,
    pub shape: Shape,
}

impl BlockId {
    pub const fn new(color: Color, shape: Shape) -> Self {
        Self { color, shape }
    }

    /// All sixteen ids in canonical order.
    pub fn all() -> impl Iterator<Item = BlockId> {
        Color::ALL
            .into_iter()
            .flat_map(|c| Shape::ALL.into_iter().map(move |s| BlockId::new(c, s)))
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.name(), self.shape.name())
    }
}

/// A point on the table. Serialized as a two-element array `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
}

impl Pose2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_bounds(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    pub fn clamped(&self) -> Self {
        Self::new(self.x.clamp(0.0, 1.0), self.y.clamp(0.0, 1.0))
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl From<[f64; 2]> for Pose2D {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Pose2D> for [f64; 2] {
    fn from(p: Pose2D) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for Pose2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2})", self.x, self.y)
    }
}

/// Euclidean distance between two table points.
pub fn distance(a: Pose2D, b: Pose2D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

fn is_default_block_radius(r: &f64) -> bool {
    *r == BLOCK_RADIUS
}

fn is_default_arm_radius(r: &f64) -> bool {
    *r == ARM_RADIUS
}

fn default_block_radius() -> f64 {
    BLOCK_RADIUS
}

fn default_arm_radius() -> f64 {
    ARM_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    #[serde(flatten)]
    pub id: BlockId,
    #[serde(rename = "pos")]
    pub pose: Pose2D,
    #[serde(default = "default_block_radius", skip_serializing_if = "is_default_block_radius")]
    pub radius: f64,
}

impl Block {
    pub fn new(id: BlockId, pose: Pose2D) -> Self {
        Self {
            id,
            pose,
            radius: BLOCK_RADIUS,
        }
    }
}

/// One signed displacement of the arm, serialized as `[dx, dy]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
}

impl Action {
    pub const ZERO: Action = Action { dx: 0.0, dy: 0.0 };

    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn magnitude(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// Scales the action down so its length does not exceed `max_step`.
    pub fn clipped(self, max_step: f64) -> Self {
        let m = self.magnitude();
        if m > max_step && m > 0.0 {
            let k = max_step / m;
            Self::new(self.dx * k, self.dy * k)
        } else {
            self
        }
    }
}

impl From<[f64; 2]> for Action {
    fn from([dx, dy]: [f64; 2]) -> Self {
        Self { dx, dy }
    }
}

impl From<Action> for [f64; 2] {
    fn from(a: Action) -> Self {
        [a.dx, a.dy]
    }
}

/// The full observable scene: blocks in canonical id order plus the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub arm: Pose2D,
    #[serde(default = "default_arm_radius", skip_serializing_if = "is_default_arm_radius")]
    pub arm_radius: f64,
    pub blocks: Vec<Block>,
}

impl WorldState {
    /// Builds a state at tick 0, sorting blocks into canonical order.
    pub fn new(arm: Pose2D, mut blocks: Vec<Block>) -> Self {
        blocks.sort_by_key(|b| b.id);
        Self {
            tick: 0,
            arm,
            arm_radius: ARM_RADIUS,
            blocks,
        }
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn pose_of(&self, id: BlockId) -> Option<Pose2D> {
        self.block(id).map(|b| b.pose)
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.iter().map(|b| b.id)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_state(self)
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

/// A broken scene invariant. Violations are data: callers decide whether
/// they are fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Overlap { a: BlockId, b: BlockId, separation: f64 },
    /// `block` is `None` when the arm itself is outside the table.
    OutOfBounds { block: Option<BlockId>, pose: Pose2D },
    DuplicateBlock { block: BlockId },
    TooManyBlocks { count: usize },
    BadRadius { block: Option<BlockId>, radius: f64 },
    UnsortedBlocks,
}

/// Checks every scene invariant and lists what is broken; empty means valid.
pub fn validate_state(w: &WorldState) -> Vec<Violation> {
    let mut out = Vec::new();
    if w.blocks.len() > MAX_BLOCKS {
        out.push(Violation::TooManyBlocks {
            count: w.blocks.len(),
        });
    }
    if !w.arm.in_bounds() {
        out.push(Violation::OutOfBounds {
            block: None,
            pose: w.arm,
        });
    }
    if !(w.arm_radius > 0.0) {
        out.push(Violation::BadRadius {
            block: None,
            radius: w.arm_radius,
        });
    }
    if w.blocks.windows(2).any(|p| p[0].id > p[1].id) {
        out.push(Violation::UnsortedBlocks);
    }
    for (i, a) in w.blocks.iter().enumerate() {
        if !a.pose.in_bounds() {
            out.push(Violation::OutOfBounds {
                block: Some(a.id),
                pose: a.pose,
            });
        }
        if !(a.radius > 0.0) {
            out.push(Violation::BadRadius {
                block: Some(a.id),
                radius: a.radius,
            });
        }
        for b in &w.blocks[i + 1..] {
            if a.id == b.id {
                out.push(Violation::DuplicateBlock { block: a.id });
                continue;
            }
            let separation = distance(a.pose, b.pose);
            if separation < a.radius + b.radius - CONTACT_EPS {
                out.push(Violation::Overlap {
                    a: a.id,
                    b: b.id,
                    separation,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("scene contains no blocks")]
    EmptyScene,
    #[error("unknown color or shape name `{0}`")]
    UnknownName(String),
}

/// The block closest to `p`; ties go to the canonically smallest id.
pub fn nearest_block(w: &WorldState, p: Pose2D) -> Result<BlockId, WorldError> {
    let mut best: Option<(f64, BlockId)> = None;
    for b in &w.blocks {
        let d = distance(b.pose, p);
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid < b.id) => Some((bd, bid)),
            _ => Some((d, b.id)),
        };
    }
    best.map(|(_, id)| id).ok_or(WorldError::EmptyScene)
}

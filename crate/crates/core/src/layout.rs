//! The 35-task catalog and procedural target layouts.
//!
//! Each task carries a stroke skeleton in table coordinates. A layout places
//! `n` blocks at roughly equal arc-length spacing along that skeleton, adds
//! a small seeded jitter, and keeps the first candidate that passes
//! [`validate_layout`]. Sort tasks skip the skeleton and build two clusters
//! keyed by the sorted attribute instead.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::SeedHasher;
use crate::world::{distance, BlockId, Color, Pose2D, Shape, BLOCK_RADIUS};

pub const MIN_LAYOUT_BLOCKS: usize = 3;
pub const MAX_LAYOUT_BLOCKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Alphabet,
    MathGeometry,
    SemanticGeometry,
    Sort,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Alphabet,
        Family::MathGeometry,
        Family::SemanticGeometry,
        Family::Sort,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One stroke of a task skeleton.
#[derive(Debug, Clone, PartialEq)]
pub enum Stroke {
    Polyline(Vec<Pose2D>),
    /// Elliptical arc; angles in degrees, traversed from `start` to `end`
    /// (either direction).
    Arc {
        center: Pose2D,
        rx: f64,
        ry: f64,
        start: f64,
        end: f64,
    },
}

const ARC_SEGMENTS: usize = 96;

impl Stroke {
    /// Dense polyline approximation of the stroke.
    pub fn points(&self) -> Vec<Pose2D> {
        match self {
            Stroke::Polyline(p) => p.clone(),
            Stroke::Arc {
                center,
                rx,
                ry,
                start,
                end,
            } => (0..=ARC_SEGMENTS)
                .map(|i| {
                    let a = (start + (end - start) * i as f64 / ARC_SEGMENTS as f64) * PI / 180.0;
                    Pose2D::new(center.x + rx * a.cos(), center.y + ry * a.sin())
                })
                .collect(),
        }
    }
}

/// Attribute that a sort task groups blocks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SortKey {
    Color,
    Shape,
}

impl SortKey {
    /// Index of the attribute value, used to compare groups.
    pub fn class_of(self, id: BlockId) -> usize {
        match self {
            SortKey::Color => id.color as usize,
            SortKey::Shape => id.shape as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    /// Blocks spread along the skeleton.
    Path { closed: bool },
    /// Mouth arc plus two eyes.
    Smiley { green_eyes: bool },
    Sort(SortKey),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub family: Family,
    pub difficulty: Difficulty,
    /// The instruction handed to planners.
    pub instruction: String,
    /// Noun phrase naming the target shape, used inside prompts.
    pub subject: String,
    pub skeleton: Vec<Stroke>,
    pub kind: LayoutKind,
}

fn poly(pts: &[(f64, f64)]) -> Stroke {
    Stroke::Polyline(pts.iter().map(|&(x, y)| Pose2D::new(x, y)).collect())
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, start: f64, end: f64) -> Stroke {
    Stroke::Arc {
        center: Pose2D::new(cx, cy),
        rx,
        ry,
        start,
        end,
    }
}

/// Skeletons live in a 0.6 x 0.8 box centred on the table (x 0.2..0.8,
/// y 0.1..0.9); a few tails poke slightly outside.
fn letter_skeleton(letter: char) -> Vec<Stroke> {
    match letter {
        'A' => vec![
            poly(&[(0.2, 0.1), (0.5, 0.9), (0.8, 0.1)]),
            poly(&[(0.35, 0.5), (0.65, 0.5)]),
        ],
        'B' => vec![
            poly(&[(0.2, 0.1), (0.2, 0.9), (0.6, 0.9)]),
            arc(0.6, 0.7, 0.2, 0.2, 90.0, -90.0),
            poly(&[(0.6, 0.5), (0.2, 0.5)]),
            arc(0.6, 0.3, 0.2, 0.2, 90.0, -90.0),
            poly(&[(0.6, 0.1), (0.2, 0.1)]),
        ],
        'C' => vec![arc(0.5, 0.5, 0.3, 0.4, 45.0, 315.0)],
        'D' => vec![
            poly(&[(0.2, 0.1), (0.2, 0.9), (0.4, 0.9)]),
            arc(0.4, 0.5, 0.4, 0.4, 90.0, -90.0),
            poly(&[(0.4, 0.1), (0.2, 0.1)]),
        ],
        'E' => vec![
            poly(&[(0.8, 0.9), (0.2, 0.9), (0.2, 0.1), (0.8, 0.1)]),
            poly(&[(0.2, 0.5), (0.7, 0.5)]),
        ],
        'F' => vec![
            poly(&[(0.8, 0.9), (0.2, 0.9), (0.2, 0.1)]),
            poly(&[(0.2, 0.5), (0.7, 0.5)]),
        ],
        'G' => vec![
            arc(0.5, 0.5, 0.3, 0.4, 45.0, 360.0),
            poly(&[(0.8, 0.5), (0.55, 0.5)]),
        ],
        'H' => vec![
            poly(&[(0.2, 0.1), (0.2, 0.9)]),
            poly(&[(0.8, 0.1), (0.8, 0.9)]),
            poly(&[(0.2, 0.5), (0.8, 0.5)]),
        ],
        'I' => vec![
            poly(&[(0.35, 0.9), (0.65, 0.9)]),
            poly(&[(0.5, 0.9), (0.5, 0.1)]),
            poly(&[(0.35, 0.1), (0.65, 0.1)]),
        ],
        'J' => vec![
            poly(&[(0.4, 0.9), (0.8, 0.9)]),
            poly(&[(0.7, 0.9), (0.7, 0.35)]),
            arc(0.45, 0.35, 0.25, 0.25, 0.0, -180.0),
        ],
        'K' => vec![
            poly(&[(0.2, 0.1), (0.2, 0.9)]),
            poly(&[(0.8, 0.9), (0.2, 0.5), (0.8, 0.1)]),
        ],
        'L' => vec![poly(&[(0.2, 0.9), (0.2, 0.1), (0.8, 0.1)])],
        'M' => vec![poly(&[(0.2, 0.1), (0.2, 0.9), (0.5, 0.45), (0.8, 0.9), (0.8, 0.1)])],
        'N' => vec![poly(&[(0.2, 0.1), (0.2, 0.9), (0.8, 0.1), (0.8, 0.9)])],
        'O' => vec![arc(0.5, 0.5, 0.3, 0.4, 0.0, 360.0)],
        'P' => vec![
            poly(&[(0.2, 0.1), (0.2, 0.9), (0.6, 0.9)]),
            arc(0.6, 0.7, 0.2, 0.2, 90.0, -90.0),
            poly(&[(0.6, 0.5), (0.2, 0.5)]),
        ],
        'Q' => vec![
            arc(0.5, 0.5, 0.3, 0.4, -45.0, 315.0),
            poly(&[(0.6, 0.3), (0.82, 0.08)]),
        ],
        'R' => vec![
            poly(&[(0.2, 0.1), (0.2, 0.9), (0.6, 0.9)]),
            arc(0.6, 0.7, 0.2, 0.2, 90.0, -90.0),
            poly(&[(0.6, 0.5), (0.2, 0.5)]),
            poly(&[(0.45, 0.5), (0.8, 0.1)]),
        ],
        'S' => vec![
            arc(0.5, 0.7, 0.3, 0.2, 20.0, 270.0),
            arc(0.5, 0.3, 0.3, 0.2, 90.0, -160.0),
        ],
        'T' => vec![
            poly(&[(0.2, 0.9), (0.8, 0.9)]),
            poly(&[(0.5, 0.9), (0.5, 0.1)]),
        ],
        'U' => vec![
            poly(&[(0.2, 0.9), (0.2, 0.4)]),
            arc(0.5, 0.4, 0.3, 0.3, 180.0, 360.0),
            poly(&[(0.8, 0.4), (0.8, 0.9)]),
        ],
        'V' => vec![poly(&[(0.2, 0.9), (0.5, 0.1), (0.8, 0.9)])],
        'W' => vec![poly(&[(0.2, 0.9), (0.35, 0.1), (0.5, 0.6), (0.65, 0.1), (0.8, 0.9)])],
        'X' => vec![
            poly(&[(0.2, 0.9), (0.8, 0.1)]),
            poly(&[(0.2, 0.1), (0.8, 0.9)]),
        ],
        'Y' => vec![
            poly(&[(0.2, 0.9), (0.5, 0.5), (0.8, 0.9)]),
            poly(&[(0.5, 0.5), (0.5, 0.1)]),
        ],
        'Z' => vec![poly(&[(0.2, 0.9), (0.8, 0.9), (0.2, 0.1), (0.8, 0.1)])],
        other => panic!("no skeleton for {other:?}"),
    }
}

const EASY_LETTERS: &str = "CDFHILTUV";
const MEDIUM_LETTERS: &str = "AEJOQRWX";

const SMILEY_EYES: [Pose2D; 2] = [Pose2D::new(0.38, 0.66), Pose2D::new(0.62, 0.66)];

fn smiley_mouth() -> Stroke {
    arc(0.5, 0.5, 0.22, 0.22, 200.0, 340.0)
}

fn build_catalog() -> Vec<TaskSpec> {
    let mut out = Vec::with_capacity(35);
    for letter in 'A'..='Z' {
        let difficulty = if EASY_LETTERS.contains(letter) {
            Difficulty::Easy
        } else if MEDIUM_LETTERS.contains(letter) {
            Difficulty::Medium
        } else {
            Difficulty::Hard
        };
        let closed = letter == 'O';
        out.push(TaskSpec {
            name: format!("letter_{letter}"),
            family: Family::Alphabet,
            difficulty,
            instruction: format!("make the letter '{letter}' with building blocks"),
            subject: format!("the letter '{letter}'"),
            skeleton: letter_skeleton(letter),
            kind: LayoutKind::Path { closed },
        });
    }
    let math: [(&str, &str, Difficulty, Vec<Stroke>, bool); 5] = [
        (
            "horizontal_line",
            "a horizontal line",
            Difficulty::Easy,
            vec![poly(&[(0.15, 0.5), (0.85, 0.5)])],
            false,
        ),
        (
            "vertical_line",
            "a vertical line",
            Difficulty::Easy,
            vec![poly(&[(0.5, 0.1), (0.5, 0.9)])],
            false,
        ),
        (
            "triangle",
            "a triangle",
            Difficulty::Easy,
            vec![poly(&[(0.2, 0.2), (0.8, 0.2), (0.5, 0.8), (0.2, 0.2)])],
            true,
        ),
        (
            "square",
            "a square",
            Difficulty::Easy,
            vec![poly(&[
                (0.25, 0.25),
                (0.75, 0.25),
                (0.75, 0.75),
                (0.25, 0.75),
                (0.25, 0.25),
            ])],
            true,
        ),
        (
            "circle",
            "a circle",
            Difficulty::Medium,
            vec![arc(0.5, 0.5, 0.3, 0.3, 0.0, 360.0)],
            true,
        ),
    ];
    for (name, subject, difficulty, skeleton, closed) in math {
        out.push(TaskSpec {
            name: name.to_string(),
            family: Family::MathGeometry,
            difficulty,
            instruction: format!("make {subject} with building blocks"),
            subject: subject.to_string(),
            skeleton,
            kind: LayoutKind::Path { closed },
        });
    }
    let eyes = || {
        SMILEY_EYES
            .iter()
            .map(|e| arc(e.x, e.y, 0.0, 0.0, 0.0, 0.0))
            .collect::<Vec<_>>()
    };
    for (name, subject, green_eyes) in [
        ("smiley_face", "a smiley face", false),
        ("smiley_face_green_eyes", "a smiley face with green eyes", true),
    ] {
        let mut skeleton = vec![smiley_mouth()];
        skeleton.extend(eyes());
        out.push(TaskSpec {
            name: name.to_string(),
            family: Family::SemanticGeometry,
            difficulty: Difficulty::Hard,
            instruction: format!("make {subject} with building blocks"),
            subject: subject.to_string(),
            skeleton,
            kind: LayoutKind::Smiley { green_eyes },
        });
    }
    for (name, attr, key) in [
        ("sort_by_color", "color", SortKey::Color),
        ("sort_by_shape", "shape", SortKey::Shape),
    ] {
        out.push(TaskSpec {
            name: name.to_string(),
            family: Family::Sort,
            difficulty: Difficulty::Medium,
            instruction: format!("sort the building blocks by {attr}"),
            subject: format!("two groups of blocks sorted by {attr}"),
            skeleton: vec![
                poly(&[(0.25, 0.35), (0.25, 0.65)]),
                poly(&[(0.75, 0.35), (0.75, 0.65)]),
            ],
            kind: LayoutKind::Sort(key),
        });
    }
    out
}

/// The full task catalog in stable order: the 26 letters, then the five
/// mathematical geometries, the two semantic geometries and the two sorts.
pub fn catalog() -> &'static [TaskSpec] {
    static CATALOG: OnceLock<Vec<TaskSpec>> = OnceLock::new();
    CATALOG.get_or_init(build_catalog)
}

pub fn find_task(name: &str) -> Option<&'static TaskSpec> {
    catalog().iter().find(|t| t.name == name)
}

/// Target positions for one task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayoutRecord", try_from = "LayoutRecord")]
pub struct Layout {
    pub task: String,
    pub seed: u64,
    pub targets: BTreeMap<BlockId, Pose2D>,
    /// Diagonal of the bounding box of the targets.
    pub scale: f64,
}

impl Layout {
    pub fn new(task: impl Into<String>, seed: u64, targets: BTreeMap<BlockId, Pose2D>) -> Self {
        let scale = bbox_diagonal(targets.values().copied());
        Self {
            task: task.into(),
            seed,
            targets,
            scale,
        }
    }

    pub fn target(&self, id: BlockId) -> Option<Pose2D> {
        self.targets.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct TargetRecord {
    color: Color,
    shape: Shape,
    pos: Pose2D,
}

/// On-disk form: `{"task", "seed", "targets": [{"color", "shape", "pos"}]}`.
#[derive(Serialize, Deserialize)]
struct LayoutRecord {
    task: String,
    seed: u64,
    targets: Vec<TargetRecord>,
}

impl From<Layout> for LayoutRecord {
    fn from(l: Layout) -> Self {
        Self {
            task: l.task,
            seed: l.seed,
            targets: l
                .targets
                .into_iter()
                .map(|(id, pos)| TargetRecord {
                    color: id.color,
                    shape: id.shape,
                    pos,
                })
                .collect(),
        }
    }
}

impl TryFrom<LayoutRecord> for Layout {
    type Error = String;

    fn try_from(r: LayoutRecord) -> Result<Self, Self::Error> {
        let mut targets = BTreeMap::new();
        for t in r.targets {
            let id = BlockId::new(t.color, t.shape);
            if targets.insert(id, t.pos).is_some() {
                return Err(format!("duplicate target for {id}"));
            }
        }
        Ok(Layout::new(r.task, r.seed, targets))
    }
}

pub fn bbox_diagonal(points: impl IntoIterator<Item = Pose2D>) -> f64 {
    let mut it = points.into_iter();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let (mut lo, mut hi) = (first, first);
    for p in it {
        lo = Pose2D::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Pose2D::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    distance(lo, hi)
}

/// Numeric form of the placement rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutRules {
    pub block_radius: f64,
    /// Minimum target separation as a multiple of the block radius.
    pub separation_factor: f64,
    pub min_scale: f64,
    /// Radius of the disk each sampled target is jittered within.
    pub jitter: f64,
    pub max_attempts: usize,
}

impl Default for LayoutRules {
    fn default() -> Self {
        Self {
            block_radius: BLOCK_RADIUS,
            separation_factor: 2.5,
            min_scale: 0.3,
            jitter: 0.01,
            max_attempts: 100,
        }
    }
}

impl LayoutRules {
    pub fn min_separation(&self) -> f64 {
        self.separation_factor * self.block_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutViolation {
    BlockCount { count: usize },
    Separation { a: BlockId, b: BlockId, separation: f64 },
    OutOfBounds { block: BlockId, pose: Pose2D },
    Scale { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("a layout needs between 3 and 8 blocks, got {0}")]
    BlockCount(usize),
    #[error("no valid layout for `{task}` after {attempts} attempts")]
    GenerationFailed { task: String, attempts: usize },
}

pub fn validate_layout(l: &Layout) -> Vec<LayoutViolation> {
    validate_layout_with(l, &LayoutRules::default())
}

pub fn validate_layout_with(l: &Layout, rules: &LayoutRules) -> Vec<LayoutViolation> {
    let mut out = Vec::new();
    let n = l.targets.len();
    if !(MIN_LAYOUT_BLOCKS..=MAX_LAYOUT_BLOCKS).contains(&n) {
        out.push(LayoutViolation::BlockCount { count: n });
    }
    let entries: Vec<_> = l.targets.iter().collect();
    for (i, (&a, &pa)) in entries.iter().enumerate() {
        if !pa.in_bounds() {
            out.push(LayoutViolation::OutOfBounds { block: a, pose: pa });
        }
        for (&b, &pb) in &entries[i + 1..] {
            let separation = distance(pa, pb);
            if separation < rules.min_separation() {
                out.push(LayoutViolation::Separation { a, b, separation });
            }
        }
    }
    let scale = bbox_diagonal(l.targets.values().copied());
    if scale < rules.min_scale {
        out.push(LayoutViolation::Scale { scale });
    }
    out
}

pub fn generate_layout(task: &TaskSpec, seed: u64, n_blocks: usize) -> Result<Layout, LayoutError> {
    generate_layout_with(task, seed, n_blocks, &LayoutRules::default())
}

/// Deterministic in `(task, seed, n_blocks, rules)`.
pub fn generate_layout_with(
    task: &TaskSpec,
    seed: u64,
    n_blocks: usize,
    rules: &LayoutRules,
) -> Result<Layout, LayoutError> {
    if !(MIN_LAYOUT_BLOCKS..=MAX_LAYOUT_BLOCKS).contains(&n_blocks) {
        return Err(LayoutError::BlockCount(n_blocks));
    }
    let mut rng = SeedHasher::new("layout")
        .str(&task.name)
        .u64(seed)
        .u64(n_blocks as u64)
        .rng();
    let ids = choose_blocks(task.kind, n_blocks, &mut rng);
    for attempt in 0..rules.max_attempts {
        let phase = if attempt == 0 { None } else { Some(rng.random::<f64>()) };
        let mut points = match task.kind {
            LayoutKind::Path { closed } => {
                sample_strokes(&task.skeleton, n_blocks, closed, phase)
            }
            LayoutKind::Smiley { .. } => {
                let mut pts = SMILEY_EYES.to_vec();
                pts.extend(sample_strokes(&[smiley_mouth()], n_blocks - 2, false, phase));
                pts
            }
            LayoutKind::Sort(_) => sort_clusters(n_blocks),
        };
        for p in &mut points {
            let r = rules.jitter * rng.random::<f64>().sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            *p = p.offset(r * theta.cos(), r * theta.sin());
        }
        let layout = Layout::new(task.name.clone(), seed, ids.iter().copied().zip(points).collect());
        if validate_layout_with(&layout, rules).is_empty() {
            return Ok(layout);
        }
    }
    Err(LayoutError::GenerationFailed {
        task: task.name.clone(),
        attempts: rules.max_attempts,
    })
}

/// Picks block identities in the order the sampled points are laid out.
fn choose_blocks(kind: LayoutKind, n: usize, rng: &mut impl Rng) -> Vec<BlockId> {
    match kind {
        LayoutKind::Path { .. } | LayoutKind::Smiley { green_eyes: false } => {
            let mut all: Vec<_> = BlockId::all().collect();
            all.shuffle(rng);
            all.truncate(n);
            all
        }
        LayoutKind::Smiley { green_eyes: true } => {
            let mut greens: Vec<_> = Shape::ALL.map(|s| BlockId::new(Color::Green, s)).to_vec();
            greens.shuffle(rng);
            let mut rest: Vec<_> = BlockId::all().filter(|b| b.color != Color::Green).collect();
            rest.shuffle(rng);
            greens.truncate(2);
            greens.extend(rest.into_iter().take(n - 2));
            greens
        }
        LayoutKind::Sort(key) => {
            let mut values = [0usize, 1, 2, 3];
            values.shuffle(rng);
            let (left, right) = (values[0], values[1]);
            let mut others = [0usize, 1, 2, 3];
            let group = |value: usize, count: usize, others: &mut [usize; 4], rng: &mut _| {
                others.shuffle(rng);
                let mut ids: Vec<_> = others[..count]
                    .iter()
                    .map(|&o| match key {
                        SortKey::Color => BlockId::new(Color::ALL[value], Shape::ALL[o]),
                        SortKey::Shape => BlockId::new(Color::ALL[o], Shape::ALL[value]),
                    })
                    .collect();
                ids.sort();
                ids
            };
            let mut ids = group(left, n.div_ceil(2), &mut others, rng);
            ids.extend(group(right, n / 2, &mut others, rng));
            ids
        }
    }
}

const CLUSTER_CENTERS: [Pose2D; 2] = [Pose2D::new(0.25, 0.5), Pose2D::new(0.75, 0.5)];
const CLUSTER_PITCH: f64 = 0.12;

fn cluster(center: Pose2D, count: usize) -> Vec<Pose2D> {
    let cols = count.min(2);
    let rows = count.div_ceil(2);
    (0..count)
        .map(|i| {
            let (r, c) = (i / 2, i % 2);
            let x = center.x + (c as f64 - (cols as f64 - 1.0) / 2.0) * CLUSTER_PITCH;
            let y = center.y + ((rows as f64 - 1.0) / 2.0 - r as f64) * CLUSTER_PITCH;
            Pose2D::new(x, y)
        })
        .collect()
}

fn sort_clusters(n: usize) -> Vec<Pose2D> {
    let mut pts = cluster(CLUSTER_CENTERS[0], n.div_ceil(2));
    pts.extend(cluster(CLUSTER_CENTERS[1], n / 2));
    pts
}

/// Samples `n` points at equal arc-length spacing along the concatenated
/// strokes. With `phase == None` open paths include both endpoints; with a
/// phase in `[0, 1)` the samples are shifted by that fraction of a spacing.
fn sample_strokes(strokes: &[Stroke], n: usize, closed: bool, phase: Option<f64>) -> Vec<Pose2D> {
    let polylines: Vec<Vec<Pose2D>> = strokes.iter().map(Stroke::points).collect();
    let segments: Vec<(Pose2D, Pose2D, f64)> = polylines
        .iter()
        .flat_map(|pl| pl.windows(2).map(|w| (w[0], w[1], distance(w[0], w[1]))))
        .collect();
    let total: f64 = segments.iter().map(|s| s.2).sum();
    let positions: Vec<f64> = match (phase, closed, n) {
        (None, false, 1) => vec![total / 2.0],
        (None, false, _) => (0..n).map(|i| total * i as f64 / (n - 1) as f64).collect(),
        (None, true, _) => (0..n).map(|i| total * i as f64 / n as f64).collect(),
        (Some(u), _, _) => (0..n).map(|i| total * (i as f64 + u) / n as f64).collect(),
    };
    positions
        .into_iter()
        .map(|t| point_at(&segments, t))
        .collect()
}

fn point_at(segments: &[(Pose2D, Pose2D, f64)], t: f64) -> Pose2D {
    let mut acc = 0.0;
    for &(a, b, len) in segments {
        if len > 0.0 && t <= acc + len {
            let f = ((t - acc) / len).clamp(0.0, 1.0);
            return Pose2D::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f);
        }
        acc += len;
    }
    segments.last().map(|s| s.1).unwrap_or_default()
}

//! Episode records on disk (one JSON object per line), the replay audit,
//! corpus statistics and a small top-down rasterizer for observations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{find_task, Layout};
use crate::planners::MAX_PLANS;
use crate::sim::{replay_trace, ReplayError, SimConfig};
use crate::world::{distance, Action, Color, Pose2D, Shape, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub obs: WorldState,
    pub action: Action,
}

/// One plan and the observation-action pairs executed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEpisode {
    pub plan: String,
    pub pairs: Vec<Pair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub task: String,
    pub seed: u64,
    pub success: bool,
    pub plans_used: usize,
    /// Number of plan episodes.
    pub m: usize,
    /// Pairs per plan episode.
    pub n: usize,
    /// Blocks knocked off target at the start.
    pub perturbed: usize,
    pub layout: Layout,
    /// Scene after the last action.
    #[serde(rename = "final")]
    pub final_state: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instruction: String,
    pub episodes: Vec<PlanEpisode>,
    pub meta: RecordMeta,
}

impl EpisodeRecord {
    pub fn check(&self) -> Result<(), String> {
        let m = self.episodes.len();
        if m > MAX_PLANS {
            return Err(format!("{m} plan episodes exceed the cap of {MAX_PLANS}"));
        }
        if self.meta.m != m {
            return Err(format!("meta.m = {} but {m} episodes stored", self.meta.m));
        }
        if let Some((k, e)) = self.episodes.iter().enumerate().find(|(_, e)| e.pairs.len() != self.meta.n) {
            return Err(format!("episode {k} has {} pairs, expected {}", e.pairs.len(), self.meta.n));
        }
        Ok(())
    }

    /// All pairs of the record in execution order.
    pub fn trace(&self) -> Vec<(WorldState, Action)> {
        self.episodes
            .iter()
            .flat_map(|e| e.pairs.iter().map(|p| (p.obs.clone(), p.action)))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("record invariant violated{}: {reason}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    InvariantViolation { line: Option<usize>, reason: String },
}

fn encode(rec: &EpisodeRecord) -> Result<String, DatasetError> {
    rec.check().map_err(|reason| DatasetError::InvariantViolation { line: None, reason })?;
    Ok(serde_json::to_string(rec).expect("records serialize"))
}

/// Writes records as JSON lines and returns how many were written. Every
/// record is checked before anything is written.
pub fn write_records<'a>(
    records: impl IntoIterator<Item = &'a EpisodeRecord>,
    path: &Path,
    append: bool,
) -> Result<usize, DatasetError> {
    let lines = records.into_iter().map(encode).collect::<Result<Vec<_>, _>>()?;
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    let mut out = BufWriter::new(file);
    for line in &lines {
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(lines.len())
}

/// Append-only writer shared by concurrent producers.
pub struct RecordWriter {
    out: Mutex<BufWriter<File>>,
}

impl RecordWriter {
    pub fn create(path: &Path, append: bool) -> Result<Self, DatasetError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, rec: &EpisodeRecord) -> Result<(), DatasetError> {
        let line = encode(rec)?;
        let mut out = self.out.lock().unwrap();
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&self) -> Result<(), DatasetError> {
        self.out.lock().unwrap().flush()?;
        Ok(())
    }
}

/// Lazily reads and validates records; blank lines are skipped, anything
/// else that fails to parse is reported with its 1-based line number.
pub fn read_records(path: &Path) -> Result<impl Iterator<Item = Result<EpisodeRecord, DatasetError>>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e.into())),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<EpisodeRecord>(&line)
                .map_err(|e| DatasetError::Schema {
                    line: line_no,
                    message: e.to_string(),
                })
                .and_then(|rec| {
                    rec.check().map_err(|reason| DatasetError::InvariantViolation {
                        line: Some(line_no),
                        reason,
                    })?;
                    Ok(rec)
                }),
        )
    }))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("record has no actions")]
    Empty,
    #[error("plan {episode}, step {step}: replay diverges from the stored observation")]
    Diverged { episode: usize, step: usize },
    #[error("plan {episode}, step {step}: {reason}")]
    Step { episode: usize, step: usize, reason: String },
    #[error("replayed final scene differs from the stored one")]
    FinalMismatch,
    #[error("final scene misses the targets (worst residual {residual:.4})")]
    NotSuccessful { residual: f64 },
}

/// Largest block-to-target distance, `inf` if a target block is missing.
pub fn max_residual(w: &WorldState, l: &Layout) -> f64 {
    l.targets
        .iter()
        .map(|(&id, &t)| w.pose_of(id).map_or(f64::INFINITY, |p| distance(p, t)))
        .fold(0.0, f64::max)
}

/// Re-simulates every action from the first observation, requiring each
/// stored observation and the final scene to match bit for bit, and the
/// final scene to be within `threshold` of every target.
pub fn audit_record(rec: &EpisodeRecord, cfg: &SimConfig, threshold: f64) -> Result<(), AuditError> {
    let n = rec.meta.n.max(1);
    let locate = |index: usize| (index / n, index % n);
    let end = match replay_trace(&rec.trace(), cfg) {
        Ok(Some(end)) => end,
        Ok(None) => return Err(AuditError::Empty),
        Err(ReplayError::Diverged { index }) => {
            let (episode, step) = locate(index);
            return Err(AuditError::Diverged { episode, step });
        }
        Err(ReplayError::Step { index, source }) => {
            let (episode, step) = locate(index);
            return Err(AuditError::Step {
                episode,
                step,
                reason: source.to_string(),
            });
        }
    };
    if end != rec.meta.final_state {
        return Err(AuditError::FinalMismatch);
    }
    let residual = max_residual(&end, &rec.meta.layout);
    if !(residual < threshold) {
        return Err(AuditError::NotSuccessful { residual });
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub records: usize,
    /// Distinct (task, layout seed) pairs.
    pub layouts: usize,
    /// Plans across all successful records.
    pub successful_plans: usize,
    pub per_family: BTreeMap<String, usize>,
    pub per_difficulty: BTreeMap<String, usize>,
    pub mean_plans_per_episode: f64,
}

pub fn stats_of<'a>(records: impl IntoIterator<Item = &'a EpisodeRecord>) -> StatsReport {
    let mut report = StatsReport::default();
    let mut layouts = BTreeSet::new();
    let mut plans = 0;
    for rec in records {
        report.records += 1;
        plans += rec.meta.m;
        if rec.meta.success {
            report.successful_plans += rec.meta.m;
        }
        layouts.insert((rec.meta.task.clone(), rec.meta.layout.seed));
        let (family, difficulty) = match find_task(&rec.meta.task) {
            Some(t) => (t.family.to_string(), t.difficulty.to_string()),
            None => ("unknown".to_string(), "unknown".to_string()),
        };
        *report.per_family.entry(family).or_default() += 1;
        *report.per_difficulty.entry(difficulty).or_default() += 1;
    }
    report.layouts = layouts.len();
    if report.records > 0 {
        report.mean_plans_per_episode = plans as f64 / report.records as f64;
    }
    report
}

pub fn dataset_stats(path: &Path) -> Result<StatsReport, DatasetError> {
    let records = read_records(path)?.collect::<Result<Vec<_>, _>>()?;
    Ok(stats_of(&records))
}

pub const IMAGE_SIZE: usize = 224;
const TABLE: [u8; 3] = [255, 255, 255];
const ARM: [u8; 3] = [128, 128, 128];

/// 8-bit RGB raster, row 0 at the far (y = 1) edge of the table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    fn filled(size: usize, color: [u8; 3]) -> Self {
        Self {
            width: size,
            height: size,
            rgb: color.repeat(size * size),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Binary portable pixmap (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    /// Paints every pixel whose centre, in table coordinates relative to
    /// `center`, satisfies `inside`.
    fn paint(&mut self, center: Pose2D, radius: f64, color: [u8; 3], inside: impl Fn(f64, f64) -> bool) {
        let size = self.width as f64;
        let to_px = |v: f64| (v * size).floor();
        let x0 = to_px(center.x - radius).max(0.0) as usize;
        let x1 = (to_px(center.x + radius) as usize).min(self.width - 1);
        let y0 = to_px(1.0 - center.y - radius).max(0.0) as usize;
        let y1 = (to_px(1.0 - center.y + radius) as usize).min(self.height - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let x = (px as f64 + 0.5) / size - center.x;
                let y = (1.0 - (py as f64 + 0.5) / size) - center.y;
                if inside(x / radius, y / radius) {
                    let i = 3 * (py * self.width + px);
                    self.rgb[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
}

fn color_rgb(c: Color) -> [u8; 3] {
    match c {
        Color::Red => [215, 40, 40],
        Color::Blue => [40, 90, 215],
        Color::Green => [40, 165, 70],
        Color::Yellow => [230, 195, 20],
    }
}

fn regular_polygon(points: usize, inner: Option<f64>) -> Vec<(f64, f64)> {
    let n = if inner.is_some() { points * 2 } else { points };
    (0..n)
        .map(|i| {
            let r = match inner {
                Some(ri) if i % 2 == 1 => ri,
                _ => 1.0,
            };
            let a = std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * i as f64 / n as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

fn in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Top-down view: white table, coloured block glyphs, gray arm disk.
pub fn render_observation(w: &WorldState, size: usize) -> Image {
    let mut img = Image::filled(size, TABLE);
    let pentagon = regular_polygon(5, None);
    let star = regular_polygon(5, Some(0.45));
    for b in &w.blocks {
        let color = color_rgb(b.id.color);
        match b.id.shape {
            Shape::Cube => img.paint(b.pose, b.radius, color, |x, y| x.abs() <= 0.8 && y.abs() <= 0.8),
            Shape::Moon => img.paint(b.pose, b.radius, color, |x, y| {
                x * x + y * y <= 1.0 && (x - 0.45).powi(2) + (y - 0.2).powi(2) > 0.6
            }),
            Shape::Pentagon => img.paint(b.pose, b.radius, color, |x, y| in_polygon(&pentagon, x, y)),
            Shape::Star => img.paint(b.pose, b.radius, color, |x, y| in_polygon(&star, x, y)),
        }
    }
    img.paint(w.arm, w.arm_radius, ARM, |x, y| x * x + y * y <= 1.0);
    img
}

/// File name for the observation of step `step` of plan `episode` in
/// record `record`.
pub fn image_name(record: usize, episode: usize, step: usize) -> String {
    format!("{record}_{episode}_{step}.ppm")
}

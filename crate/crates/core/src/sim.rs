//! Discrete-time kinematics for the tabletop.
//!
//! The arm is a disk that translates by the commanded action. Blocks it
//! sweeps into are shoved along the arm's direction of travel just far
//! enough to stop touching it, and block-on-block contacts are resolved by
//! moving the struck block along the contact normal. If a move cannot be
//! resolved cleanly (a block pinned against the table edge, say) the arm
//! only advances as far as it can while keeping the scene valid.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{next_action, segment_distance, ControlError, ControllerState};
use crate::layout::Layout;
use crate::plan::PlanAst;
use crate::seeding::SeedHasher;
use crate::world::{
    distance, validate_state, Action, Block, Pose2D, WorldState, ARM_RADIUS, BLOCK_RADIUS, CONTACT_EPS,
    MAX_STEP,
};

/// Minimum distance between a displaced block and its target.
pub const DISPLACEMENT_FLOOR: f64 = 0.15;
pub const MAX_PERTURBED: usize = 3;
const PLACEMENT_ATTEMPTS: usize = 100;
const BISECTION_ROUNDS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PushModel {
    #[default]
    DiskPush,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub max_step: f64,
    /// Actions executed per plan while collecting data.
    pub steps_per_plan_collect: usize,
    /// Actions executed per plan during evaluation.
    pub steps_per_plan_eval: usize,
    pub push_model: PushModel,
    /// Displaced blocks are kept this far from the table edge.
    pub perturb_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_step: MAX_STEP,
            steps_per_plan_collect: 12,
            steps_per_plan_eval: 10,
            push_model: PushModel::DiskPush,
            perturb_margin: 0.05,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        if !(self.max_step > 0.0) || self.steps_per_plan_collect == 0 || self.steps_per_plan_eval == 0 {
            return Err(SimError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("action of length {magnitude} exceeds max step {max_step}")]
    InvalidAction { magnitude: f64, max_step: f64 },
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("perturbation count {k} must be in 1..=3 and at most the layout size {blocks}")]
    BadPerturbCount { k: usize, blocks: usize },
    #[error("could not place perturbed scene after {0} attempts")]
    GenerationFailed(usize),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Step length `s >= 0` along unit `u` that moves a disk at offset `v` from
/// a fixed centre out to distance `reach`.
fn push_amount(v: (f64, f64), u: (f64, f64), reach: f64) -> f64 {
    let vu = v.0 * u.0 + v.1 * u.1;
    let vv = v.0 * v.0 + v.1 * v.1;
    let disc = vu * vu - vv + reach * reach;
    if vv >= reach * reach || disc < 0.0 {
        return 0.0;
    }
    (-vu + disc.sqrt()).max(0.0)
}

/// Tries moving the arm by `fraction` of `a`; `None` if the outcome would
/// break a scene invariant or leave the arm deeper inside some block.
fn try_motion(w: &WorldState, a: Action, fraction: f64) -> Option<WorldState> {
    let p0 = w.arm;
    let p1 = p0.offset(a.dx * fraction, a.dy * fraction).clamped();
    let mut next = w.clone();
    next.tick += 1;
    next.arm = p1;
    let len = distance(p0, p1);
    if len == 0.0 {
        return Some(next);
    }
    let u = ((p1.x - p0.x) / len, (p1.y - p0.y) / len);
    let n = next.blocks.len();
    let mut moved = vec![false; n];
    for (i, b) in next.blocks.iter_mut().enumerate() {
        let reach = w.arm_radius + b.radius;
        let ahead = (b.pose.x - p0.x) * u.0 + (b.pose.y - p0.y) * u.1 > 0.0;
        if ahead && segment_distance(b.pose, p0, p1) < reach - CONTACT_EPS {
            let s = push_amount((b.pose.x - p1.x, b.pose.y - p1.y), u, reach);
            if s > 0.0 {
                b.pose = b.pose.offset(s * u.0, s * u.1);
                moved[i] = true;
            }
        }
    }
    // each moved block gets one pass shoving its neighbours, canonical order
    let mut processed = vec![false; n];
    while let Some(i) = (0..n).find(|&i| moved[i] && !processed[i]) {
        processed[i] = true;
        let pusher = next.blocks[i];
        for j in 0..n {
            if j == i {
                continue;
            }
            let other = next.blocks[j];
            let reach = pusher.radius + other.radius;
            let v = (other.pose.x - pusher.pose.x, other.pose.y - pusher.pose.y);
            let d = v.0.hypot(v.1);
            if d < reach - CONTACT_EPS {
                let normal = if d > 0.0 { (v.0 / d, v.1 / d) } else { u };
                let s = reach - d;
                next.blocks[j].pose = other.pose.offset(s * normal.0, s * normal.1);
                moved[j] = true;
            }
        }
    }
    for b in &mut next.blocks {
        b.pose = b.pose.clamped();
    }
    if !validate_state(&next).is_empty() {
        return None;
    }
    for (before, after) in w.blocks.iter().zip(&next.blocks) {
        let reach = w.arm_radius + after.radius;
        let was = distance(before.pose, p0);
        // an arm already overlapping may not sink further; otherwise the
        // contact tolerance is absolute so it cannot accumulate over steps
        let floor = if was >= reach - CONTACT_EPS { reach - CONTACT_EPS } else { was };
        if distance(after.pose, p1) < floor {
            return None;
        }
    }
    Some(next)
}

/// Advances the scene by one action.
pub fn step(w: &WorldState, a: Action, cfg: &SimConfig) -> Result<WorldState, SimError> {
    let magnitude = a.magnitude();
    if !(magnitude <= cfg.max_step + 1e-12) {
        return Err(SimError::InvalidAction {
            magnitude,
            max_step: cfg.max_step,
        });
    }
    if let Some(next) = try_motion(w, a, 1.0) {
        return Ok(next);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_ROUNDS {
        let mid = 0.5 * (lo + hi);
        if try_motion(w, a, mid).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(try_motion(w, a, lo).unwrap_or_else(|| {
        let mut same = w.clone();
        same.tick += 1;
        same
    }))
}

/// Scene with `k` blocks knocked off their targets, the rest in place, and
/// the arm parked somewhere free.
pub fn perturb_layout(l: &Layout, seed: u64, k: usize, cfg: &SimConfig) -> Result<WorldState, SimError> {
    if !(1..=MAX_PERTURBED).contains(&k) || k > l.targets.len() {
        return Err(SimError::BadPerturbCount {
            k,
            blocks: l.targets.len(),
        });
    }
    let mut rng = SeedHasher::new("perturb")
        .str(&l.task)
        .u64(l.seed)
        .u64(seed)
        .u64(k as u64)
        .rng();
    let mut ids: Vec<_> = l.targets.keys().copied().collect();
    ids.shuffle(&mut rng);
    let displaced = &ids[..k];
    let mut blocks: Vec<Block> = l
        .targets
        .iter()
        .filter(|(id, _)| !displaced.contains(id))
        .map(|(&id, &p)| Block::new(id, p))
        .collect();
    let clearance = 2.5 * BLOCK_RADIUS;
    let lo = cfg.perturb_margin;
    let hi = 1.0 - cfg.perturb_margin;
    let mut sorted = displaced.to_vec();
    sorted.sort();
    for id in sorted {
        let target = l.targets[&id];
        let pose = (0..PLACEMENT_ATTEMPTS)
            .map(|_| Pose2D::new(rng.random_range(lo..=hi), rng.random_range(lo..=hi)))
            .find(|p| {
                distance(*p, target) >= DISPLACEMENT_FLOOR
                    && blocks.iter().all(|b| distance(b.pose, *p) >= clearance)
                    && l.targets.values().all(|t| distance(*t, *p) >= clearance)
            })
            .ok_or(SimError::GenerationFailed(PLACEMENT_ATTEMPTS))?;
        blocks.push(Block::new(id, pose));
    }
    let arm_clear = ARM_RADIUS + BLOCK_RADIUS + 0.01;
    let arm = (0..PLACEMENT_ATTEMPTS)
        .map(|_| Pose2D::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)))
        .find(|p| blocks.iter().all(|b| distance(b.pose, *p) >= arm_clear))
        .ok_or(SimError::GenerationFailed(PLACEMENT_ATTEMPTS))?;
    Ok(WorldState::new(arm, blocks))
}

/// Observation-action pairs: the state each action was applied to.
pub type Trace = Vec<(WorldState, Action)>;

/// Runs `budget` controller ticks for one plan.
pub fn run_plan(
    w: &WorldState,
    plan: &PlanAst,
    budget: usize,
    ctrl: ControllerState,
    cfg: &SimConfig,
) -> Result<(WorldState, Trace), SimError> {
    run_plan_with(w, plan, budget, ctrl, cfg, |a| a)
}

/// Like [`run_plan`], with `disturb` applied to each commanded action
/// before it reaches the simulator. The trace records the applied action,
/// clipped to `max_step`.
pub fn run_plan_with(
    w: &WorldState,
    plan: &PlanAst,
    budget: usize,
    mut ctrl: ControllerState,
    cfg: &SimConfig,
    mut disturb: impl FnMut(Action) -> Action,
) -> Result<(WorldState, Trace), SimError> {
    let mut state = w.clone();
    let mut trace = Vec::with_capacity(budget);
    for _ in 0..budget {
        let (action, next_ctrl) = next_action(plan, &state, ctrl, cfg.max_step)?;
        ctrl = next_ctrl;
        let applied = disturb(action).clipped(cfg.max_step);
        let next = step(&state, applied, cfg)?;
        trace.push((state, applied));
        state = next;
    }
    Ok((state, trace))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("trace diverges at step {index}")]
    Diverged { index: usize },
    #[error("step {index}: {source}")]
    Step { index: usize, source: SimError },
}

/// Re-simulates a trace from its first observation, checking each stored
/// observation bit-for-bit. Returns the state after the last action.
pub fn replay_trace(trace: &[(WorldState, Action)], cfg: &SimConfig) -> Result<Option<WorldState>, ReplayError> {
    let Some((first, _)) = trace.first() else {
        return Ok(None);
    };
    let mut state = first.clone();
    for (index, (obs, action)) in trace.iter().enumerate() {
        if *obs != state {
            return Err(ReplayError::Diverged { index });
        }
        state = step(&state, *action, cfg).map_err(|source| ReplayError::Step { index, source })?;
    }
    Ok(Some(state))
}

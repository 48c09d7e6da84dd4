//! Scripted low-level executor: turns one plan plus the current scene into
//! a bounded arm displacement per tick.
//!
//! The policy is a pure function of the geometry. [`ControllerState`] only
//! carries tuning and the phase reached on the previous tick, so replaying
//! a trace never depends on hidden controller memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::PlanAst;
use crate::world::{distance, Action, BlockId, Pose2D, WorldState};

/// Gap left between arm and block when lining up behind a block.
pub const STANDOFF_GAP: f64 = 0.005;
/// Clearance the arm keeps from blocks it is travelling past.
const NAV_MARGIN: f64 = 0.001;
/// Extra padding when marking blocked grid cells, so chords between
/// neighbouring free cells stay clear.
const GRID_PAD: f64 = 0.004;
/// Cells per side of the navigation grid.
const NAV_GRID: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Travelling to the standoff point behind the block.
    Approach,
    /// At the standoff point; the push starts this tick.
    Engage,
    /// Lined up behind the block and driving it to the target.
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: Phase,
    pub gain: f64,
    pub deadband: f64,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            phase: Phase::Approach,
            gain: 1.0,
            deadband: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("plan refers to {0}, which is not in the scene")]
    UnknownBlock(BlockId),
}

fn sub(a: Pose2D, b: Pose2D) -> (f64, f64) {
    (a.x - b.x, a.y - b.y)
}

fn dot(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

/// Distance from `c` to the segment `p0 -> p1`.
pub(crate) fn segment_distance(c: Pose2D, p0: Pose2D, p1: Pose2D) -> f64 {
    let d = sub(p1, p0);
    let len2 = dot(d, d);
    if len2 == 0.0 {
        return distance(c, p0);
    }
    let t = (dot(sub(c, p0), d) / len2).clamp(0.0, 1.0);
    distance(c, Pose2D::new(p0.x + d.0 * t, p0.y + d.1 * t))
}

/// Proportional move toward `goal`, clipped to `max_step`.
fn toward(arm: Pose2D, goal: Pose2D, gain: f64, max_step: f64) -> Action {
    let (dx, dy) = sub(goal, arm);
    Action::new(gain * dx, gain * dy).clipped(max_step)
}

/// One control tick. `max_step` bounds the returned action.
pub fn next_action(
    plan: &PlanAst,
    w: &WorldState,
    s: ControllerState,
    max_step: f64,
) -> Result<(Action, ControllerState), ControlError> {
    let Some(id) = plan.block() else {
        return Ok((Action::ZERO, s));
    };
    let block = w.block(id).ok_or(ControlError::UnknownBlock(id))?;
    let contact = w.arm_radius + block.radius;
    match *plan {
        PlanAst::Approach { .. } => {
            let d = distance(w.arm, block.pose);
            let reach = contact + STANDOFF_GAP;
            if d <= reach + s.deadband || d <= s.deadband {
                return Ok((Action::ZERO, ControllerState { phase: Phase::Engage, ..s }));
            }
            let k = (d - reach) / d;
            let goal = Pose2D::new(
                w.arm.x + (block.pose.x - w.arm.x) * k,
                w.arm.y + (block.pose.y - w.arm.y) * k,
            );
            Ok((travel(w, goal, Some(id), s, max_step), ControllerState { phase: Phase::Approach, ..s }))
        }
        PlanAst::MoveTo { target, .. } => Ok(push_to(w, id, target, contact, s, max_step)),
        PlanAst::Done => unreachable!(),
    }
}

fn push_to(
    w: &WorldState,
    id: BlockId,
    target: Pose2D,
    contact: f64,
    s: ControllerState,
    max_step: f64,
) -> (Action, ControllerState) {
    let arm = w.arm;
    let block = w.block(id).expect("checked by caller").pose;
    if distance(block, target) <= s.deadband {
        return (Action::ZERO, s);
    }
    let target = block_waypoint(w, id, target);
    let remaining = distance(block, target);
    let u = ((target.x - block.x) / remaining, (target.y - block.y) / remaining);
    let back = contact + STANDOFF_GAP;
    let standoff = Pose2D::new(block.x - u.0 * back, block.y - u.1 * back).clamped();

    let rel = sub(arm, block);
    let along = dot(rel, u);
    let lateral = (rel.0 - along * u.0, rel.1 - along * u.1);
    let aligned = along <= -(contact - s.deadband) && dot(lateral, lateral).sqrt() <= s.deadband;
    let at_standoff = distance(arm, standoff) <= s.deadband;

    if aligned || at_standoff {
        // drive the arm to where it sits once the block is on target
        let goal = Pose2D::new(target.x - u.0 * contact, target.y - u.1 * contact);
        let phase = if s.phase == Phase::Push || aligned && !at_standoff {
            Phase::Push
        } else {
            Phase::Engage
        };
        return (toward(arm, goal, s.gain, max_step), ControllerState { phase, ..s });
    }
    let next = ControllerState {
        phase: Phase::Approach,
        ..s
    };
    (travel(w, standoff, Some(id), s, max_step), next)
}

/// Obstacle disk for navigation: centre and the radius the arm centre keeps
/// out of. A block the arm already touches only forbids getting closer.
#[derive(Debug, Clone, Copy)]
struct Disk {
    c: Pose2D,
    r: f64,
}

fn obstacles(w: &WorldState) -> Vec<Disk> {
    w.blocks
        .iter()
        .map(|b| Disk {
            c: b.pose,
            r: (w.arm_radius + b.radius + NAV_MARGIN).min(distance(w.arm, b.pose) - 1e-9),
        })
        .collect()
}

/// Next point to push the block toward: the target itself when the block
/// can slide there without touching another block, otherwise the farthest
/// visible point of a route around them.
fn block_waypoint(w: &WorldState, id: BlockId, target: Pose2D) -> Pose2D {
    let block = w.block(id).expect("checked by caller");
    for clearance in [w.arm_radius, block.radius] {
        let obs: Vec<Disk> = w
            .blocks
            .iter()
            .filter(|b| b.id != id)
            .map(|b| Disk {
                c: b.pose,
                r: (clearance + b.radius + NAV_MARGIN).min(distance(block.pose, b.pose) - 1e-9),
            })
            .collect();
        if segment_clear(block.pose, target, &obs) {
            return target;
        }
        if let Some(p) = grid_path(block.pose, target, &obs) {
            return p;
        }
    }
    target
}

fn segment_clear(p0: Pose2D, p1: Pose2D, obs: &[Disk]) -> bool {
    obs.iter().all(|o| segment_distance(o.c, p0, p1) >= o.r)
}

/// Moves toward `goal` without sweeping into any block: straight when the
/// segment is free, otherwise along a grid path. If every block has to be
/// avoided and no route exists, only `keep_clear` (the block about to be
/// pushed) is avoided and the others may get nudged on the way.
fn travel(w: &WorldState, goal: Pose2D, keep_clear: Option<BlockId>, s: ControllerState, max_step: f64) -> Action {
    let all = obstacles(w);
    if segment_clear(w.arm, goal, &all) {
        return toward(w.arm, goal, s.gain, max_step);
    }
    let waypoint = grid_path(w.arm, goal, &all).or_else(|| {
        let id = keep_clear?;
        let i = w.blocks.iter().position(|b| b.id == id)?;
        let only = [all[i]];
        if segment_clear(w.arm, goal, &only) {
            return Some(goal);
        }
        grid_path(w.arm, goal, &only)
    });
    match waypoint {
        Some(p) => toward(w.arm, p, s.gain, max_step),
        None => toward(w.arm, goal, s.gain, max_step),
    }
}

fn cell_of(p: Pose2D) -> (usize, usize) {
    let f = |v: f64| ((v * NAV_GRID as f64).floor().max(0.0) as usize).min(NAV_GRID - 1);
    (f(p.x), f(p.y))
}

fn cell_center(i: usize, j: usize) -> Pose2D {
    let h = 1.0 / NAV_GRID as f64;
    Pose2D::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
}

/// A* over the table grid, 8-connected, from the arm to any cell with a
/// clear view of `goal`. Returns the farthest point of that route the arm
/// can head to in a straight line, or `None` when no route exists.
fn grid_path(start: Pose2D, goal: Pose2D, obs: &[Disk]) -> Option<Pose2D> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = NAV_GRID;
    let cell = 1.0 / n as f64;
    let idx = |i: usize, j: usize| j * n + i;
    let mut blocked = vec![false; n * n];
    for o in obs {
        let reach = o.r + GRID_PAD;
        let (i0, j0) = cell_of(Pose2D::new(o.c.x - reach, o.c.y - reach));
        let (i1, j1) = cell_of(Pose2D::new(o.c.x + reach, o.c.y + reach));
        for j in j0..=j1 {
            for i in i0..=i1 {
                if distance(o.c, cell_center(i, j)) < o.r + GRID_PAD {
                    blocked[idx(i, j)] = true;
                }
            }
        }
    }
    let (si, sj) = cell_of(start);
    blocked[idx(si, sj)] = false;
    let h = |i: usize, j: usize| distance(cell_center(i, j), goal);
    let mut g = vec![f64::INFINITY; n * n];
    let mut parent = vec![usize::MAX; n * n];
    let mut closed = vec![false; n * n];
    let mut heap = BinaryHeap::new();
    g[idx(si, sj)] = 0.0;
    // non-negative f64 bit patterns order like the values
    heap.push(Reverse((h(si, sj).to_bits(), idx(si, sj))));
    let mut end = None;
    while let Some(Reverse((_, cur))) = heap.pop() {
        if closed[cur] {
            continue;
        }
        closed[cur] = true;
        let (ci, cj) = (cur % n, cur / n);
        let c = cell_center(ci, cj);
        if cur != idx(si, sj) && distance(c, goal) <= 4.0 * cell && segment_clear(c, goal, obs) {
            end = Some(cur);
            break;
        }
        for (di, dj) in [(-1i64, -1i64), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
            let (ni, nj) = (ci as i64 + di, cj as i64 + dj);
            if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                continue;
            }
            let next = idx(ni as usize, nj as usize);
            if closed[next] || blocked[next] {
                continue;
            }
            let step = if di != 0 && dj != 0 { std::f64::consts::SQRT_2 } else { 1.0 } * cell;
            let cand = g[cur] + step;
            if cand < g[next] {
                g[next] = cand;
                parent[next] = cur;
                heap.push(Reverse(((cand + h(ni as usize, nj as usize)).to_bits(), next)));
            }
        }
    }
    let mut path = vec![goal];
    let mut cur = end?;
    while cur != idx(si, sj) {
        path.push(cell_center(cur % n, cur / n));
        cur = parent[cur];
    }
    // path runs goal -> start; take the first point visible from the arm,
    // else the first cell of the route
    let first = *path.last().unwrap();
    Some(path.into_iter().find(|p| segment_clear(start, *p, obs)).unwrap_or(first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Block, Color, Shape, ARM_RADIUS, BLOCK_RADIUS, MAX_STEP};

    const B: BlockId = BlockId::new(Color::Red, Shape::Moon);

    fn scene(arm: Pose2D, block: Pose2D) -> WorldState {
        WorldState::new(arm, vec![Block::new(B, block)])
    }

    #[test]
    fn approach_is_clipped_and_aimed() {
        let w = scene(Pose2D::new(0.2, 0.5), Pose2D::new(0.5, 0.5));
        let (a, _) = next_action(&PlanAst::Approach { block: B }, &w, ControllerState::default(), MAX_STEP).unwrap();
        assert!((a.magnitude() - 0.05).abs() < 1e-12);
        assert!(a.dx > 0.0 && a.dy.abs() < 1e-15);
    }

    #[test]
    fn approach_deadband() {
        let w = scene(Pose2D::new(0.505, 0.5), Pose2D::new(0.5, 0.5));
        let (a, _) = next_action(&PlanAst::Approach { block: B }, &w, ControllerState::default(), MAX_STEP).unwrap();
        assert_eq!(a, Action::ZERO);
    }

    #[test]
    fn move_to_deadband() {
        let w = scene(Pose2D::new(0.1, 0.1), Pose2D::new(0.5, 0.5));
        let plan = PlanAst::MoveTo {
            block: B,
            target: Pose2D::new(0.505, 0.505),
        };
        let (a, _) = next_action(&plan, &w, ControllerState::default(), MAX_STEP).unwrap();
        assert_eq!(a, Action::ZERO);
    }

    #[test]
    fn unknown_block() {
        let w = scene(Pose2D::new(0.1, 0.1), Pose2D::new(0.5, 0.5));
        let other = BlockId::new(Color::Blue, Shape::Star);
        assert_eq!(
            next_action(&PlanAst::Approach { block: other }, &w, ControllerState::default(), MAX_STEP),
            Err(ControlError::UnknownBlock(other))
        );
    }

    #[test]
    fn done_is_still() {
        let w = scene(Pose2D::new(0.1, 0.1), Pose2D::new(0.5, 0.5));
        let (a, _) = next_action(&PlanAst::Done, &w, ControllerState::default(), MAX_STEP).unwrap();
        assert_eq!(a, Action::ZERO);
    }

    #[test]
    fn arm_in_front_walks_around() {
        // arm sits between block and target; heading straight to the
        // standoff would shove the block the wrong way
        let w = scene(Pose2D::new(0.6, 0.5), Pose2D::new(0.5, 0.5));
        let plan = PlanAst::MoveTo {
            block: B,
            target: Pose2D::new(0.8, 0.5),
        };
        let (a, st) = next_action(&plan, &w, ControllerState::default(), MAX_STEP).unwrap();
        assert_eq!(st.phase, Phase::Approach);
        let arm1 = w.arm.offset(a.dx, a.dy);
        assert!(segment_distance(w.blocks[0].pose, w.arm, arm1) >= ARM_RADIUS + BLOCK_RADIUS);
    }
}

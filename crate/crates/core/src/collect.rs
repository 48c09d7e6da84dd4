//! Data collection: perturb a target layout, let a planner restore it with a
//! fixed number of actions per plan, and keep only episodes that succeed.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{EpisodeRecord, Pair, PlanEpisode, RecordMeta};
use crate::eval::{is_success, par_map, run_episode, Execution, Instance, LoopConfig};
use crate::layout::{generate_layout, Layout, LayoutError, TaskSpec, MAX_LAYOUT_BLOCKS};
use crate::planners::{Planner, PlannerError, MAX_PLANS, SUCCESS_THRESHOLD};
use crate::seeding::SeedHasher;
use crate::sim::{perturb_layout, SimConfig, SimError, MAX_PERTURBED};
use crate::world::{distance, WorldState};

/// Low-level actions executed for each plan during collection.
pub const ACTIONS_PER_PLAN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub actions_per_plan: usize,
    pub max_plans: usize,
    pub threshold: f64,
    pub sim: SimConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            actions_per_plan: ACTIONS_PER_PLAN,
            max_plans: MAX_PLANS,
            threshold: SUCCESS_THRESHOLD,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("invalid collection config: {0}")]
    Config(String),
}

/// Why an episode was not kept, with enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub task: String,
    pub seed: u64,
    pub k: usize,
    pub plans_used: usize,
    pub plans: Vec<String>,
    /// Block name to distance from its target in the last scene.
    pub residuals: BTreeMap<String, f64>,
    pub layout: Layout,
    /// Perturbed scene the episode started from.
    pub start: Option<WorldState>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CollectionResult {
    Retained(EpisodeRecord),
    Failed(FailureReport),
}

impl CollectionResult {
    pub fn record(&self) -> Option<&EpisodeRecord> {
        match self {
            Self::Retained(r) => Some(r),
            Self::Failed(_) => None,
        }
    }
}

/// Number of blocks knocked off target for `(task, seed)`.
pub fn perturb_count(task: &str, seed: u64, n_blocks: usize) -> usize {
    let mut rng = SeedHasher::new("collect-k").str(task).u64(seed).rng();
    rng.random_range(1..=MAX_PERTURBED).min(n_blocks)
}

fn residuals(w: &WorldState, l: &Layout) -> BTreeMap<String, f64> {
    l.targets
        .iter()
        .map(|(&id, &t)| (id.to_string(), w.pose_of(id).map_or(f64::INFINITY, |p| distance(p, t))))
        .collect()
}

/// Runs one collection episode. Planner and simulator errors are returned
/// as errors; an episode that simply does not reach the layout comes back
/// as [`CollectionResult::Failed`].
pub fn collect_episode(
    task: &'static TaskSpec,
    layout: &Layout,
    seed: u64,
    planner: &dyn Planner,
    cfg: &CollectConfig,
) -> Result<CollectionResult, CollectError> {
    if cfg.actions_per_plan == 0 || cfg.max_plans == 0 || cfg.max_plans > MAX_PLANS || !(cfg.threshold > 0.0) {
        return Err(CollectError::Config(format!(
            "need 1..={MAX_PLANS} plans, at least one action per plan and a positive threshold"
        )));
    }
    let k = perturb_count(&task.name, seed, layout.len());
    let start = perturb_layout(layout, seed, k, &cfg.sim)?;
    let inst = Instance {
        task,
        seed,
        k,
        layout: layout.clone(),
        start,
    };
    let lc = LoopConfig {
        steps_per_plan: cfg.actions_per_plan,
        total_steps: cfg.actions_per_plan * cfg.max_plans,
        max_plans: cfg.max_plans,
        threshold: cfg.threshold,
        noise_sigma: 0.0,
    };
    let run = run_episode(planner, &inst, &lc, &cfg.sim)?;
    let success = !run.runs.is_empty() && is_success(&run.final_state, layout, cfg.threshold).unwrap_or(false);
    if !success {
        return Ok(CollectionResult::Failed(FailureReport {
            task: task.name.clone(),
            seed,
            k,
            plans_used: run.runs.len(),
            plans: run.runs.iter().map(|r| r.text.clone()).collect(),
            residuals: residuals(&run.final_state, layout),
            layout: inst.layout,
            start: Some(inst.start),
            error: None,
        }));
    }
    let episodes: Vec<PlanEpisode> = run
        .runs
        .into_iter()
        .map(|r| PlanEpisode {
            plan: r.text,
            pairs: r.trace.into_iter().map(|(obs, action)| Pair { obs, action }).collect(),
        })
        .collect();
    Ok(CollectionResult::Retained(EpisodeRecord {
        instruction: task.instruction.clone(),
        meta: RecordMeta {
            task: task.name.clone(),
            seed,
            success: true,
            plans_used: episodes.len(),
            m: episodes.len(),
            n: cfg.actions_per_plan,
            perturbed: k,
            layout: inst.layout,
            final_state: run.final_state,
        },
        episodes,
    }))
}

/// Layout size for a collection job when none is forced.
pub fn collect_block_count(task: &str, seed: u64) -> usize {
    let mut rng = SeedHasher::new("collect-n").str(task).u64(seed).rng();
    rng.random_range(4..=MAX_LAYOUT_BLOCKS)
}

/// Generates a layout per `(task, seed)` job and collects an episode for
/// each. Errors become failure reports so one bad job does not stop the
/// batch. Output order follows `jobs`.
pub fn collect_many(
    planner: &dyn Planner,
    jobs: &[(&'static TaskSpec, u64)],
    n_blocks: Option<usize>,
    cfg: &CollectConfig,
    exec: Execution,
) -> Vec<CollectionResult> {
    par_map(jobs, exec, |&(task, seed)| {
        let n = n_blocks.unwrap_or_else(|| collect_block_count(&task.name, seed));
        let layout = match generate_layout(task, seed, n) {
            Ok(l) => l,
            Err(e) => return failed_job(task, seed, Layout::new(task.name.clone(), seed, BTreeMap::new()), e.into()),
        };
        match collect_episode(task, &layout, seed, planner, cfg) {
            Ok(r) => r,
            Err(e) => failed_job(task, seed, layout, e),
        }
    })
}

fn failed_job(task: &TaskSpec, seed: u64, layout: Layout, e: CollectError) -> CollectionResult {
    CollectionResult::Failed(FailureReport {
        task: task.name.clone(),
        seed,
        k: 0,
        plans_used: 0,
        plans: Vec::new(),
        residuals: BTreeMap::new(),
        layout,
        start: None,
        error: Some(e.to_string()),
    })
}

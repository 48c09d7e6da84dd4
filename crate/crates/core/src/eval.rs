//! Evaluation protocol: perturbed task instances, closed-loop re-planning
//! under a step budget, success against the layout, and the ablation
//! sweeps over step budget and re-plan cadence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerState;
use crate::layout::{catalog, generate_layout, Layout, LayoutError, TaskSpec, MAX_LAYOUT_BLOCKS};
use crate::planners::{HistoryEntry, Planner, PlannerContext, PlannerError, MAX_PLANS, SUCCESS_THRESHOLD};
use crate::plan::{render_plan, PlanAst};
use crate::seeding::SeedHasher;
use crate::sim::{perturb_layout, run_plan_with, SimConfig, SimError, Trace, MAX_PERTURBED};
use crate::world::{distance, Action, BlockId, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{0} is in the layout but not in the scene")]
    MissingBlock(BlockId),
    #[error("invalid evaluation config: {0}")]
    Config(String),
}

/// True iff every layout block is strictly closer than `threshold` to its
/// target.
pub fn is_success(w: &WorldState, l: &Layout, threshold: f64) -> Result<bool, EvalError> {
    let mut ok = true;
    for (&id, &t) in &l.targets {
        let p = w.pose_of(id).ok_or(EvalError::MissingBlock(id))?;
        ok &= distance(p, t) < threshold;
    }
    Ok(ok)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuccessScope {
    /// Every block must be on target.
    #[default]
    All,
    /// Only the blocks that were knocked off target.
    Perturbed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
    All,
}

impl Split {
    /// Fixed 80/20 partition of (task, seed) instances.
    pub fn contains(self, task: &str, seed: u64) -> bool {
        let test = SeedHasher::new("split").str(task).u64(seed).finish() % 5 == 0;
        match self {
            Split::Train => !test,
            Split::Test => test,
            Split::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// How many blocks each instance displaces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perturb {
    /// Uniform in 1..=3, drawn per instance.
    #[default]
    Random,
    Fixed(usize),
    /// One episode for each of 1, 2 and 3.
    Each,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub total_steps: usize,
    pub steps_per_replan: usize,
    pub threshold: f64,
    pub success_scope: SuccessScope,
    /// Std-dev of Gaussian noise added to each action component.
    pub noise_sigma: f64,
    pub split: Split,
    pub perturb: Perturb,
    /// Blocks per layout; drawn uniformly from 4..=8 when unset.
    pub n_blocks: Option<usize>,
    pub execution: Execution,
    /// Record wall-clock time per episode. Off gives byte-stable reports.
    pub timing: bool,
    pub sim: SimConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            total_steps: MAX_PLANS * 10,
            steps_per_replan: 10,
            threshold: SUCCESS_THRESHOLD,
            success_scope: SuccessScope::All,
            noise_sigma: 0.0,
            split: Split::Test,
            perturb: Perturb::Random,
            n_blocks: None,
            execution: Execution::Parallel,
            timing: true,
            sim: SimConfig::default(),
        }
    }
}

impl EvalConfig {
    /// Planner calls an episode may make.
    pub fn max_plans(&self) -> usize {
        self.total_steps.div_ceil(self.steps_per_replan)
    }

    pub fn check(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if self.total_steps == 0 || self.steps_per_replan == 0 {
            return bad("step budgets must be positive".into());
        }
        if !(self.threshold > 0.0) {
            return bad(format!("threshold must be positive, got {}", self.threshold));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma must be >= 0, got {}", self.noise_sigma));
        }
        if let Perturb::Fixed(k) = self.perturb {
            if !(1..=MAX_PERTURBED).contains(&k) {
                return bad(format!("perturbation count must be 1..=3, got {k}"));
            }
        }
        if let Some(n) = self.n_blocks {
            if !(MAX_PERTURBED..=MAX_LAYOUT_BLOCKS).contains(&n) {
                return bad(format!("block count must be 3..=8, got {n}"));
            }
        }
        self.sim.check().map_err(|e| EvalError::Config(e.to_string()))
    }
}

/// One concrete starting scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub task: &'static TaskSpec,
    pub seed: u64,
    pub k: usize,
    pub layout: Layout,
    pub start: WorldState,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Builds the instance for `(task, seed)`; `k` and `n_blocks` are drawn
/// from the seed when not given.
pub fn make_instance(
    task: &'static TaskSpec,
    seed: u64,
    k: Option<usize>,
    n_blocks: Option<usize>,
    sim: &SimConfig,
) -> Result<Instance, InstanceError> {
    let mut rng = SeedHasher::new("instance").str(&task.name).u64(seed).rng();
    let n = n_blocks.unwrap_or_else(|| rng.random_range(4..=MAX_LAYOUT_BLOCKS));
    let k = k.unwrap_or_else(|| rng.random_range(1..=MAX_PERTURBED)).min(n);
    let layout = generate_layout(task, seed, n)?;
    let start = perturb_layout(&layout, seed, k, sim)?;
    Ok(Instance {
        task,
        seed,
        k,
        layout,
        start,
    })
}

/// One executed plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRun {
    pub text: String,
    pub trace: Trace,
    pub requests: usize,
    /// The planner gave up and the arm idled instead.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub runs: Vec<PlanRun>,
    /// Planner calls, including a final `done`.
    pub planner_calls: usize,
    pub steps_used: usize,
    pub final_state: WorldState,
}

/// Budget and disturbance for one closed-loop episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub steps_per_plan: usize,
    pub total_steps: usize,
    pub max_plans: usize,
    pub threshold: f64,
    pub noise_sigma: f64,
}

fn outcome_summary(plan: &PlanAst, w: &WorldState) -> String {
    match plan.block().and_then(|id| w.block(id)) {
        Some(b) => format!("{} now at {}, arm at {}", b.id, b.pose, w.arm),
        None => format!("arm at {}", w.arm),
    }
}

/// Plan, execute, observe, repeat, until the planner says `done` or a
/// budget runs out.
pub fn run_episode(
    planner: &dyn Planner,
    inst: &Instance,
    lc: &LoopConfig,
    sim: &SimConfig,
) -> Result<EpisodeRun, PlannerError> {
    let mut ctx = PlannerContext::new(&inst.task.name, &inst.task.instruction, Some(inst.layout.clone()));
    ctx.threshold = lc.threshold;
    let mut noise_rng = SeedHasher::new("action-noise").str(&inst.task.name).u64(inst.seed).u64(inst.k as u64).rng();
    let normal = Normal::new(0.0, lc.noise_sigma.max(0.0)).expect("finite sigma");
    let mut state = inst.start.clone();
    let mut runs = Vec::new();
    let mut planner_calls = 0;
    let mut steps_used = 0;
    while steps_used < lc.total_steps && runs.len() < lc.max_plans {
        ctx.budget_remaining = lc.max_plans - runs.len();
        planner_calls += 1;
        let (plan, text, requests, failed) = match planner.next_plan(&ctx, &state) {
            Ok(o) if o.plan == PlanAst::Done => break,
            Ok(o) => (o.plan, o.text, o.requests, false),
            Err(PlannerError::PlanFailure { .. }) => (PlanAst::Done, render_plan(&PlanAst::Done), 2, true),
            Err(e) => return Err(e),
        };
        let budget = lc.steps_per_plan.min(lc.total_steps - steps_used);
        let disturb = |a: Action| {
            if lc.noise_sigma > 0.0 {
                Action::new(a.dx + normal.sample(&mut noise_rng), a.dy + normal.sample(&mut noise_rng))
            } else {
                a
            }
        };
        let (next, trace) = run_plan_with(&state, &plan, budget, ControllerState::default(), sim, disturb)
            .map_err(|e| match e {
                SimError::Control(c) => PlannerError::Control(c),
                other => PlannerError::Sim(other),
            })?;
        state = next;
        steps_used += budget;
        ctx.record(HistoryEntry {
            plan: text.clone(),
            outcome: outcome_summary(&plan, &state),
        });
        runs.push(PlanRun {
            text,
            trace,
            requests,
            failed,
        });
    }
    Ok(EpisodeRun {
        runs,
        planner_calls,
        steps_used,
        final_state: state,
    })
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], exec: Execution, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    match exec {
        Execution::Parallel => items.par_iter().map(f).collect(),
        Execution::Sequential => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], _exec: Execution, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Everything needed to rerun a failed episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub task: String,
    pub seed: u64,
    pub k: usize,
    pub layout: Layout,
    pub start: WorldState,
    pub plans: Vec<String>,
    #[serde(rename = "final")]
    pub final_state: Option<WorldState>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task: String,
    pub family: String,
    pub difficulty: String,
    pub seed: u64,
    pub k: usize,
    pub n_blocks: usize,
    pub success: bool,
    pub plans_used: usize,
    pub steps_used: usize,
    pub requests: usize,
    pub plan_failures: usize,
    /// Final distance of each block from its target.
    pub residuals: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

impl Rate {
    fn add(&mut self, success: bool) {
        self.total += 1;
        self.successes += success as usize;
        self.rate = self.successes as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub planner: String,
    pub config: EvalConfig,
    pub overall: Rate,
    pub per_family: BTreeMap<String, Rate>,
    pub per_difficulty: BTreeMap<String, Rate>,
    pub mean_seconds: Option<f64>,
    pub mean_requests: f64,
    pub episodes: Vec<EpisodeResult>,
    pub counterexamples: Vec<Counterexample>,
}

impl EvalReport {
    fn from_results(planner: &str, cfg: &EvalConfig, results: Vec<(EpisodeResult, Option<Counterexample>)>) -> Self {
        let mut overall = Rate::default();
        let mut per_family: BTreeMap<String, Rate> = BTreeMap::new();
        let mut per_difficulty: BTreeMap<String, Rate> = BTreeMap::new();
        let mut seconds = 0.0;
        let mut requests = 0;
        let mut episodes = Vec::with_capacity(results.len());
        let mut counterexamples = Vec::new();
        for (r, cx) in results {
            overall.add(r.success);
            per_family.entry(r.family.clone()).or_default().add(r.success);
            per_difficulty.entry(r.difficulty.clone()).or_default().add(r.success);
            seconds += r.seconds.unwrap_or(0.0);
            requests += r.requests;
            episodes.push(r);
            counterexamples.extend(cx);
        }
        let n = overall.total.max(1) as f64;
        Self {
            planner: planner.to_string(),
            config: cfg.clone(),
            overall,
            per_family,
            per_difficulty,
            mean_seconds: cfg.timing.then_some(seconds / n),
            mean_requests: requests as f64 / n,
            episodes,
            counterexamples,
        }
    }

    /// Plain-text summary with the family and difficulty breakdowns.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "planner: {}", self.planner);
        let _ = writeln!(
            s,
            "budget: {} steps, re-plan every {}, threshold {}",
            self.config.total_steps, self.config.steps_per_replan, self.config.threshold
        );
        let _ = writeln!(s, "{:<20} {:>9} {:>8}", "group", "episodes", "success");
        let mut row = |name: &str, r: &Rate| {
            let _ = writeln!(s, "{:<20} {:>9} {:>7.1}%", name, r.total, 100.0 * r.rate);
        };
        row("overall", &self.overall);
        for (k, r) in &self.per_family {
            row(k, r);
        }
        for (k, r) in &self.per_difficulty {
            row(k, r);
        }
        if let Some(t) = self.mean_seconds {
            let _ = writeln!(s, "mean time/task: {t:.4} s");
        }
        if !self.counterexamples.is_empty() {
            let _ = writeln!(s, "failures: {}", self.counterexamples.len());
        }
        s
    }
}

fn scoped_layout(inst: &Instance, scope: SuccessScope) -> Layout {
    match scope {
        SuccessScope::All => inst.layout.clone(),
        SuccessScope::Perturbed => {
            let moved: BTreeMap<_, _> = inst
                .layout
                .targets
                .iter()
                .filter(|(id, t)| inst.start.pose_of(**id) != Some(**t))
                .map(|(&id, &t)| (id, t))
                .collect();
            Layout::new(inst.layout.task.clone(), inst.layout.seed, moved)
        }
    }
}

fn evaluate_one(planner: &dyn Planner, task: &'static TaskSpec, seed: u64, k: Option<usize>, cfg: &EvalConfig) -> (EpisodeResult, Option<Counterexample>) {
    let started = Instant::now();
    let mut result = EpisodeResult {
        task: task.name.clone(),
        family: task.family.to_string(),
        difficulty: task.difficulty.to_string(),
        seed,
        k: k.unwrap_or(0),
        n_blocks: 0,
        success: false,
        plans_used: 0,
        steps_used: 0,
        requests: 0,
        plan_failures: 0,
        residuals: BTreeMap::new(),
        seconds: None,
        error: None,
    };
    let inst = match make_instance(task, seed, k, cfg.n_blocks, &cfg.sim) {
        Ok(i) => i,
        Err(e) => {
            result.error = Some(e.to_string());
            return (result, None);
        }
    };
    result.k = inst.k;
    result.n_blocks = inst.layout.len();
    let lc = LoopConfig {
        steps_per_plan: cfg.steps_per_replan,
        total_steps: cfg.total_steps,
        max_plans: cfg.max_plans(),
        threshold: cfg.threshold,
        noise_sigma: cfg.noise_sigma,
    };
    let run = run_episode(planner, &inst, &lc, &cfg.sim);
    if cfg.timing {
        result.seconds = Some(started.elapsed().as_secs_f64());
    }
    let scoped = scoped_layout(&inst, cfg.success_scope);
    let (plans, final_state) = match run {
        Ok(run) => {
            result.plans_used = run.runs.len();
            result.steps_used = run.steps_used;
            result.requests = run.runs.iter().map(|r| r.requests).sum();
            result.plan_failures = run.runs.iter().filter(|r| r.failed).count();
            result.residuals = inst
                .layout
                .targets
                .iter()
                .map(|(id, t)| (id.to_string(), run.final_state.pose_of(*id).map_or(f64::INFINITY, |p| distance(p, *t))))
                .collect();
            result.success = is_success(&run.final_state, &scoped, cfg.threshold).unwrap_or(false);
            (run.runs.into_iter().map(|r| r.text).collect(), Some(run.final_state))
        }
        Err(e) => {
            result.error = Some(e.to_string());
            (Vec::new(), None)
        }
    };
    let cx = (!result.success).then(|| Counterexample {
        task: task.name.clone(),
        seed,
        k: inst.k,
        layout: inst.layout.clone(),
        start: inst.start.clone(),
        plans,
        final_state,
        error: result.error.clone(),
    });
    (result, cx)
}

/// Runs every `(task, seed)` instance in the configured split.
pub fn run_eval(planner: &dyn Planner, tasks: &[&'static TaskSpec], cfg: &EvalConfig, seeds: &[u64]) -> Result<EvalReport, EvalError> {
    cfg.check()?;
    let ks: Vec<Option<usize>> = match cfg.perturb {
        Perturb::Random => vec![None],
        Perturb::Fixed(k) => vec![Some(k)],
        Perturb::Each => (1..=MAX_PERTURBED).map(Some).collect(),
    };
    let jobs: Vec<(&'static TaskSpec, u64, Option<usize>)> = tasks
        .iter()
        .flat_map(|&t| seeds.iter().filter(move |&&s| cfg.split.contains(&t.name, s)).map(move |&s| (t, s)))
        .flat_map(|(t, s)| ks.iter().map(move |&k| (t, s, k)))
        .collect();
    let results = par_map(&jobs, cfg.execution, |&(t, s, k)| evaluate_one(planner, t, s, k, cfg));
    Ok(EvalReport::from_results(planner.name(), cfg, results))
}

/// All catalog tasks.
pub fn all_tasks() -> Vec<&'static TaskSpec> {
    catalog().iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub rate: f64,
    pub successes: usize,
    pub episodes: usize,
    pub mean_seconds: Option<f64>,
    pub mean_requests: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub planner: String,
    /// What the `value` column varies.
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    fn push(&mut self, value: usize, r: &EvalReport) {
        self.rows.push(SweepRow {
            value,
            rate: r.overall.rate,
            successes: r.overall.successes,
            episodes: r.overall.total,
            mean_seconds: r.mean_seconds,
            mean_requests: r.mean_requests,
        });
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>9} {:>8} {:>14}", self.parameter, "episodes", "success", "time/task (s)");
        for r in &self.rows {
            let time = r.mean_seconds.map_or("-".to_string(), |t| format!("{t:.4}"));
            let _ = writeln!(s, "{:<16} {:>9} {:>7.1}% {:>14}", r.value, r.episodes, 100.0 * r.rate, time);
        }
        s
    }
}

/// Success against total step budget, re-planning at the configured cadence.
pub fn sweep_total_steps(
    planner: &dyn Planner,
    tasks: &[&'static TaskSpec],
    seeds: &[u64],
    values: &[usize],
    cfg: &EvalConfig,
) -> Result<SweepTable, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Config("no step budgets given".into()));
    }
    let mut table = SweepTable {
        planner: planner.name().to_string(),
        parameter: "total steps".into(),
        rows: Vec::new(),
    };
    for &v in values {
        let c = EvalConfig { total_steps: v, ..cfg.clone() };
        table.push(v, &run_eval(planner, tasks, &c, seeds)?);
    }
    Ok(table)
}

/// Success and time per task against re-plan interval at a fixed total.
pub fn sweep_replan(
    planner: &dyn Planner,
    tasks: &[&'static TaskSpec],
    seeds: &[u64],
    intervals: &[usize],
    total: usize,
    cfg: &EvalConfig,
) -> Result<SweepTable, EvalError> {
    if intervals.is_empty() {
        return Err(EvalError::Config("no intervals given".into()));
    }
    if let Some(i) = intervals.iter().find(|&&i| i == 0 || total % i != 0) {
        return Err(EvalError::Config(format!("total {total} is not divisible by interval {i}")));
    }
    let mut table = SweepTable {
        planner: planner.name().to_string(),
        parameter: "re-plan every".into(),
        rows: Vec::new(),
    };
    for &i in intervals {
        let c = EvalConfig {
            total_steps: total,
            steps_per_replan: i,
            ..cfg.clone()
        };
        table.push(i, &run_eval(planner, tasks, &c, seeds)?);
    }
    Ok(table)
}

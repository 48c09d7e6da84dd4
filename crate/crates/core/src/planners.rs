//! Closed-loop plan generators. Each call looks at the current scene and
//! returns the next plan; the harness executes it and asks again.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::assignment;
use crate::controller::ControlError;
use crate::layout::{find_task, generate_layout, Layout, LayoutError, LayoutKind, SortKey};
use crate::llm::{
    build_realtime_prompt, parse_structured_reply, self_verify, ChatClient, ChatMessage, ChatRequest, ReplyError,
    ReplyKind, SamplingParams, TransportError,
};
use crate::plan::{parse_plan, render_plan, PlanAst};
use crate::sim::SimError;
use crate::world::{distance, BlockId, Color, Pose2D, WorldState};

/// Plan budget per episode.
pub const MAX_PLANS: usize = 15;
/// Success radius around each target.
pub const SUCCESS_THRESHOLD: f64 = 0.08;
/// Cost given to block/slot pairs a task forbids.
const FORBIDDEN: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub plan: String,
    /// Short description of the scene after the plan ran.
    pub outcome: String,
}

impl fmt::Display for HistoryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.plan, self.outcome)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerContext {
    pub task: String,
    pub instruction: String,
    pub history: Vec<HistoryEntry>,
    /// Ground-truth targets, when the planner is allowed to see them.
    pub layout: Option<Layout>,
    pub budget_remaining: usize,
    pub threshold: f64,
}

impl PlannerContext {
    pub fn new(task: impl Into<String>, instruction: impl Into<String>, layout: Option<Layout>) -> Self {
        Self {
            task: task.into(),
            instruction: instruction.into(),
            history: Vec::new(),
            layout,
            budget_remaining: MAX_PLANS,
            threshold: SUCCESS_THRESHOLD,
        }
    }

    /// Appends a history entry, keeping fewer than [`MAX_PLANS`] entries.
    pub fn record(&mut self, entry: HistoryEntry) {
        self.history.push(entry);
        if self.history.len() >= MAX_PLANS {
            self.history.remove(0);
        }
    }

    /// Block named by the most recent plan, if it was a move.
    pub fn last_moved(&self) -> Option<BlockId> {
        match parse_plan(&self.history.last()?.plan) {
            Ok(PlanAst::MoveTo { block, .. }) => Some(block),
            _ => None,
        }
    }

    pub fn history_lines(&self) -> Vec<String> {
        self.history.iter().map(ToString::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: PlanAst,
    pub text: String,
    /// Chat requests spent producing this plan.
    pub requests: usize,
    /// The verification turn was unusable and the first answer was kept.
    pub fallback_used: bool,
}

impl From<PlanAst> for PlanOutcome {
    fn from(plan: PlanAst) -> Self {
        Self {
            text: render_plan(&plan),
            plan,
            requests: 0,
            fallback_used: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("planner needs the target layout")]
    NoLayout,
    #[error("{0} is in the layout but not in the scene")]
    MissingBlock(BlockId),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(SimError),
    #[error("no usable plan after retry: {last}")]
    PlanFailure { replies: Vec<String>, last: ReplyError },
}

pub trait Planner: Send + Sync {
    fn name(&self) -> &str;
    fn next_plan(&self, ctx: &PlannerContext, w: &WorldState) -> Result<PlanOutcome, PlannerError>;
}

/// Greedy choice: `Done` once every target is within `threshold`, otherwise
/// move the block farthest from its target. A block picked by the previous
/// plan keeps being moved until it is within `threshold`.
pub fn greedy_plan(
    targets: &BTreeMap<BlockId, Pose2D>,
    w: &WorldState,
    threshold: f64,
    previous: Option<BlockId>,
) -> Result<PlanAst, PlannerError> {
    if let Some((&block, &target)) = previous.and_then(|b| targets.get_key_value(&b)) {
        let pose = w.pose_of(block).ok_or(PlannerError::MissingBlock(block))?;
        if distance(pose, target) >= threshold {
            return Ok(PlanAst::MoveTo { block, target });
        }
    }
    let mut worst: Option<(BlockId, Pose2D, f64)> = None;
    for (&id, &target) in targets {
        let pose = w.pose_of(id).ok_or(PlannerError::MissingBlock(id))?;
        let d = distance(pose, target);
        if d >= threshold && worst.is_none_or(|(_, _, best)| d > best) {
            worst = Some((id, target, d));
        }
    }
    Ok(match worst {
        None => PlanAst::Done,
        Some((block, target, _)) => PlanAst::MoveTo { block, target },
    })
}

/// Reads the true targets from the context.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle;

impl Planner for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn next_plan(&self, ctx: &PlannerContext, w: &WorldState) -> Result<PlanOutcome, PlannerError> {
        let layout = ctx.layout.as_ref().ok_or(PlannerError::NoLayout)?;
        greedy_plan(&layout.targets, w, ctx.threshold, ctx.last_moved()).map(Into::into)
    }
}

/// Works without ground truth: regenerates a canonical layout for the task
/// and matches scene blocks to its slots at minimum total distance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Heuristic;

impl Heuristic {
    pub const CANONICAL_SEED: u64 = 0;

    /// Targets for the blocks in `w`, one slot of the canonical layout each.
    pub fn assign_targets(task: &str, w: &WorldState) -> Result<BTreeMap<BlockId, Pose2D>, PlannerError> {
        let spec = find_task(task).ok_or_else(|| PlannerError::UnknownTask(task.to_string()))?;
        let canonical = generate_layout(spec, Self::CANONICAL_SEED, w.blocks.len())?;
        let slots: Vec<(BlockId, Pose2D)> = canonical.targets.iter().map(|(&id, &p)| (id, p)).collect();
        let blocks: Vec<(BlockId, Pose2D)> = w.blocks.iter().map(|b| (b.id, b.pose)).collect();

        let solve = |compatible: &dyn Fn(BlockId, BlockId) -> bool| {
            let cost: Vec<Vec<f64>> = blocks
                .iter()
                .map(|&(id, p)| {
                    slots
                        .iter()
                        .map(|&(slot_id, t)| if compatible(id, slot_id) { distance(p, t) } else { FORBIDDEN })
                        .collect()
                })
                .collect();
            assignment::solve(&cost)
        };
        let best = match spec.kind {
            LayoutKind::Sort(key) => class_maps(key, &blocks, &slots)
                .into_iter()
                .map(|map| solve(&|b, s| map.get(&key.class_of(b)) == Some(&key.class_of(s))))
                .min_by(|a, b| a.total.total_cmp(&b.total))
                .expect("at least one class mapping"),
            LayoutKind::Smiley { green_eyes: true } => {
                solve(&|b, s| (b.color == Color::Green) == (s.color == Color::Green))
            }
            _ => solve(&|_, _| true),
        };
        Ok(best
            .row_to_col
            .iter()
            .enumerate()
            .map(|(i, &j)| (blocks[i].0, slots[j].1))
            .collect())
    }
}

/// Every injective map from the classes present in the scene to the classes
/// used by the canonical slots (identity-padded when the scene has more).
fn class_maps(key: SortKey, blocks: &[(BlockId, Pose2D)], slots: &[(BlockId, Pose2D)]) -> Vec<BTreeMap<usize, usize>> {
    let mut from: Vec<usize> = blocks.iter().map(|b| key.class_of(b.0)).collect();
    from.sort();
    from.dedup();
    let mut to: Vec<usize> = slots.iter().map(|s| key.class_of(s.0)).collect();
    to.sort();
    to.dedup();
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(from: &[usize], to: &[usize], used: &mut Vec<usize>, out: &mut Vec<BTreeMap<usize, usize>>) {
        if used.len() == from.len() || used.len() == to.len() {
            out.push(from.iter().copied().zip(used.iter().copied()).collect());
            return;
        }
        for &t in to {
            if !used.contains(&t) {
                used.push(t);
                rec(from, to, used, out);
                used.pop();
            }
        }
    }
    rec(&from, &to, &mut current, &mut out);
    out
}

impl Planner for Heuristic {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn next_plan(&self, ctx: &PlannerContext, w: &WorldState) -> Result<PlanOutcome, PlannerError> {
        let targets = Self::assign_targets(&ctx.task, w)?;
        greedy_plan(&targets, w, ctx.threshold, ctx.last_moved()).map(Into::into)
    }
}

/// Asks a chat model for each plan.
pub struct LlmPlanner {
    pub client: Arc<dyn ChatClient>,
    pub model: String,
    pub params: SamplingParams,
    /// Show the true targets in the prompt.
    pub reveal_targets: bool,
    /// Ask the verification question after each first answer.
    pub self_verify: bool,
}

impl LlmPlanner {
    pub fn new(client: Arc<dyn ChatClient>, model: impl Into<String>) -> Self {
        Self {
            client,
            model: model.into(),
            params: SamplingParams::default(),
            reveal_targets: true,
            self_verify: false,
        }
    }

    fn ask(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        self.client.complete(&ChatRequest::new(&self.model, messages.to_vec(), &self.params))
    }
}

impl Planner for LlmPlanner {
    fn name(&self) -> &str {
        "llm"
    }

    fn next_plan(&self, ctx: &PlannerContext, w: &WorldState) -> Result<PlanOutcome, PlannerError> {
        let layout = if self.reveal_targets { ctx.layout.as_ref() } else { None };
        let mut convo = build_realtime_prompt(&ctx.instruction, layout, w, &ctx.history_lines());
        let mut replies = Vec::new();
        let mut requests = 0;
        let mut last_err = None;
        for _ in 0..2 {
            let reply = self.ask(&convo)?;
            requests += 1;
            convo.push(ChatMessage::assistant(reply.clone()));
            match parse_structured_reply(&reply, ReplyKind::Plan) {
                Ok(first) => {
                    let mut outcome = PlanOutcome {
                        plan: first.plan().expect("plan reply"),
                        text: String::new(),
                        requests,
                        fallback_used: false,
                    };
                    if self.self_verify {
                        let v = self_verify(&*self.client, &self.model, &convo, ReplyKind::Plan, &self.params)
                            .map_err(|e| match e {
                                crate::llm::VerifyError::Transport(t) => PlannerError::Transport(t),
                                other => unreachable!("first reply already parsed: {other}"),
                            })?;
                        outcome.requests += 1;
                        outcome.fallback_used = v.fallback_used;
                        outcome.plan = v.final_reply().plan().expect("plan reply");
                    }
                    outcome.text = render_plan(&outcome.plan);
                    return Ok(outcome);
                }
                Err(e) => {
                    convo.push(ChatMessage::user(format!(
                        "Your reply could not be used: {e}. Answer again and follow the Output Restriction exactly."
                    )));
                    replies.push(reply);
                    last_err = Some(e);
                }
            }
        }
        Err(PlannerError::PlanFailure {
            replies,
            last: last_err.expect("two failed attempts"),
        })
    }
}

use thiserror::Error;

use super::ChatMessage;
use crate::layout::{Layout, LayoutRules, TaskSpec, MAX_LAYOUT_BLOCKS};
use crate::world::{BlockId, WorldState, ARM_RADIUS, BLOCK_RADIUS};

/// Version tag of the shipped prompt templates.
pub const TEMPLATE_VERSION: &str = "v1";

const SYSTEM: &str = include_str!("../../templates/system.v1.txt");
const LAYOUT: &str = include_str!("../../templates/layout_prompt.v1.txt");
const REALTIME: &str = include_str!("../../templates/realtime_prompt.v1.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("layout prompt needs 1 to 8 blocks, got {0}")]
    BlockCount(usize),
}

fn fill(template: &str, slots: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    debug_assert!(!out.contains("{{"), "unfilled slot in template");
    out
}

/// Messages asking the model for target positions of `blocks` forming the
/// task's shape.
pub fn build_layout_prompt(task: &TaskSpec, blocks: &[BlockId]) -> Result<Vec<ChatMessage>, PromptError> {
    if blocks.is_empty() || blocks.len() > MAX_LAYOUT_BLOCKS {
        return Err(PromptError::BlockCount(blocks.len()));
    }
    let rules = LayoutRules::default();
    let block_list = blocks
        .iter()
        .map(|b| format!("- {b}"))
        .collect::<Vec<_>>()
        .join("\n");
    let body = fill(
        LAYOUT,
        &[
            ("block_radius", format!("{BLOCK_RADIUS:.2}")),
            ("n_blocks", blocks.len().to_string()),
            ("block_list", block_list),
            ("subject", task.subject.clone()),
            ("min_separation", format!("{:.2}", rules.min_separation())),
            ("min_scale", format!("{:.2}", rules.min_scale)),
        ],
    );
    Ok(vec![ChatMessage::system(SYSTEM.trim_end()), ChatMessage::user(body.trim_end())])
}

/// Messages asking for the next plan given the current scene. With
/// `layout == None` the target positions are withheld and the model has to
/// infer them from the instruction.
pub fn build_realtime_prompt(
    instruction: &str,
    layout: Option<&Layout>,
    w: &WorldState,
    history: &[String],
) -> Vec<ChatMessage> {
    let targets = match layout {
        Some(l) => {
            let mut s = String::from("Target positions:");
            for (id, p) in &l.targets {
                s.push_str(&format!("\n- {id}: {p}"));
            }
            s
        }
        None => "Target positions are not given; infer them from the instruction.".to_string(),
    };
    let block_states = if w.blocks.is_empty() {
        "- none".to_string()
    } else {
        w.blocks
            .iter()
            .map(|b| format!("- {}: {}", b.id, b.pose))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let history = if history.is_empty() {
        "- none yet".to_string()
    } else {
        history
            .iter()
            .enumerate()
            .map(|(i, h)| format!("{}. {h}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let body = fill(
        REALTIME,
        &[
            ("block_radius", format!("{BLOCK_RADIUS:.2}")),
            ("arm_radius", format!("{ARM_RADIUS:.2}")),
            ("instruction", instruction.to_string()),
            ("targets", targets),
            ("block_states", block_states),
            ("arm", w.arm.to_string()),
            ("history", history),
        ],
    );
    vec![ChatMessage::system(SYSTEM.trim_end()), ChatMessage::user(body.trim_end())]
}

use thiserror::Error;

use super::{
    build_layout_prompt, parse_structured_reply, ChatClient, ChatMessage, ChatRequest, PromptError, ReplyError,
    ReplyKind, Role, SamplingParams, StructuredReply, TransportError,
};
use crate::layout::{validate_layout, Layout, LayoutViolation, TaskSpec};
use crate::world::BlockId;

/// Second-turn question sent after the first answer.
pub const VERIFY_QUESTION: &str = "Are you sure your answer is correct?";

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("first reply unusable: {0}")]
    FirstReply(#[source] ReplyError),
    #[error("conversation must end with an assistant reply")]
    NoFirstReply,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Both answers of a verified exchange. `final_reply` is the second answer
/// unless it failed to parse, in which case it is the first one and
/// `fallback_used` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub first: StructuredReply,
    pub second_raw: String,
    pub second: Result<StructuredReply, ReplyError>,
    pub fallback_used: bool,
    pub transcript: Vec<ChatMessage>,
}

impl Verification {
    pub fn final_reply(&self) -> &StructuredReply {
        match &self.second {
            Ok(r) => r,
            Err(_) => &self.first,
        }
    }
}

/// Asks the verification question on a conversation whose last message is
/// the model's first answer.
pub fn self_verify(
    client: &dyn ChatClient,
    model: &str,
    convo: &[ChatMessage],
    kind: ReplyKind,
    params: &SamplingParams,
) -> Result<Verification, VerifyError> {
    let last = convo.last().filter(|m| m.role == Role::Assistant).ok_or(VerifyError::NoFirstReply)?;
    let first = parse_structured_reply(&last.content, kind).map_err(VerifyError::FirstReply)?;
    let mut transcript = convo.to_vec();
    transcript.push(ChatMessage::user(VERIFY_QUESTION));
    let second_raw = client.complete(&ChatRequest::new(model, transcript.clone(), params))?;
    transcript.push(ChatMessage::assistant(second_raw.clone()));
    let second = parse_structured_reply(&second_raw, kind);
    Ok(Verification {
        fallback_used: second.is_err(),
        first,
        second_raw,
        second,
        transcript,
    })
}

/// Sends `messages`, then runs [`self_verify`] on the answer.
pub fn ask_verified(
    client: &dyn ChatClient,
    model: &str,
    messages: Vec<ChatMessage>,
    kind: ReplyKind,
    params: &SamplingParams,
) -> Result<Verification, VerifyError> {
    let answer = client.complete(&ChatRequest::new(model, messages.clone(), params))?;
    let mut convo = messages;
    convo.push(ChatMessage::assistant(answer));
    self_verify(client, model, &convo, kind, params)
}

/// Outcome of asking the model for one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutCollection {
    pub layout: Layout,
    pub violations: Vec<LayoutViolation>,
    /// Blocks the reply placed that were not asked for, or left out.
    pub mismatched: Vec<BlockId>,
    pub verification: Verification,
}

impl LayoutCollection {
    /// Whether the layout passes the retention filter.
    pub fn retained(&self) -> bool {
        self.violations.is_empty() && self.mismatched.is_empty()
    }
}

/// Layout collection: prompt, first answer, verification turn, then the
/// final positions are checked against the layout rules.
pub fn collect_layout_via_llm(
    client: &dyn ChatClient,
    model: &str,
    task: &TaskSpec,
    blocks: &[BlockId],
    seed: u64,
    params: &SamplingParams,
) -> Result<LayoutCollection, VerifyError> {
    let messages = build_layout_prompt(task, blocks)?;
    let verification = ask_verified(client, model, messages, ReplyKind::Positions, params)?;
    let targets = verification.final_reply().positions().cloned().unwrap_or_default();
    let mut mismatched: Vec<BlockId> = blocks.iter().filter(|b| !targets.contains_key(b)).copied().collect();
    mismatched.extend(targets.keys().filter(|b| !blocks.contains(b)));
    mismatched.sort();
    let layout = Layout::new(task.name.clone(), seed, targets);
    Ok(LayoutCollection {
        violations: validate_layout(&layout),
        layout,
        mismatched,
        verification,
    })
}

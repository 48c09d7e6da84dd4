//! Parsing of the three-section replies the prompts ask for.
//!
//! Models decorate section markers inconsistently, so all of these start a
//! section: `<Description>`, `Description:`, `**Description:**`,
//! `## Description`. When no named marker appears at all, a numbered list
//! (`1.`, `2.`, `3.`) is read as description, explanation and payload.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::plan::{parse_plan, render_plan, PlanAst};
use crate::world::{BlockId, Color, Pose2D, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyKind {
    Positions,
    Plan,
}

impl ReplyKind {
    fn payload_name(self) -> &'static str {
        match self {
            ReplyKind::Positions => "Positions",
            ReplyKind::Plan => "Plan",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplyPayload {
    Positions(BTreeMap<BlockId, Pose2D>),
    Plan { text: String, plan: PlanAst },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredReply {
    pub description: String,
    pub explain: String,
    pub payload: ReplyPayload,
}

impl StructuredReply {
    pub fn plan(&self) -> Option<PlanAst> {
        match &self.payload {
            ReplyPayload::Plan { plan, .. } => Some(*plan),
            ReplyPayload::Positions(_) => None,
        }
    }

    pub fn positions(&self) -> Option<&BTreeMap<BlockId, Pose2D>> {
        match &self.payload {
            ReplyPayload::Positions(p) => Some(p),
            ReplyPayload::Plan { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplyError {
    #[error("reply has no {name} section")]
    MissingSection { name: String },
    #[error("malformed {section} section: {reason}")]
    MalformedPayload { section: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Description,
    Explain,
    Payload,
}

const NAMES: &str = "description|explanation|explain|positions|plan";

fn regexes() -> &'static [Regex; 4] {
    static RE: OnceLock<[Regex; 4]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            // opening tag anywhere: split it onto its own line
            Regex::new(&format!(r"(?i)<\s*({NAMES})\s*>")).unwrap(),
            // closing tags are dropped
            Regex::new(&format!(r"(?i)<\s*/\s*({NAMES})\s*>")).unwrap(),
            // named marker at the start of a line
            Regex::new(&format!(
                r"(?i)^\s*(?:#+\s*)?(?:\d+[.)]\s*)?(?:\*\*|__)?\s*(?:<\s*({NAMES})\s*>|({NAMES})\s*(?:\*\*|__)?\s*:|({NAMES})\s*(?:\*\*|__)?\s*$)(?:\*\*|__)?\s*(.*)$"
            ))
            .unwrap(),
            Regex::new(r"^\s*(\d+)[.)]\s+(.*)$").unwrap(),
        ]
    })
}

fn positions_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(red|blue|green|yellow)\s+(cube|moon|pentagon|star)\b[^(\n]*\(\s*([-+]?\d*\.?\d+)\s*,\s*([-+]?\d*\.?\d+)\s*\)",
        )
        .unwrap()
    })
}

fn section_of(name: &str, kind: ReplyKind) -> Option<Section> {
    match name.to_ascii_lowercase().as_str() {
        "description" => Some(Section::Description),
        "explain" | "explanation" => Some(Section::Explain),
        "positions" if kind == ReplyKind::Positions => Some(Section::Payload),
        "plan" if kind == ReplyKind::Plan => Some(Section::Payload),
        _ => None,
    }
}

fn split_sections(text: &str, kind: ReplyKind) -> Vec<(Section, String)> {
    let [open, close, named, numbered] = regexes();
    let text = open.replace_all(text, "\n<$1>");
    let text = close.replace_all(&text, "");

    let mut sections: Vec<(Section, String)> = Vec::new();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some(c) = named.captures(line) {
            let name = c.get(1).or(c.get(2)).or(c.get(3)).unwrap().as_str();
            if let Some(section) = section_of(name, kind) {
                sections.push((section, c.get(4).map_or("", |m| m.as_str()).to_string()));
                current = Some(sections.len() - 1);
                continue;
            }
        }
        if let Some(i) = current {
            let body = &mut sections[i].1;
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        }
    }
    if !sections.is_empty() {
        return sections;
    }

    // no named markers: numbered items 1, 2, 3.. map onto the sections
    let mut items: Vec<String> = Vec::new();
    for line in text.lines() {
        match numbered.captures(line) {
            Some(c) if c[1].parse::<usize>().ok() == Some(items.len() + 1) => items.push(c[2].to_string()),
            _ => {
                if let Some(last) = items.last_mut() {
                    last.push('\n');
                    last.push_str(line);
                }
            }
        }
    }
    if items.len() > 3 {
        let rest = items.split_off(2).join("\n");
        items.push(rest);
    }
    [Section::Description, Section::Explain, Section::Payload]
        .into_iter()
        .zip(items)
        .collect()
}

fn clean_plan_line(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['-', '*', '>', '#'])
        .trim()
        .trim_matches(['"', '\'', '`', '*'])
        .trim()
}

fn parse_plan_payload(body: &str) -> Result<ReplyPayload, ReplyError> {
    let lines: Vec<&str> = body.lines().map(clean_plan_line).filter(|l| !l.is_empty()).collect();
    let joined = lines.join(" ");
    let first_err = match parse_plan(&joined) {
        Ok(plan) => return Ok(ReplyPayload::Plan { text: joined, plan }),
        Err(e) => e,
    };
    for line in &lines {
        if let Ok(plan) = parse_plan(line) {
            return Ok(ReplyPayload::Plan {
                text: line.to_string(),
                plan,
            });
        }
    }
    Err(ReplyError::MalformedPayload {
        section: "Plan".into(),
        reason: first_err.to_string(),
    })
}

fn parse_positions_payload(body: &str) -> Result<ReplyPayload, ReplyError> {
    let bad = |reason: String| ReplyError::MalformedPayload {
        section: "Positions".into(),
        reason,
    };
    let mut out = BTreeMap::new();
    for c in positions_regex().captures_iter(body) {
        let id = BlockId::new(c[1].parse::<Color>().unwrap(), c[2].parse::<Shape>().unwrap());
        let x: f64 = c[3].parse().map_err(|_| bad(format!("bad x for {id}")))?;
        let y: f64 = c[4].parse().map_err(|_| bad(format!("bad y for {id}")))?;
        let p = Pose2D::new(x, y);
        if !p.in_bounds() {
            return Err(bad(format!("{id} at {p} is off the table")));
        }
        if out.insert(id, p).is_some() {
            return Err(bad(format!("{id} listed twice")));
        }
    }
    if out.is_empty() {
        return Err(bad("no `color shape: (x, y)` entries".into()));
    }
    Ok(ReplyPayload::Positions(out))
}

/// Splits a reply into its description, explanation and payload.
pub fn parse_structured_reply(text: &str, kind: ReplyKind) -> Result<StructuredReply, ReplyError> {
    let sections = split_sections(text, kind);
    let take = |which: Section, name: &str| {
        sections
            .iter()
            .find(|(s, _)| *s == which)
            .map(|(_, body)| body.trim().to_string())
            .ok_or_else(|| ReplyError::MissingSection { name: name.to_string() })
    };
    let description = take(Section::Description, "Description")?;
    let explain = take(Section::Explain, "Explain")?;
    let body = take(Section::Payload, kind.payload_name())?;
    let payload = match kind {
        ReplyKind::Plan => parse_plan_payload(&body)?,
        ReplyKind::Positions => parse_positions_payload(&body)?,
    };
    Ok(StructuredReply {
        description,
        explain,
        payload,
    })
}

/// Canonical tagged rendering of a reply, the inverse of
/// [`parse_structured_reply`].
pub fn render_reply(r: &StructuredReply) -> String {
    let payload = match &r.payload {
        ReplyPayload::Plan { plan, .. } => format!("<Plan>\n{}", render_plan(plan)),
        ReplyPayload::Positions(p) => {
            let mut s = String::from("<Positions>");
            for (id, pos) in p {
                s.push_str(&format!("\n{id}: {pos}"));
            }
            s
        }
    };
    format!("<Description>\n{}\n<Explain>\n{}\n{payload}\n", r.description, r.explain)
}

#![allow(dead_code)]

use std::path::PathBuf;

use blockloop::layout::{find_task, Layout};
use blockloop::llm::{build_layout_prompt, build_realtime_prompt, ChatMessage};
use blockloop::world::{Block, BlockId, Color, Pose2D, Shape, WorldState};

pub const RED_MOON: BlockId = BlockId::new(Color::Red, Shape::Moon);

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn render_messages(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("[{:?}]\n{}\n", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Layout prompt for the letter K with five blocks.
pub fn layout_prompt_k() -> String {
    let task = find_task("letter_K").unwrap();
    let blocks = [
        RED_MOON,
        BlockId::new(Color::Blue, Shape::Cube),
        BlockId::new(Color::Green, Shape::Star),
        BlockId::new(Color::Yellow, Shape::Pentagon),
        BlockId::new(Color::Red, Shape::Cube),
    ];
    render_messages(&build_layout_prompt(task, &blocks).unwrap())
}

pub fn red_moon_scene() -> WorldState {
    WorldState::new(
        Pose2D::new(0.79, 0.27),
        vec![
            Block::new(RED_MOON, Pose2D::new(0.17, 0.40)),
            Block::new(BlockId::new(Color::Yellow, Shape::Pentagon), Pose2D::new(0.39, 0.48)),
            Block::new(BlockId::new(Color::Blue, Shape::Cube), Pose2D::new(0.62, 0.71)),
        ],
    )
}

/// Real-time planning prompt for moving the red moon, with the given plan
/// history.
pub fn realtime_prompt_red_moon(history: &[String]) -> String {
    let w = red_moon_scene();
    let targets = w
        .blocks
        .iter()
        .map(|b| (b.id, if b.id == RED_MOON { Pose2D::new(0.76, 0.17) } else { b.pose }))
        .collect();
    let layout = Layout::new("letter_R", 0, targets);
    render_messages(&build_realtime_prompt(
        "move the red moon to form the letter R",
        Some(&layout),
        &w,
        history,
    ))
}

pub const GOLDEN_FILES: [&str; 2] = ["layout_letter_K.txt", "realtime_red_moon.txt"];

pub fn golden_renderings() -> [String; 2] {
    [layout_prompt_k(), realtime_prompt_red_moon(&[])]
}

/// A valid scene with `n` distinct blocks placed by rejection sampling.
pub fn random_scene(rng: &mut impl rand::Rng, n: usize) -> WorldState {
    use blockloop::world::{distance, ARM_RADIUS, BLOCK_RADIUS};
    let mut ids: Vec<BlockId> = BlockId::all().collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), rng);
    loop {
        let arm = Pose2D::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let mut blocks: Vec<Block> = Vec::with_capacity(n);
        for &id in &ids[..n] {
            for _ in 0..200 {
                let p = Pose2D::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
                let clear = distance(p, arm) >= ARM_RADIUS + BLOCK_RADIUS
                    && blocks.iter().all(|b| distance(b.pose, p) >= 2.0 * BLOCK_RADIUS);
                if clear {
                    blocks.push(Block::new(id, p));
                    break;
                }
            }
        }
        if blocks.len() == n {
            return WorldState::new(arm, blocks);
        }
    }
}

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blockloop::sim::{replay_trace, step, SimConfig};
use blockloop::world::{
    distance, nearest_block, validate_state, Action, Block, BlockId, Pose2D, WorldState, BLOCK_RADIUS, CONTACT_EPS,
    MAX_STEP,
};
use common::random_scene;

fn pose() -> impl Strategy<Value = Pose2D> {
    (-0.2f64..1.2, -0.2f64..1.2).prop_map(|(x, y)| Pose2D::new(x, y))
}

fn random_action(rng: &mut impl Rng) -> Action {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let len = if rng.random_bool(0.1) { MAX_STEP } else { rng.random_range(0.0..=MAX_STEP) };
    Action::new(len * angle.cos(), len * angle.sin())
}

/// Distance from `p` to the segment `a`..`b`.
fn segment_distance(p: Pose2D, a: Pose2D, b: Pose2D) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) };
    distance(p, Pose2D::new(a.x + t * dx, a.y + t * dy))
}

proptest! {
    #[test]
    fn distance_is_a_metric(a in pose(), b in pose(), c in pose()) {
        prop_assert!(distance(a, b) >= 0.0);
        prop_assert_eq!(distance(a, b), distance(b, a));
        prop_assert!(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12);
        prop_assert_eq!(distance(a, a), 0.0);
    }

    #[test]
    fn validator_matches_brute_force(
        arm in pose(),
        picks in prop::collection::vec((0usize..16, pose()), 0..=8),
    ) {
        let ids: Vec<BlockId> = BlockId::all().collect();
        let blocks: Vec<Block> = picks.iter().map(|&(i, p)| Block::new(ids[i], p)).collect();
        let w = WorldState::new(arm, blocks);
        let inside = |p: Pose2D| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y);
        let mut broken = !inside(w.arm);
        for (i, a) in w.blocks.iter().enumerate() {
            broken |= !inside(a.pose);
            for b in &w.blocks[i + 1..] {
                broken |= a.id == b.id || distance(a.pose, b.pose) < 2.0 * BLOCK_RADIUS - CONTACT_EPS;
            }
        }
        prop_assert_eq!(validate_state(&w).is_empty(), !broken);
    }

    #[test]
    fn nearest_block_is_a_linear_scan(seed in any::<u64>(), n in 1usize..=8, p in pose()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_scene(&mut rng, n);
        let expect = w
            .blocks
            .iter()
            .min_by(|a, b| distance(a.pose, p).total_cmp(&distance(b.pose, p)).then(a.id.cmp(&b.id)))
            .unwrap()
            .id;
        prop_assert_eq!(nearest_block(&w, p).unwrap(), expect);
    }
}

#[test]
fn nearest_block_ties_go_to_smallest_id() {
    let ids: Vec<BlockId> = BlockId::all().collect();
    let w = WorldState::new(
        Pose2D::new(0.9, 0.9),
        vec![Block::new(ids[5], Pose2D::new(0.3, 0.5)), Block::new(ids[2], Pose2D::new(0.7, 0.5))],
    );
    assert_eq!(nearest_block(&w, Pose2D::new(0.5, 0.5)).unwrap(), ids[2].min(ids[5]));
}

/// 10^5 random steps on random valid scenes: no invalid state, no
/// penetration, and nothing moves that the push chain does not reach.
#[test]
fn step_fuzz() {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut steps = 0;
    while steps < 100_000 {
        let n = rng.random_range(1..=8);
        let mut w = random_scene(&mut rng, n);
        for _ in 0..50 {
            let a = random_action(&mut rng);
            let next = step(&w, a, &cfg).unwrap();
            assert!(validate_state(&next).is_empty(), "{:?} after {a:?} from {w:?}", validate_state(&next));
            for b in &next.blocks {
                assert!(distance(b.pose, next.arm) >= b.radius + next.arm_radius - CONTACT_EPS, "arm inside {}", b.id);
            }
            // blocks reachable from the arm's swept disk through contacts
            let mut reached: Vec<bool> = w
                .blocks
                .iter()
                .map(|b| segment_distance(b.pose, w.arm, next.arm) < b.radius + w.arm_radius + 1e-9)
                .collect();
            loop {
                let mut grew = false;
                for i in 0..w.blocks.len() {
                    if reached[i] {
                        continue;
                    }
                    let b = &w.blocks[i];
                    let touched = (0..w.blocks.len()).any(|j| {
                        reached[j]
                            && segment_distance(b.pose, w.blocks[j].pose, next.blocks[j].pose)
                                < b.radius + w.blocks[j].radius + 1e-9
                    });
                    if touched {
                        reached[i] = true;
                        grew = true;
                    }
                }
                if !grew {
                    break;
                }
            }
            for (i, (before, after)) in w.blocks.iter().zip(&next.blocks).enumerate() {
                assert!(reached[i] || before.pose == after.pose, "{} moved without contact", before.id);
            }
            w = next;
            steps += 1;
        }
    }
}

#[test]
fn step_is_deterministic_and_replays() {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let mut w = random_scene(&mut rng, n);
        let mut trace = Vec::new();
        for _ in 0..40 {
            let a = random_action(&mut rng);
            let next = step(&w, a, &cfg).unwrap();
            assert_eq!(next, step(&w, a, &cfg).unwrap());
            trace.push((w, a));
            w = next;
        }
        assert_eq!(replay_trace(&trace, &cfg).unwrap(), Some(w));
    }
}

#[test]
fn oversized_action_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = random_scene(&mut rng, 3);
    assert!(step(&w, Action::new(MAX_STEP, MAX_STEP), &SimConfig::default()).is_err());
}

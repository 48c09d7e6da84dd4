//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;

use blockloop::adapter::{adapter_forward, grad_check_seed, plan_ce_loss, AdapterParams, Example, Mat};
use blockloop::assignment;
use blockloop::collect::{collect_many, perturb_count, CollectConfig, CollectionResult, ACTIONS_PER_PLAN};
use blockloop::dataset::{audit_record, read_records, write_records};
use blockloop::eval::{
    all_tasks, make_instance, run_episode, run_eval, sweep_replan, sweep_total_steps, EvalConfig, Execution, Instance,
    LoopConfig, Perturb, Split,
};
use blockloop::layout::{catalog, find_task, Difficulty, Family};
use blockloop::llm::mock::{FnClient, ScriptedClient};
use blockloop::llm::{self_verify, ChatMessage, ReplyKind, SamplingParams, VERIFY_QUESTION};
use blockloop::plan::{parse_plan, render_plan, PlanAst};
use blockloop::planners::{LlmPlanner, Oracle, MAX_PLANS, SUCCESS_THRESHOLD};
use blockloop::seeding::SeedHasher;
use blockloop::sim::MAX_PERTURBED;
use blockloop::world::{BlockId, Color, Pose2D, Shape};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn protocol_constants() -> Outcome {
    let e = EvalConfig::default();
    ensure!(e.threshold == 0.08 && SUCCESS_THRESHOLD == 0.08, "threshold {}", e.threshold);
    ensure!(e.steps_per_replan == 10, "steps per plan {}", e.steps_per_replan);
    ensure!(e.max_plans() == 15 && MAX_PLANS == 15, "plan budget {}", e.max_plans());
    ensure!(e.total_steps == 150, "total steps {}", e.total_steps);
    let c = CollectConfig::default();
    ensure!(c.actions_per_plan == 12 && ACTIONS_PER_PLAN == 12, "collection actions {}", c.actions_per_plan);
    ensure!(c.max_plans == 15 && c.threshold == 0.08, "collection budget");
    ensure!(MAX_PERTURBED == 3, "perturbation cap {MAX_PERTURBED}");
    let ks: BTreeSet<usize> = (0..500).map(|s| perturb_count("letter_A", s, 8)).collect();
    ensure!(ks == BTreeSet::from([1, 2, 3]), "perturb counts drawn {ks:?}");
    Ok("0.08 / 15 x 10 / 12 actions / k in 1..=3".into())
}

fn oracle_completeness() -> Outcome {
    let cfg = EvalConfig {
        split: Split::All,
        perturb: Perturb::Each,
        execution: Execution::Sequential,
        timing: false,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..20).collect();
    let started = Instant::now();
    let report = run_eval(&Oracle, &all_tasks(), &cfg, &seeds).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(report.overall.total == 35 * 20 * 3, "{} episodes", report.overall.total);
    ensure!(
        report.counterexamples.len() == report.overall.total - report.overall.successes,
        "{} counterexamples for {} failures",
        report.counterexamples.len(),
        report.overall.total - report.overall.successes
    );
    let lc = LoopConfig {
        steps_per_plan: cfg.steps_per_replan,
        total_steps: cfg.total_steps,
        max_plans: cfg.max_plans(),
        threshold: cfg.threshold,
        noise_sigma: 0.0,
    };
    for c in &report.counterexamples {
        let task = find_task(&c.task).ok_or("unknown task in counterexample")?;
        let inst = Instance {
            task,
            seed: c.seed,
            k: c.k,
            layout: c.layout.clone(),
            start: c.start.clone(),
        };
        let rebuilt = make_instance(task, c.seed, Some(c.k), None, &cfg.sim).map_err(|e| e.to_string())?;
        ensure!(rebuilt == inst, "{} seed {}: counterexample start is not the generated instance", c.task, c.seed);
        let rerun = run_episode(&Oracle, &inst, &lc, &cfg.sim).map_err(|e| e.to_string())?;
        let plans: Vec<_> = rerun.runs.iter().map(|r| r.text.clone()).collect();
        ensure!(plans == c.plans, "{} seed {}: replay chose different plans", c.task, c.seed);
        ensure!(Some(&rerun.final_state) == c.final_state.as_ref(), "{} seed {}: replay ended elsewhere", c.task, c.seed);
    }
    ensure!(report.overall.rate >= 0.95, "success rate {:.4}", report.overall.rate);
    ensure!(elapsed < Duration::from_secs(300), "took {:.1}s", elapsed.as_secs_f64());
    Ok(format!(
        "{}/{} = {:.4}, {} counterexamples replayed, {:.1}s",
        report.overall.successes,
        report.overall.total,
        report.overall.rate,
        report.counterexamples.len(),
        elapsed.as_secs_f64()
    ))
}

fn noisy_cfg() -> EvalConfig {
    EvalConfig {
        split: Split::All,
        noise_sigma: 0.01,
        timing: false,
        ..Default::default()
    }
}

/// 35 tasks x 12 seeds = 420 episodes per cell.
fn trend_seeds() -> Vec<u64> {
    (0..12).collect()
}

fn step_budget_trend() -> Outcome {
    let t = sweep_total_steps(&Oracle, &all_tasks(), &trend_seeds(), &[50, 100, 150, 200], &noisy_cfg())
        .map_err(|e| e.to_string())?;
    let rates: Vec<f64> = t.rows.iter().map(|r| r.rate).collect();
    ensure!(t.rows.iter().all(|r| r.episodes >= 200), "too few episodes per cell");
    ensure!(rates.windows(2).all(|w| w[0] <= w[1]), "rates not non-decreasing: {rates:?}");
    ensure!(rates[3] - rates[2] < 0.05, "150 -> 200 gain {:.4}", rates[3] - rates[2]);
    Ok(format!("rates {rates:.3?} over {} episodes each", t.rows[0].episodes))
}

/// First block listed under "Blocks:" in a real-time prompt.
fn first_block(prompt: &str) -> Option<&str> {
    let rest = &prompt[prompt.find("Blocks:\n- ")? + "Blocks:\n- ".len()..];
    Some(&rest[..rest.find(':')?])
}

fn replan_trend() -> Outcome {
    let t = sweep_replan(&Oracle, &all_tasks(), &trend_seeds(), &[5, 10, 15], 150, &noisy_cfg()).map_err(|e| e.to_string())?;
    ensure!(t.rows.iter().all(|r| r.episodes >= 200), "too few episodes per cell");
    // one-sided 95% tolerance on the difference of two proportions
    for w in t.rows.windows(2) {
        let n = w[0].episodes as f64;
        let se = (w[0].rate * (1.0 - w[0].rate) / n + w[1].rate * (1.0 - w[1].rate) / n).sqrt();
        ensure!(
            w[0].rate + 1.645 * se >= w[1].rate,
            "interval {} rate {:.4} below interval {} rate {:.4} beyond tolerance {:.4}",
            w[0].value,
            w[0].rate,
            w[1].value,
            w[1].rate,
            1.645 * se
        );
    }
    let rates: Vec<f64> = t.rows.iter().map(|r| r.rate).collect();

    let client = FnClient::new(|req: &blockloop::llm::ChatRequest| {
        let prompt = &req.messages.last().unwrap().content;
        let block = first_block(prompt).unwrap_or("red moon");
        Ok(format!(
            "<Description>scene</Description><Explain>go to it</Explain><Plan>move your arm close to the {block}</Plan>"
        ))
    })
    .with_latency(Duration::from_millis(4));
    let llm = LlmPlanner::new(Arc::new(client), "mock");
    let cfg = EvalConfig {
        split: Split::All,
        perturb: Perturb::Fixed(1),
        execution: Execution::Sequential,
        timing: true,
        ..Default::default()
    };
    let tasks = ["letter_L", "circle", "sort_by_color", "smiley_face"].map(|n| find_task(n).unwrap());
    let timed = sweep_replan(&llm, &tasks, &[0, 1], &[5, 10, 15], 150, &cfg).map_err(|e| e.to_string())?;
    let calls: Vec<f64> = timed.rows.iter().map(|r| r.mean_requests).collect();
    let secs: Vec<f64> = timed.rows.iter().map(|r| r.mean_seconds.unwrap_or(f64::NAN)).collect();
    ensure!(calls == [30.0, 15.0, 10.0], "mean calls per task {calls:?}");
    ensure!(secs[0] > secs[1] && secs[1] > secs[2], "time per task not decreasing: {secs:?}");
    Ok(format!("oracle rates {rates:.3?}; mock llm calls {calls:?}, s/task {secs:.3?}"))
}

fn replay_audit() -> Outcome {
    let tasks = all_tasks();
    let jobs: Vec<_> = tasks.iter().flat_map(|&t| (0..6u64).map(move |s| (t, s))).collect();
    let cfg = CollectConfig::default();
    let results = collect_many(&Oracle, &jobs, None, &cfg, Execution::Parallel);
    let retained: Vec<_> = results.iter().filter_map(CollectionResult::record).collect();
    ensure!(!retained.is_empty(), "nothing retained");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("episodes.jsonl");
    write_records(retained.iter().copied(), &path, false).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let mut audited = 0;
    for (i, rec) in read_records(&path).map_err(|e| e.to_string())?.enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        rec.check().map_err(|e| format!("record {i}: {e}"))?;
        audit_record(&rec, &cfg.sim, cfg.threshold).map_err(|e| format!("record {i}: {e}"))?;
        ensure!(rec.meta.perturbed <= MAX_PERTURBED, "record {i} perturbed {}", rec.meta.perturbed);
        audited += 1;
    }
    let per_record = started.elapsed().as_secs_f64() / audited as f64;
    ensure!(audited == retained.len(), "read back {audited} of {}", retained.len());
    ensure!(per_record * 1000.0 < 60.0, "audit {per_record:.4}s per record");
    Ok(format!(
        "{audited}/{} collected episodes retained, all replay exactly; {:.2} ms per record",
        jobs.len(),
        per_record * 1e3
    ))
}

fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..cost.len() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

fn assignment_equivalence() -> Outcome {
    let mut rng = SeedHasher::new("acceptance-assignment").rng();
    for n in 1..=8 {
        for i in 0..1000 {
            let hi = if i % 3 == 0 { 4 } else { 100 };
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..hi) as f64).collect()).collect();
            let a = assignment::solve(&cost);
            let mut cols = a.row_to_col.clone();
            cols.sort_unstable();
            ensure!(cols == (0..n).collect::<Vec<_>>(), "n={n}: not a permutation");
            let recomputed: f64 = a.row_to_col.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            ensure!(recomputed == a.total, "n={n}: reported total {} vs {}", a.total, recomputed);
            let best = brute_force_min(&cost);
            ensure!(a.total == best, "n={n} matrix {i}: solver {} vs exhaustive {best}", a.total);
        }
    }
    Ok("8 sizes x 1000 matrices match exhaustive minimum".into())
}

fn adapter_math() -> Outcome {
    let mut p = AdapterParams::random(11, 8, 2, 4, 6).map_err(|e| e.to_string())?;
    p.wv = Mat::zeros(8, 8);
    let x = Example::random(11, 5, 8, 4, 6);
    ensure!(adapter_forward(&x.vi, &x.vj, &x.vk, &p).map_err(|e| e.to_string())? == x.vk, "residual identity broken");
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let g = grad_check_seed(seed, 4, 2, 3, 3, 5, 1e-5).map_err(|e| e.to_string())?;
        worst = worst.max(g.max_rel_error);
    }
    ensure!(worst < 1e-4, "max relative gradient error {worst:e}");
    for vocab in [2, 10, 50] {
        let loss = plan_ce_loss(&Mat::zeros(3, vocab), &[0, vocab - 1, 1]).map_err(|e| e.to_string())?;
        ensure!((loss - (vocab as f64).ln()).abs() < 1e-9, "uniform CE {loss} for vocab {vocab}");
    }
    Ok(format!("residual exact, worst gradient error {worst:.2e} over 20 seeds, uniform CE = ln V"))
}

fn random_ast(rng: &mut impl Rng) -> PlanAst {
    let ids: Vec<BlockId> = BlockId::all().collect();
    let block = *ids.choose(rng).unwrap();
    match rng.random_range(0..3) {
        0 => PlanAst::Done,
        1 => PlanAst::Approach { block },
        _ => PlanAst::MoveTo {
            block,
            target: Pose2D::new(rng.random_range(0..=100) as f64 / 100.0, rng.random_range(0..=100) as f64 / 100.0),
        },
    }
}

fn parser_suite() -> Outcome {
    let moon = parse_plan("move the red moon to position (0.76, 0.17)").map_err(|e| e.to_string())?;
    ensure!(
        moon == PlanAst::MoveTo {
            block: BlockId::new(Color::Red, Shape::Moon),
            target: Pose2D::new(0.76, 0.17)
        },
        "red moon plan parsed to {moon:?}"
    );
    let pentagon = parse_plan("Move your arm close to the yellow pentagon.").map_err(|e| e.to_string())?;
    ensure!(
        pentagon == PlanAst::Approach { block: BlockId::new(Color::Yellow, Shape::Pentagon) },
        "pentagon plan parsed to {pentagon:?}"
    );
    let mut rng = SeedHasher::new("acceptance-parser").rng();
    for _ in 0..10_000 {
        let ast = random_ast(&mut rng);
        let text = render_plan(&ast);
        ensure!(parse_plan(&text) == Ok(ast), "round trip failed for {text:?}");
    }
    let alphabet: Vec<char> = "move the red blue green yellow cube moon star pentagon arm close to position done (0.5, 1)-.,e9\u{e9}\n\t ".chars().collect();
    let mut panics = 0;
    for i in 0..20_000 {
        let input: String = if i % 2 == 0 {
            let len = rng.random_range(0..60);
            (0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect()
        } else {
            let mut chars: Vec<char> = render_plan(&random_ast(&mut rng)).chars().collect();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0..=chars.len());
                match rng.random_range(0..3) {
                    0 if at < chars.len() => {
                        chars.remove(at);
                    }
                    1 if at < chars.len() => chars[at] = *alphabet.choose(&mut rng).unwrap(),
                    _ => chars.insert(at, *alphabet.choose(&mut rng).unwrap()),
                }
            }
            chars.into_iter().collect()
        };
        if catch_unwind(|| parse_plan(&input)).is_err() {
            panics += 1;
        }
    }
    ensure!(panics == 0, "{panics} fuzz inputs crashed the parser");
    Ok("quoted plans parse, 10000 round trips, 20000 fuzz inputs without a crash".into())
}

fn catalog_fidelity() -> Outcome {
    let c = catalog();
    ensure!(c.len() == 35, "{} tasks", c.len());
    let letters = |s: &str| s.chars().map(|l| format!("letter_{l}")).collect::<Vec<_>>();
    let mut easy = vec!["horizontal_line", "vertical_line", "triangle", "square"].into_iter().map(String::from).collect::<Vec<_>>();
    easy.extend(letters("CDFHILTUV"));
    let mut medium = vec!["sort_by_color", "sort_by_shape", "circle"].into_iter().map(String::from).collect::<Vec<_>>();
    medium.extend(letters("AEJOQRWX"));
    let mut hard = vec!["smiley_face", "smiley_face_green_eyes"].into_iter().map(String::from).collect::<Vec<_>>();
    hard.extend(letters("BGKMNPSYZ"));
    let names_with = |d: Difficulty| c.iter().filter(|t| t.difficulty == d).map(|t| t.name.clone()).collect::<BTreeSet<_>>();
    for (d, expect) in [(Difficulty::Easy, easy), (Difficulty::Medium, medium), (Difficulty::Hard, hard)] {
        ensure!(names_with(d) == expect.into_iter().collect(), "{d:?} list differs: {:?}", names_with(d));
    }
    let count = |f: Family| c.iter().filter(|t| t.family == f).count();
    let fams = [Family::Alphabet, Family::MathGeometry, Family::SemanticGeometry, Family::Sort].map(count);
    ensure!(fams == [26, 5, 2, 2], "family sizes {fams:?}");
    let alphabet: BTreeSet<_> = c.iter().filter(|t| t.family == Family::Alphabet).map(|t| t.name.clone()).collect();
    ensure!(alphabet == letters("ABCDEFGHIJKLMNOPQRSTUVWXYZ").into_iter().collect(), "alphabet tasks {alphabet:?}");
    Ok("35 tasks, families 26/5/2/2, difficulties 13/11/11".into())
}

fn pipeline_golden() -> Outcome {
    for (name, text) in common::GOLDEN_FILES.iter().zip(common::golden_renderings()) {
        let path = common::golden_dir().join(name);
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(text == expected, "{name} differs from the rendered prompt");
    }
    let layout = common::layout_prompt_k();
    for tag in ["<Scene>", "<Task>", "<Rules>", "<Output Restriction>", "<Description>", "<Explain>", "<Positions>"] {
        ensure!(layout.contains(tag), "layout prompt lacks {tag}");
    }
    let realtime = common::realtime_prompt_red_moon(&[]);
    for tag in ["<Scene>", "<Task>", "<Plan>", "<Rules>", "<States>", "<Output Restriction>", "<Description>", "<Explain>"] {
        ensure!(realtime.contains(tag), "real-time prompt lacks {tag}");
    }
    let first = "<Description>d</Description><Explain>e</Explain><Plan>move your arm close to the red moon</Plan>";
    let second = "<Description>d</Description><Explain>e</Explain><Plan>move the red moon to position (0.76, 0.17)</Plan>";
    let client = ScriptedClient::new([second]);
    let convo = vec![ChatMessage::user(realtime), ChatMessage::assistant(first)];
    let v = self_verify(&client, "mock", &convo, ReplyKind::Plan, &SamplingParams::default()).map_err(|e| e.to_string())?;
    let asked = client.requests();
    ensure!(asked.len() == 1, "{} requests", asked.len());
    ensure!(asked[0].messages.last().map(|m| m.content.as_str()) == Some(VERIFY_QUESTION), "verification turn not verbatim");
    ensure!(VERIFY_QUESTION == "Are you sure your answer is correct?", "question text");
    ensure!(!v.fallback_used && v.final_reply().plan().and_then(|p| p.block()).is_some(), "second reply not used");
    ensure!(
        v.final_reply().plan() == Some(PlanAst::MoveTo { block: common::RED_MOON, target: Pose2D::new(0.76, 0.17) }),
        "final plan {:?}",
        v.final_reply().plan()
    );
    Ok("golden prompts match, verification returns the second reply".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("protocol constants", protocol_constants),
        ("oracle completeness", oracle_completeness),
        ("step budget trend", step_budget_trend),
        ("re-plan interval trend", replan_trend),
        ("replay audit", replay_audit),
        ("assignment equivalence", assignment_equivalence),
        ("adapter math", adapter_math),
        ("plan parser", parser_suite),
        ("catalog fidelity", catalog_fidelity),
        ("pipeline golden tests", pipeline_golden),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", i + 1)
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

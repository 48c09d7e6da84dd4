mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use blockloop::adapter::grad_check_seed;
use blockloop::collect::{collect_many, CollectionResult};
use blockloop::dataset::{
    audit_record, dataset_stats, image_name, read_records, render_observation, write_records, IMAGE_SIZE,
};
use blockloop::eval::{all_tasks, run_eval, sweep_replan, sweep_total_steps, Execution, Perturb, SuccessScope, Split};
use blockloop::layout::{find_task, generate_layout, validate_layout, TaskSpec};
use blockloop::llm::HttpChatClient;
use blockloop::planners::{Heuristic, LlmPlanner, Oracle, Planner};

use config::{Manifest, PlannerKind, RunConfig, SweepParam};

/// Bad invocation or configuration. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "blockloop", version, about = "Closed-loop tabletop block rearrangement: layouts, data collection and evaluation")]
struct Cli {
    /// Run config in TOML, or a manifest.json from an earlier run. Flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// First layout seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run episodes on one thread instead of the worker pool
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate target layouts and write them as JSON lines
    GenerateLayouts {
        #[command(flatten)]
        tasks: TaskArgs,
        /// Layout seeds per task
        #[arg(long)]
        seeds: Option<u64>,
        /// Blocks per layout (3 to 8); drawn per layout when omitted
        #[arg(long)]
        blocks: Option<usize>,
        /// Output file
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run a planner on perturbed layouts and keep the successful episodes
    Collect {
        #[command(flatten)]
        tasks: TaskArgs,
        #[command(flatten)]
        planner: PlannerArgs,
        /// Layout seeds per task
        #[arg(long)]
        episodes: Option<u64>,
        /// Blocks per layout (3 to 8); drawn per layout when omitted
        #[arg(long)]
        blocks: Option<usize>,
        /// Output file for retained episodes
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Output file for failure reports [default: failures.jsonl beside --out]
        #[arg(long, value_name = "FILE")]
        failures: Option<PathBuf>,
        /// Also render every observation as a PPM image under images/ beside --out
        #[arg(long)]
        with_images: bool,
    },
    /// Measure closed-loop success rate on the evaluation split
    Evaluate {
        #[command(flatten)]
        tasks: TaskArgs,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        run: LoopArgs,
        /// Output file for the JSON report
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Success rate across step budgets or re-plan intervals
    Sweep {
        #[command(flatten)]
        tasks: TaskArgs,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        run: LoopArgs,
        /// Which setting to vary
        #[arg(long, value_enum)]
        parameter: Option<SweepParam>,
        /// Comma-separated values for the varied setting
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<usize>>,
        /// Output file for the JSON table
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Re-simulate recorded episodes and report the first divergence
    Replay {
        /// Episode file written by `collect`
        input: PathBuf,
        /// Final scenes must be this close to every target
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Summarize an episode file
    Stats {
        /// Episode file written by `collect`
        input: PathBuf,
        /// Print JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Compare analytic and finite-difference gradients of the fusion adapter
    Gradcheck {
        /// Feature width
        #[arg(long)]
        dim: Option<usize>,
        /// Attention heads; must divide --dim
        #[arg(long)]
        heads: Option<usize>,
        /// Visual tokens per feature map
        #[arg(long)]
        tokens: Option<usize>,
        /// Learned queries in the tokenizer
        #[arg(long)]
        queries: Option<usize>,
        /// Plan vocabulary size
        #[arg(long)]
        vocab: Option<usize>,
        /// Finite-difference step
        #[arg(long)]
        epsilon: Option<f64>,
        /// Largest acceptable relative error
        #[arg(long)]
        tolerance: Option<f64>,
        /// Also write the per-parameter errors as JSON
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TaskArgs {
    /// Task name, or `all` for the whole catalog. Repeatable
    #[arg(long = "task", value_name = "NAME")]
    tasks: Vec<String>,
}

#[derive(Args, Debug)]
struct PlannerArgs {
    /// Which planner proposes each sub-task plan
    #[arg(long, value_enum)]
    planner: Option<PlannerKind>,
    /// Model name sent to the chat endpoint (llm planner)
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature (llm planner)
    #[arg(long)]
    temperature: Option<f64>,
    /// Nucleus sampling mass (llm planner)
    #[arg(long)]
    top_p: Option<f64>,
    /// Ask the model to double-check each plan (llm planner)
    #[arg(long)]
    self_verify: bool,
    /// Whether the prompt lists the target positions (llm planner)
    #[arg(long, value_name = "BOOL")]
    reveal_targets: Option<bool>,
}

#[derive(Args, Debug)]
struct LoopArgs {
    /// Layout seeds per task
    #[arg(long)]
    seeds: Option<u64>,
    /// Low-level action budget per episode
    #[arg(long)]
    total_steps: Option<usize>,
    /// Actions executed between planner calls
    #[arg(long)]
    replan_every: Option<usize>,
    /// Success distance between a block and its target
    #[arg(long)]
    threshold: Option<f64>,
    /// Which (task, seed) instances to run
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Which blocks must reach their targets
    #[arg(long, value_enum)]
    success_scope: Option<ScopeArg>,
    /// Std-dev of Gaussian noise added to each action component
    #[arg(long)]
    noise: Option<f64>,
    /// Displaced blocks per instance: random, each, or a fixed 1 to 3
    #[arg(long, value_parser = parse_perturb)]
    perturb: Option<Perturb>,
    /// Blocks per layout (3 to 8); drawn per instance when omitted
    #[arg(long)]
    blocks: Option<usize>,
    /// Record wall-clock time per episode (reports are then not byte-stable)
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ScopeArg {
    All,
    Perturbed,
}

fn parse_perturb(s: &str) -> Result<Perturb, String> {
    match s {
        "random" => Ok(Perturb::Random),
        "each" => Ok(Perturb::Each),
        _ => s
            .parse()
            .map(Perturb::Fixed)
            .map_err(|_| format!("expected random, each or a count, got {s:?}")),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl TaskArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if !self.tasks.is_empty() {
            cfg.tasks = self.tasks.clone();
        }
    }
}

impl PlannerArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.planner, self.planner);
        set(&mut cfg.llm.model, self.model.clone());
        set(&mut cfg.llm.sampling.temperature, self.temperature);
        set(&mut cfg.llm.sampling.top_p, self.top_p);
        set(&mut cfg.llm.reveal_targets, self.reveal_targets);
        cfg.llm.self_verify |= self.self_verify;
    }
}

impl LoopArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let e = &mut cfg.eval;
        set(&mut cfg.seeds, self.seeds);
        set(&mut e.total_steps, self.total_steps);
        set(&mut e.steps_per_replan, self.replan_every);
        set(&mut e.threshold, self.threshold);
        set(
            &mut e.split,
            self.split.map(|s| match s {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
                SplitArg::All => Split::All,
            }),
        );
        set(
            &mut e.success_scope,
            self.success_scope.map(|s| match s {
                ScopeArg::All => SuccessScope::All,
                ScopeArg::Perturbed => SuccessScope::Perturbed,
            }),
        );
        set(&mut e.noise_sigma, self.noise);
        set(&mut e.perturb, self.perturb);
        if self.blocks.is_some() {
            e.n_blocks = self.blocks;
        }
        e.timing |= self.timing;
    }
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if cli.sequential {
        cfg.execution = Execution::Sequential;
    }
    match &cli.command {
        Command::GenerateLayouts { tasks, seeds, blocks, out } => {
            tasks.apply(&mut cfg);
            set(&mut cfg.seeds, *seeds);
            if blocks.is_some() {
                cfg.layouts.n_blocks = *blocks;
            }
            set(&mut cfg.paths.layouts, out.clone());
        }
        Command::Collect {
            tasks,
            planner,
            episodes,
            blocks,
            out,
            failures,
            with_images,
        } => {
            tasks.apply(&mut cfg);
            planner.apply(&mut cfg);
            set(&mut cfg.collect.episodes, *episodes);
            if blocks.is_some() {
                cfg.collect.n_blocks = *blocks;
            }
            set(&mut cfg.paths.episodes, out.clone());
            if failures.is_some() {
                cfg.paths.failures = failures.clone();
            }
            cfg.collect.with_images |= with_images;
        }
        Command::Evaluate { tasks, planner, run, report } => {
            tasks.apply(&mut cfg);
            planner.apply(&mut cfg);
            run.apply(&mut cfg);
            set(&mut cfg.paths.report, report.clone());
        }
        Command::Sweep {
            tasks,
            planner,
            run,
            parameter,
            values,
            report,
        } => {
            tasks.apply(&mut cfg);
            planner.apply(&mut cfg);
            run.apply(&mut cfg);
            set(&mut cfg.sweep.parameter, *parameter);
            set(&mut cfg.sweep.values, values.clone());
            set(&mut cfg.paths.sweep, report.clone());
        }
        Command::Replay { threshold, .. } => set(&mut cfg.collect.threshold, *threshold),
        Command::Stats { .. } => {}
        Command::Gradcheck {
            dim,
            heads,
            tokens,
            queries,
            vocab,
            epsilon,
            tolerance,
            report,
        } => {
            let g = &mut cfg.gradcheck;
            set(&mut g.dim, *dim);
            set(&mut g.heads, *heads);
            set(&mut g.tokens, *tokens);
            set(&mut g.queries, *queries);
            set(&mut g.vocab, *vocab);
            set(&mut g.epsilon, *epsilon);
            set(&mut g.tolerance, *tolerance);
            if report.is_some() {
                cfg.paths.gradcheck = report.clone();
            }
        }
    }
    cfg.eval.execution = cfg.execution;
    Ok(cfg)
}

fn tasks_of(cfg: &RunConfig) -> anyhow::Result<Vec<&'static TaskSpec>> {
    if cfg.tasks.is_empty() || cfg.tasks.iter().any(|t| t == "all") {
        return Ok(all_tasks());
    }
    cfg.tasks
        .iter()
        .map(|n| find_task(n).ok_or_else(|| usage(format!("unknown task {n:?}"))))
        .collect()
}

fn build_planner(cfg: &RunConfig) -> anyhow::Result<Box<dyn Planner>> {
    Ok(match cfg.planner {
        PlannerKind::Oracle => Box::new(Oracle),
        PlannerKind::Heuristic => Box::new(Heuristic),
        PlannerKind::Llm => {
            cfg.llm.sampling.check().map_err(usage)?;
            let client = HttpChatClient::from_env().map_err(|e| usage(e.to_string()))?;
            let mut p = LlmPlanner::new(Arc::new(client), cfg.llm.model.clone());
            p.params = cfg.llm.sampling.clone();
            p.reveal_targets = cfg.llm.reveal_targets;
            p.self_verify = cfg.llm.self_verify;
            Box::new(p)
        }
    })
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> anyhow::Result<usize> {
    create_parent(path)?;
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut f, &item)?;
        f.write_all(b"\n")?;
        n += 1;
    }
    f.flush()?;
    Ok(n)
}

fn manifest(command: &str, cfg: &RunConfig, outputs: Vec<PathBuf>) -> anyhow::Result<()> {
    let path = Manifest::new(command, cfg, outputs).write()?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn generate_layouts(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut layouts = Vec::new();
    for task in tasks_of(cfg)? {
        for seed in cfg.seed_list(cfg.seeds) {
            let n = cfg
                .layouts
                .n_blocks
                .unwrap_or_else(|| blockloop::collect::collect_block_count(&task.name, seed));
            let l = generate_layout(task, seed, n).with_context(|| format!("{} seed {seed}", task.name))?;
            let bad = validate_layout(&l);
            if !bad.is_empty() {
                bail!("{} seed {seed}: invalid layout: {bad:?}", task.name);
            }
            layouts.push(l);
        }
    }
    let n = write_jsonl(&cfg.paths.layouts, &layouts)?;
    println!("{n} layouts -> {}", cfg.paths.layouts.display());
    manifest("generate-layouts", cfg, vec![cfg.paths.layouts.clone()])
}

fn collect(cfg: &RunConfig) -> anyhow::Result<()> {
    let planner = build_planner(cfg)?;
    let jobs: Vec<_> = tasks_of(cfg)?
        .into_iter()
        .flat_map(|t| cfg.seed_list(cfg.collect.episodes).into_iter().map(move |s| (t, s)))
        .collect();
    let results = collect_many(planner.as_ref(), &jobs, cfg.collect.n_blocks, &cfg.collect.core(), cfg.execution);
    let records: Vec<_> = results.iter().filter_map(CollectionResult::record).collect();
    let failures: Vec<_> = results
        .iter()
        .filter_map(|r| match r {
            CollectionResult::Failed(f) => Some(f),
            CollectionResult::Retained(_) => None,
        })
        .collect();
    let out = &cfg.paths.episodes;
    create_parent(out)?;
    write_records(records.iter().copied(), out, false).with_context(|| format!("writing {}", out.display()))?;
    let failures_path = cfg.paths.failures();
    write_jsonl(&failures_path, &failures)?;
    let mut outputs = vec![out.clone(), failures_path];
    if cfg.collect.with_images {
        let dir = cfg.paths.images();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (r, rec) in records.iter().enumerate() {
            for (e, ep) in rec.episodes.iter().enumerate() {
                for (s, pair) in ep.pairs.iter().enumerate() {
                    let path = dir.join(image_name(r, e, s));
                    fs::write(&path, render_observation(&pair.obs, IMAGE_SIZE).to_ppm())
                        .with_context(|| format!("writing {}", path.display()))?;
                }
            }
        }
        outputs.push(dir);
    }
    println!(
        "{} of {} episodes retained ({:.1}%) -> {}",
        records.len(),
        results.len(),
        100.0 * records.len() as f64 / results.len().max(1) as f64,
        out.display()
    );
    println!("{} failure reports -> {}", failures.len(), outputs[1].display());
    manifest("collect", cfg, outputs)
}

fn evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.eval.check().map_err(|e| usage(e.to_string()))?;
    let planner = build_planner(cfg)?;
    let report = run_eval(planner.as_ref(), &tasks_of(cfg)?, &cfg.eval, &cfg.seed_list(cfg.seeds))?;
    write_json(&cfg.paths.report, &report)?;
    print!("{}", report.render_text());
    manifest("evaluate", cfg, vec![cfg.paths.report.clone()])
}

fn sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.eval.check().map_err(|e| usage(e.to_string()))?;
    let planner = build_planner(cfg)?;
    let tasks = tasks_of(cfg)?;
    let seeds = cfg.seed_list(cfg.seeds);
    let values = cfg.sweep.resolved_values();
    let table = match cfg.sweep.parameter {
        SweepParam::TotalSteps => sweep_total_steps(planner.as_ref(), &tasks, &seeds, &values, &cfg.eval),
        SweepParam::ReplanEvery => {
            sweep_replan(planner.as_ref(), &tasks, &seeds, &values, cfg.eval.total_steps, &cfg.eval)
        }
    }
    .map_err(|e| usage(e.to_string()))?;
    write_json(&cfg.paths.sweep, &table)?;
    print!("{}", table.render_text());
    manifest("sweep", cfg, vec![cfg.paths.sweep.clone()])
}

fn replay(cfg: &RunConfig, input: &Path) -> anyhow::Result<()> {
    let mut n = 0;
    for (i, rec) in read_records(input)
        .with_context(|| format!("reading {}", input.display()))?
        .enumerate()
    {
        let rec = rec.with_context(|| format!("record {i}"))?;
        audit_record(&rec, &cfg.collect.sim, cfg.collect.threshold)
            .with_context(|| format!("record {i} ({} seed {})", rec.meta.task, rec.meta.seed))?;
        n += 1;
    }
    println!("{n} records replay exactly");
    Ok(())
}

fn stats(input: &Path, json: bool) -> anyhow::Result<()> {
    let s = dataset_stats(input).with_context(|| format!("reading {}", input.display()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
        return Ok(());
    }
    println!("records            {}", s.records);
    println!("layouts            {}", s.layouts);
    println!("successful plans   {}", s.successful_plans);
    println!("plans per episode  {:.2}", s.mean_plans_per_episode);
    for (k, v) in s.per_family.iter().chain(&s.per_difficulty) {
        println!("  {k:<16} {v}");
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig) -> anyhow::Result<()> {
    let g = &cfg.gradcheck;
    let r = grad_check_seed(cfg.seed, g.dim, g.heads, g.tokens, g.queries, g.vocab, g.epsilon)
        .map_err(|e| usage(e.to_string()))?;
    for (name, err) in &r.per_param {
        println!("{name:<8} {err:.3e}");
    }
    println!("max      {:.3e} (tolerance {:.1e})", r.max_rel_error, g.tolerance);
    if let Some(path) = &cfg.paths.gradcheck {
        write_json(path, &r)?;
        manifest("gradcheck", cfg, vec![path.clone()])?;
    }
    if !(r.max_rel_error <= g.tolerance) {
        bail!("relative error {:.3e} exceeds {:.1e}", r.max_rel_error, g.tolerance);
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::GenerateLayouts { .. } => generate_layouts(&cfg),
        Command::Collect { .. } => collect(&cfg),
        Command::Evaluate { .. } => evaluate(&cfg),
        Command::Sweep { .. } => sweep(&cfg),
        Command::Replay { input, .. } => replay(&cfg, input),
        Command::Stats { input, json } => stats(input, *json),
        Command::Gradcheck { .. } => gradcheck(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

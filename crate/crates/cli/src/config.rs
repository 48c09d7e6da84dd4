use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use blockloop::collect::CollectConfig;
use blockloop::eval::{EvalConfig, Execution};
use blockloop::llm::{SamplingParams, TEMPLATE_VERSION};
use blockloop::planners::{MAX_PLANS, SUCCESS_THRESHOLD};
use blockloop::sim::SimConfig;

use crate::UsageError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    #[default]
    Oracle,
    Heuristic,
    Llm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    #[default]
    TotalSteps,
    ReplanEvery,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    /// Blocks per layout; drawn per (task, seed) when unset.
    pub n_blocks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    /// Layout seeds per task.
    pub episodes: u64,
    pub n_blocks: Option<usize>,
    pub actions_per_plan: usize,
    pub max_plans: usize,
    pub threshold: f64,
    pub with_images: bool,
    pub sim: SimConfig,
}

impl Default for CollectSection {
    fn default() -> Self {
        let c = CollectConfig::default();
        Self {
            episodes: 10,
            n_blocks: None,
            actions_per_plan: c.actions_per_plan,
            max_plans: c.max_plans,
            threshold: c.threshold,
            with_images: false,
            sim: c.sim,
        }
    }
}

impl CollectSection {
    pub fn core(&self) -> CollectConfig {
        CollectConfig {
            actions_per_plan: self.actions_per_plan,
            max_plans: self.max_plans,
            threshold: self.threshold,
            sim: self.sim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParam,
    /// Empty means the default grid for the parameter.
    pub values: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            parameter: SweepParam::TotalSteps,
            values: Vec::new(),
        }
    }
}

impl SweepSection {
    pub fn resolved_values(&self) -> Vec<usize> {
        match (self.values.is_empty(), self.parameter) {
            (false, _) => self.values.clone(),
            (true, SweepParam::TotalSteps) => vec![50, 100, 150, 200],
            (true, SweepParam::ReplanEvery) => vec![5, 10, 15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub model: String,
    pub sampling: SamplingParams,
    pub self_verify: bool,
    pub reveal_targets: bool,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            sampling: SamplingParams::default(),
            self_verify: false,
            reveal_targets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradSection {
    pub dim: usize,
    pub heads: usize,
    pub tokens: usize,
    pub queries: usize,
    pub vocab: usize,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradSection {
    fn default() -> Self {
        Self {
            dim: 4,
            heads: 2,
            tokens: 3,
            queries: 3,
            vocab: 5,
            epsilon: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Where each command writes. Relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub layouts: PathBuf,
    pub episodes: PathBuf,
    /// Defaults to `failures.jsonl` beside the episodes file.
    pub failures: Option<PathBuf>,
    pub report: PathBuf,
    pub sweep: PathBuf,
    /// Gradient-check report; printed only when unset.
    pub gradcheck: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            layouts: "layouts.jsonl".into(),
            episodes: "episodes.jsonl".into(),
            failures: None,
            report: "report.json".into(),
            sweep: "sweep.json".into(),
            gradcheck: None,
        }
    }
}

impl Paths {
    pub fn failures(&self) -> PathBuf {
        self.failures.clone().unwrap_or_else(|| sibling(&self.episodes, "failures.jsonl"))
    }

    pub fn images(&self) -> PathBuf {
        sibling(&self.episodes, "images")
    }
}

pub fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

/// Everything a run depends on. Built from defaults, then the config file,
/// then command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// First layout seed.
    pub seed: u64,
    /// Layout seeds per task for `generate-layouts`, `evaluate` and `sweep`.
    pub seeds: u64,
    /// Task names; empty means the whole catalog.
    pub tasks: Vec<String>,
    pub planner: PlannerKind,
    pub execution: Execution,
    pub layouts: LayoutSection,
    pub collect: CollectSection,
    pub eval: EvalConfig,
    pub sweep: SweepSection,
    pub llm: LlmSection,
    pub gradcheck: GradSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 20,
            tasks: Vec::new(),
            planner: PlannerKind::Oracle,
            execution: Execution::Parallel,
            layouts: LayoutSection::default(),
            collect: CollectSection::default(),
            eval: EvalConfig {
                total_steps: MAX_PLANS * 10,
                threshold: SUCCESS_THRESHOLD,
                timing: false,
                ..EvalConfig::default()
            },
            sweep: SweepSection::default(),
            llm: LlmSection::default(),
            gradcheck: GradSection::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config, or the `config` object of a JSON manifest.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str::<Manifest>(&text)
                .map(|m| m.config)
                .map_err(|e| e.to_string())
        } else {
            toml::from_str::<RunConfig>(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    pub fn seed_list(&self, count: u64) -> Vec<u64> {
        (0..count).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub template_version: String,
    pub command: String,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, outputs: Vec<PathBuf>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            template_version: TEMPLATE_VERSION.into(),
            command: command.into(),
            seed: config.seed,
            outputs,
            config: config.clone(),
        }
    }

    /// Writes `manifest.json` in the directory of the first output.
    pub fn write(&self) -> anyhow::Result<PathBuf> {
        let first = self.outputs.first().context("manifest without outputs")?;
        let path = sibling(first, "manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: RunConfig = toml::from_str("seeds = 3\n[eval]\nthreshold = 0.05\n[llm.sampling]\ntemperature = 0.5\n").unwrap();
        assert_eq!(c.seeds, 3);
        assert_eq!(c.eval.threshold, 0.05);
        assert_eq!(c.eval.total_steps, RunConfig::default().eval.total_steps);
        assert_eq!(c.llm.sampling.temperature, 0.5);
        assert_eq!(c.llm.sampling.top_p, SamplingParams::default().top_p);
    }

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("../../../docs/formats.md");
        let start = doc.find("```toml\n").unwrap() + 8;
        let body = &doc[start..start + doc[start..].find("```").unwrap()];
        let c: RunConfig = toml::from_str(body).unwrap();
        assert_eq!(c.sweep.parameter, SweepParam::ReplanEvery);
        assert_eq!(c.paths.report, PathBuf::from("runs/eval/report.json"));
        let c: RunConfig = toml::from_str(&body.replace(r#"perturb = "random""#, "perturb = { fixed = 2 }")).unwrap();
        assert_eq!(c.eval.perturb, blockloop::eval::Perturb::Fixed(2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seedz = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[collect]\nepisode = 3\n").is_err());
    }

    #[test]
    fn manifest_config_round_trips() {
        let mut c = RunConfig::default();
        c.tasks = vec!["circle".into()];
        c.sweep.parameter = SweepParam::ReplanEvery;
        let m = Manifest::new("evaluate", &c, vec!["out/report.json".into()]);
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back.config, c);
        assert_eq!(toml::from_str::<RunConfig>(&toml::to_string(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn failures_default_beside_episodes() {
        let p = Paths {
            episodes: "run/a.jsonl".into(),
            ..Paths::default()
        };
        assert_eq!(p.failures(), PathBuf::from("run/failures.jsonl"));
        assert_eq!(p.images(), PathBuf::from("run/images"));
    }
}

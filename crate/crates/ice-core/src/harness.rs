//! Train/test harness: runs task sets per configuration arm and reduces the
//! reports to the benchmark metrics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, RunConfig, RunMode, TaskRunReport, TaskSpec};
use crate::llm::{CallCounters, CallTag, HttpBackend, HttpConfig, LlmBackend, LlmError, ScriptedBackend};
use crate::memory::{EmbedderSpec, MemorySnapshot, MemoryStore};
use crate::sim_env::FixtureResolver;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bench spec: {0}")]
    Spec(String),
    #[error("arm {arm} failed: {source}")]
    ArmFailed { arm: String, source: LlmError },
    #[error("task file {0}")]
    Task(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Scripted(PathBuf),
    Http,
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("scripted", path)) if !path.is_empty() => Ok(BackendSpec::Scripted(path.into())),
            None if s == "http" => Ok(BackendSpec::Http),
            _ => Err(format!("backend must be scripted:<file> or http, got {s:?}")),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BackendSpec::Scripted(p) => s.serialize_str(&format!("scripted:{}", p.display())),
            BackendSpec::Http => s.serialize_str("http"),
        }
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl BackendSpec {
    /// Relative scripted paths are taken relative to `base`.
    pub fn resolve(&self, base: &Path) -> BackendSpec {
        match self {
            BackendSpec::Scripted(p) if p.is_relative() => BackendSpec::Scripted(base.join(p)),
            other => other.clone(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn LlmBackend>, LlmError> {
        Ok(match self {
            BackendSpec::Scripted(path) => Box::new(ScriptedBackend::from_file(path)?),
            BackendSpec::Http => {
                let mut cfg = HttpConfig::from_env()?;
                cfg.seed = Some(seed as i64);
                Box::new(HttpBackend::new(cfg))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub planning_ice: bool,
    pub execution_ice: bool,
    pub backend: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub train_tasks: Vec<PathBuf>,
    pub test_tasks: Vec<PathBuf>,
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Train-set prefixes for the experience-size sweep.
    #[serde(default)]
    pub ablation_sizes: Vec<usize>,
    /// Arm used for the sweep; defaults to the last arm.
    #[serde(default)]
    pub ablation_arm: Option<String>,
    #[serde(default)]
    pub config: RunConfig,
    /// Extra fixture directory.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

/// A bench spec with its task files loaded and paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedBench {
    pub spec: BenchSpec,
    pub train: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
    pub fixtures: FixtureResolver,
}

pub fn load_tasks(paths: &[PathBuf]) -> Result<Vec<TaskSpec>, HarnessError> {
    paths
        .iter()
        .map(|p| TaskSpec::load(p).map_err(HarnessError::Task))
        .collect()
}

impl LoadedBench {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Spec(format!("{}: {e}", path.display())))?;
        let mut spec: BenchSpec =
            serde_json::from_str(&text).map_err(|e| HarnessError::Spec(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if spec.arms.is_empty() {
            return Err(HarnessError::Spec("no arms".into()));
        }
        for arm in &mut spec.arms {
            arm.backend = arm.backend.resolve(base);
        }
        let abs = |ps: &[PathBuf]| ps.iter().map(|p| base.join(p)).collect::<Vec<_>>();
        let train = load_tasks(&abs(&spec.train_tasks))?;
        let test = load_tasks(&abs(&spec.test_tasks))?;
        let mut fixtures = FixtureResolver::default();
        if let Some(dir) = &spec.fixtures {
            fixtures = fixtures.with_dir(&base.join(dir));
        }
        Ok(LoadedBench {
            spec,
            train,
            test,
            fixtures,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub api_calls_all: u64,
    pub api_calls_tools: u64,
    pub completion_rate_pct: f64,
    pub rectification_times: u64,
    /// Present only for arms with execution-level reuse.
    pub reutilization_rate_pct: Option<f64>,
    pub leaf_subgoals: u64,
    pub pipeline_served: u64,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Metrics over the test-phase reports, with call counts from `counters`.
pub fn compute_metrics(counters: &CallCounters, reports: &[TaskRunReport], execution_ice: bool) -> MetricsReport {
    let leaves: usize = reports.iter().map(|r| r.outcomes.len()).sum();
    let successes: usize = reports.iter().map(TaskRunReport::successes).sum();
    let served: usize = reports.iter().map(TaskRunReport::pipeline_served).sum();
    MetricsReport {
        api_calls_all: counters.all,
        api_calls_tools: counters.get(CallTag::ToolHandling),
        completion_rate_pct: pct(successes, leaves),
        rectification_times: reports.iter().map(|r| r.rectifications as u64).sum(),
        reutilization_rate_pct: execution_ice.then(|| pct(served, leaves)),
        leaf_subgoals: leaves as u64,
        pipeline_served: served as u64,
    }
}

/// Sum of per-task counters.
pub fn summed_counters(reports: &[TaskRunReport]) -> CallCounters {
    let mut total = CallCounters::default();
    for r in reports {
        total.all += r.counters.all;
        for (tag, n) in &r.counters.by_tag {
            *total.by_tag.entry(*tag).or_insert(0) += n;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub error: String,
    pub backend: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub reports: Vec<TaskRunReport>,
    pub failures: Vec<TaskFailure>,
    pub counters: CallCounters,
}

/// Runs `tasks` in order (or concurrently when `parallel`), keeping going
/// past failed tasks. Results come back in task order either way.
pub fn run_tasks(engine: &Engine<'_>, tasks: &[TaskSpec], parallel: bool) -> (Vec<TaskRunReport>, Vec<TaskFailure>) {
    let results: Vec<Result<TaskRunReport, EngineError>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = tasks.iter().map(|t| s.spawn(|| engine.run_task(t))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("task thread panicked"))
                .collect()
        })
    } else {
        tasks.iter().map(|t| engine.run_task(t)).collect()
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (task, r) in tasks.iter().zip(results) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                log::warn!("task {} failed: {e}", task.id);
                failures.push(TaskFailure {
                    task_id: task.id.clone(),
                    backend: matches!(e, EngineError::TaskAborted(_)),
                    error: e.to_string(),
                });
            }
        }
    }
    (reports, failures)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub planning_ice: bool,
    pub execution_ice: bool,
    pub train_size: usize,
    pub metrics: MetricsReport,
    /// Metrics recomputed from the per-task counters agree with the
    /// backend's own.
    pub cross_check: bool,
    pub train: PhaseResult,
    pub test: PhaseResult,
    pub memory: MemorySnapshot,
}

/// One arm: fresh memory and backend, a Train pass over `train` (skipped
/// when the arm uses no memory), counter reset, then an Exploit pass over
/// `test`. Concurrency, when asked for, applies to the test pass only, so
/// the memory contents never depend on thread timing.
pub fn run_arm(
    arm: &ArmSpec,
    base: &RunConfig,
    train: &[TaskSpec],
    test: &[TaskSpec],
    fixtures: &FixtureResolver,
    seed: u64,
    parallel: bool,
) -> Result<ArmResult, HarnessError> {
    let backend = arm.backend.build(seed).map_err(|source| HarnessError::ArmFailed {
        arm: arm.name.clone(),
        source,
    })?;
    let memory = MemoryStore::new(EmbedderSpec::default());
    let cfg = RunConfig {
        planning_ice: arm.planning_ice,
        execution_ice: arm.execution_ice,
        seed,
        ..base.clone()
    };
    let engine_for = |mode| {
        Engine::new(RunConfig { mode, ..cfg.clone() }, &memory, backend.as_ref())
            .map(|e| e.with_fixtures(fixtures.clone()))
            .map_err(|e| HarnessError::Spec(e.to_string()))
    };

    let train_phase = if arm.planning_ice || arm.execution_ice {
        let (reports, failures) = run_tasks(&engine_for(RunMode::Train)?, train, false);
        PhaseResult {
            reports,
            failures,
            counters: backend.counters(),
        }
    } else {
        PhaseResult {
            reports: vec![],
            failures: vec![],
            counters: CallCounters::default(),
        }
    };

    backend.reset_counters();
    let (reports, failures) = run_tasks(&engine_for(RunMode::Exploit)?, test, parallel);
    let counters = backend.counters();
    let metrics = compute_metrics(&counters, &reports, arm.execution_ice);
    let cross_check = failures.is_empty() && summed_counters(&reports) == counters && counters.is_consistent();
    Ok(ArmResult {
        name: arm.name.clone(),
        planning_ice: arm.planning_ice,
        execution_ice: arm.execution_ice,
        train_size: train.len(),
        metrics,
        cross_check,
        train: train_phase,
        test: PhaseResult {
            reports,
            failures,
            counters,
        },
        memory: memory.snapshot(),
    })
}

/// An arm that could not run at all, e.g. because its backend could not
/// be built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFailure {
    pub arm: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub arms: Vec<ArmResult>,
    pub ablation: Vec<ArmResult>,
    #[serde(default)]
    pub failed_arms: Vec<ArmFailure>,
}

fn record_arm(
    result: Result<ArmResult, HarnessError>,
    done: &mut Vec<ArmResult>,
    failed: &mut Vec<ArmFailure>,
) -> Result<(), HarnessError> {
    match result {
        Ok(r) => done.push(r),
        Err(HarnessError::ArmFailed { arm, source }) => {
            log::warn!("arm {arm} failed: {source}");
            failed.push(ArmFailure {
                arm,
                error: source.to_string(),
            });
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

pub fn run_bench(bench: &LoadedBench, parallel: bool) -> Result<BenchReport, HarnessError> {
    let spec = &bench.spec;
    let mut arms = Vec::new();
    let mut failed_arms = Vec::new();
    for arm in &spec.arms {
        let r = run_arm(arm, &spec.config, &bench.train, &bench.test, &bench.fixtures, spec.seed, parallel);
        record_arm(r, &mut arms, &mut failed_arms)?;
    }
    let mut ablation = Vec::new();
    if !spec.ablation_sizes.is_empty() {
        let arm = match &spec.ablation_arm {
            Some(name) => spec
                .arms
                .iter()
                .find(|a| &a.name == name)
                .ok_or_else(|| HarnessError::Spec(format!("unknown ablation arm {name}")))?,
            None => spec.arms.last().expect("arms checked non-empty"),
        };
        for &size in &spec.ablation_sizes {
            let train = &bench.train[..size.min(bench.train.len())];
            let r = run_arm(arm, &spec.config, train, &bench.test, &bench.fixtures, spec.seed, parallel);
            record_arm(r, &mut ablation, &mut failed_arms)?;
        }
    }
    Ok(BenchReport {
        seed: spec.seed,
        arms,
        ablation,
        failed_arms,
    })
}

fn table(title: &str, label: &str, rows: &[ArmResult], row_name: impl Fn(&ArmResult) -> String) -> String {
    let headers = [
        label,
        "API Calls (All)",
        "API Calls (Tools)",
        "Completion %",
        "Rectifications",
        "Re-utilization %",
    ];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            [
                row_name(r),
                m.api_calls_all.to_string(),
                m.api_calls_tools.to_string(),
                format!("{:.2}", m.completion_rate_pct),
                // execution-only arms leave planning alone; their count is
                // still in the JSON report
                if r.execution_ice && !r.planning_ice {
                    "-".into()
                } else {
                    m.rectification_times.to_string()
                },
                m.reutilization_rate_pct.map_or("-".into(), |v| format!("{v:.2}")),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = format!("{title}\n");
    let line = |out: &mut String, row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &headers);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &cells {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

impl BenchReport {
    pub fn task_failures(&self) -> impl Iterator<Item = &TaskFailure> {
        self.arms
            .iter()
            .chain(&self.ablation)
            .flat_map(|a| a.train.failures.iter().chain(&a.test.failures))
    }

    /// Aligned text table per section.
    pub fn render_table(&self) -> String {
        let mut out = table("Arms", "Arm", &self.arms, |r| r.name.clone());
        if !self.ablation.is_empty() {
            out.push('\n');
            out.push_str(&table("Experience size", "Train tasks", &self.ablation, |r| {
                r.train_size.to_string()
            }));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

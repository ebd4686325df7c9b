//! `ice`: train, exploit, benchmark and inspect agent experience.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ice_core::consolidation::{consolidate_pipeline, GoalContext, DEFAULT_REPAIR_LIMIT};
use ice_core::engine::{Engine, RunConfig, RunMode, TaskRunReport};
use ice_core::harness::{load_tasks, run_bench, run_tasks, BackendSpec, LoadedBench, TaskFailure};
use ice_core::llm::{LlmBackend, LlmError};
use ice_core::memory::{EmbedderSpec, MemoryStore, RecordKind, RecordPayload};
use ice_core::sim_env::FixtureResolver;
use ice_core::trajectory::TrajectoryLog;
use serde_json::json;

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "ice", version, about = "Investigate-consolidate-exploit agent harness")]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Opts {
    /// Engine configuration (JSON); flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Memory snapshot to read, and for `train` to write back.
    #[arg(long, global = true)]
    memory: Option<PathBuf>,
    /// `scripted:<file>` or `http`.
    #[arg(long, global = true)]
    backend: Option<BackendSpec>,
    /// Minimum similarity for reusing a stored pipeline.
    #[arg(long, global = true)]
    threshold_pipeline: Option<f64>,
    /// Minimum similarity for citing a stored workflow while planning.
    #[arg(long, global = true)]
    threshold_workflow: Option<f64>,
    /// Reuse workflows during planning (and --no-planning-ice to turn it off).
    #[arg(long, global = true, overrides_with = "no_planning_ice")]
    planning_ice: bool,
    #[arg(long, global = true, overrides_with = "planning_ice")]
    no_planning_ice: bool,
    /// Reuse pipelines during execution (and --no-execution-ice to turn it off).
    #[arg(long, global = true, overrides_with = "no_execution_ice")]
    execution_ice: bool,
    #[arg(long, global = true, overrides_with = "execution_ice")]
    no_execution_ice: bool,
    /// Seed passed to the backend.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where to write the JSON output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run tasks concurrently (exploit passes only).
    #[arg(long, global = true)]
    parallel: bool,
    /// Extra directory searched for fixture files.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run tasks in train mode and store what they teach.
    Train { tasks: Vec<PathBuf> },
    /// Run tasks reusing stored experience; memory is left unchanged.
    Run { tasks: Vec<PathBuf> },
    /// Run every arm of a bench spec and print the metrics table.
    Bench { spec: PathBuf },
    /// Turn a trajectory log into a pipeline.
    Consolidate { log: PathBuf },
    /// Inspect, export or import a memory snapshot.
    #[command(subcommand)]
    Memory(MemoryCommand),
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// One row per record, optionally with its similarity to a query.
    List {
        #[arg(long)]
        query: Option<String>,
    },
    /// Print one record's payload.
    Show { id: u64 },
    /// Write every record to a directory, pipelines as standalone documents.
    Export { dir: PathBuf },
    /// Rebuild a snapshot from an exported directory into --memory.
    Import { dir: PathBuf },
}

/// Failure classes with their exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Task(anyhow::Error),
    Backend(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Task(_) => 2,
            Failure::Backend(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn backend_failure(e: LlmError) -> Failure {
    Failure::Backend(anyhow!(e))
}

type Outcome = Result<(), Failure>;

impl Opts {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(t) = self.threshold_pipeline {
            cfg.pipeline_threshold = t;
        }
        if let Some(t) = self.threshold_workflow {
            cfg.workflow_threshold = t;
        }
        if self.planning_ice {
            cfg.planning_ice = true;
        }
        if self.no_planning_ice {
            cfg.planning_ice = false;
        }
        if self.execution_ice {
            cfg.execution_ice = true;
        }
        if self.no_execution_ice {
            cfg.execution_ice = false;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
    }

    fn backend(&self, seed: u64) -> Result<Box<dyn LlmBackend>, Failure> {
        let spec = self
            .backend
            .as_ref()
            .ok_or_else(|| Failure::Usage(anyhow!("--backend is required")))?;
        spec.build(seed).map_err(backend_failure)
    }

    fn fixture_resolver(&self) -> FixtureResolver {
        match &self.fixtures {
            Some(dir) => FixtureResolver::default().with_dir(dir),
            None => FixtureResolver::default(),
        }
    }

    fn open_memory(&self) -> anyhow::Result<MemoryStore> {
        match &self.memory {
            Some(path) if path.exists() => {
                MemoryStore::load(path, None).with_context(|| format!("loading {}", path.display()))
            }
            _ => Ok(MemoryStore::new(EmbedderSpec::default())),
        }
    }

    fn write_out(&self, text: &str) -> anyhow::Result<()> {
        match &self.out {
            Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
            None => Ok(()),
        }
    }
}

fn summarize(r: &TaskRunReport) -> String {
    format!(
        "{}: {}/{} subgoals succeeded, root {:?}, {} calls ({} tool handling), {} rectifications, {} stored",
        r.task_id,
        r.successes(),
        r.outcomes.len(),
        r.plan.root.status,
        r.counters.all,
        r.counters.get(ice_core::llm::CallTag::ToolHandling),
        r.rectifications,
        r.stored.len(),
    )
}

fn failures_outcome(failures: &[&TaskFailure]) -> Outcome {
    for f in failures {
        eprintln!("task {} failed: {}", f.task_id, f.error);
    }
    if let Some(f) = failures.iter().find(|f| f.backend) {
        return Err(Failure::Backend(anyhow!("task {}: {}", f.task_id, f.error)));
    }
    match failures.first() {
        Some(f) => Err(Failure::Task(anyhow!("{} task(s) failed, first {}", failures.len(), f.task_id))),
        None => Ok(()),
    }
}

fn cmd_tasks(opts: &Opts, tasks: &[PathBuf], mode: RunMode) -> Outcome {
    if mode == RunMode::Train && opts.memory.is_none() {
        return Err(Failure::Usage(anyhow!("train needs --memory to store what it learns")));
    }
    let tasks = load_tasks(tasks).map_err(|e| Failure::Task(anyhow!(e)))?;
    let cfg = RunConfig { mode, ..opts.run_config()? };
    let memory = opts.open_memory()?;
    let backend = opts.backend(cfg.seed)?;
    let engine = Engine::new(cfg, &memory, backend.as_ref())
        .map_err(|e| Failure::Usage(anyhow!(e)))?
        .with_fixtures(opts.fixture_resolver());
    let (reports, failures) = run_tasks(&engine, &tasks, opts.parallel && mode == RunMode::Exploit);
    for r in &reports {
        out!("{}", summarize(r));
    }
    let counters = backend.counters();
    out!("total: {} calls", counters.all);
    if mode == RunMode::Train {
        let path = opts.memory.as_ref().expect("checked above");
        memory.save(path).with_context(|| format!("saving {}", path.display()))?;
        out!("memory: {} records in {}", memory.len(), path.display());
    }
    let out = json!({ "reports": reports, "failures": failures, "counters": counters });
    opts.write_out(&serde_json::to_string_pretty(&out).expect("reports serialize"))?;
    failures_outcome(&failures.iter().collect::<Vec<_>>())
}

fn cmd_bench(opts: &Opts, spec: &Path) -> Outcome {
    let mut bench = LoadedBench::load(spec).map_err(|e| Failure::Usage(anyhow!(e)))?;
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        bench.spec.config = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    }
    opts.apply(&mut bench.spec.config);
    if let Some(seed) = opts.seed {
        bench.spec.seed = seed;
    }
    if let Some(backend) = &opts.backend {
        for arm in &mut bench.spec.arms {
            arm.backend = backend.clone();
        }
    }
    if let Some(dir) = &opts.fixtures {
        bench.fixtures = bench.fixtures.with_dir(dir);
    }
    bench.spec.config.validate().map_err(|e| Failure::Usage(anyhow!(e)))?;
    let report = run_bench(&bench, opts.parallel).map_err(|e| Failure::Usage(anyhow!(e)))?;
    out!("{}", report.render_table().trim_end_matches('\n'));
    opts.write_out(&report.to_json())?;
    if let Some(f) = report.failed_arms.first() {
        for f in &report.failed_arms {
            eprintln!("arm {} failed: {}", f.arm, f.error);
        }
        return Err(Failure::Backend(anyhow!("arm {} failed", f.arm)));
    }
    failures_outcome(&report.task_failures().collect::<Vec<_>>())
}

fn cmd_consolidate(opts: &Opts, log: &Path) -> Outcome {
    let text = std::fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
    let parsed = TrajectoryLog::parse(&text).map_err(|e| Failure::Task(anyhow!("{}: {e}", log.display())))?;
    let cfg = opts.run_config()?;
    let backend = opts.backend(cfg.seed)?;
    let ctx = GoalContext {
        description: &parsed.description,
        milestones: &parsed.milestones,
    };
    let result = consolidate_pipeline(&parsed.to_trajectory(), ctx, backend.as_ref(), DEFAULT_REPAIR_LIMIT);
    let pipeline = match result {
        Ok(c) => c.pipeline,
        Err(ice_core::consolidation::ConsolidationError::Backend(e)) => return Err(backend_failure(e)),
        Err(e) => return Err(Failure::Task(anyhow!(e))),
    };
    let doc = pipeline.to_json_pretty();
    if opts.out.is_some() {
        opts.write_out(&doc)?;
    } else {
        out!("{doc}");
    }
    Ok(())
}

fn kind_name(kind: RecordKind) -> &'static str {
    match kind {
        RecordKind::Workflow => "workflow",
        RecordKind::Pipeline => "pipeline",
    }
}

fn cmd_memory(opts: &Opts, sub: &MemoryCommand) -> Outcome {
    let path = opts
        .memory
        .as_ref()
        .ok_or_else(|| Failure::Usage(anyhow!("--memory is required")))?;
    if let MemoryCommand::Import { dir } = sub {
        let store = import(dir)?;
        store.save(path).with_context(|| format!("saving {}", path.display()))?;
        out!("imported {} records into {}", store.len(), path.display());
        return Ok(());
    }
    let store = MemoryStore::load(path, None).with_context(|| format!("loading {}", path.display()))?;
    match sub {
        MemoryCommand::List { query } => {
            let q = query.as_ref().map(|q| store.embed(q)).transpose().context("embedding query")?;
            for r in store.records() {
                let key = r.key_text.replace('\n', " | ");
                match &q {
                    Some(q) => out!("{}\t{}\t{:.4}\t{key}", r.id, kind_name(r.kind()), q.cosine(&r.embedding)),
                    None => out!("{}\t{}\t{key}", r.id, kind_name(r.kind())),
                }
            }
        }
        MemoryCommand::Show { id } => {
            let r = store.get(*id).map_err(|e| Failure::Usage(anyhow!(e)))?;
            let text = match &r.payload {
                RecordPayload::Pipeline(p) => p.to_json_pretty(),
                RecordPayload::Workflow(w) => serde_json::to_string_pretty(w).expect("workflow serializes"),
            };
            out!("{text}");
        }
        MemoryCommand::Export { dir } => {
            export(&store, dir)?;
            out!("exported {} records to {}", store.len(), dir.display());
        }
        MemoryCommand::Import { .. } => unreachable!("handled above"),
    }
    Ok(())
}

const INDEX: &str = "index.json";

fn export(store: &MemoryStore, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut index = Vec::new();
    for r in store.records() {
        let file = format!("{:04}-{}.json", r.id, kind_name(r.kind()));
        let text = match &r.payload {
            RecordPayload::Pipeline(p) => p.to_json_pretty(),
            RecordPayload::Workflow(w) => serde_json::to_string_pretty(w).expect("workflow serializes"),
        };
        std::fs::write(dir.join(&file), text + "\n")?;
        index.push(json!({ "id": r.id, "kind": r.kind(), "key": r.key_text, "file": file }));
    }
    let meta = json!({ "dimension": store.dimension(), "records": index });
    std::fs::write(dir.join(INDEX), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn import(dir: &Path) -> anyhow::Result<MemoryStore> {
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join(INDEX)).with_context(|| format!("reading {}", dir.join(INDEX).display()))?,
    )?;
    let dimension = meta["dimension"].as_u64().context("index has no dimension")? as usize;
    let store = MemoryStore::new(EmbedderSpec::LocalDeterministic { dimension });
    for entry in meta["records"].as_array().context("index has no records")? {
        let kind: RecordKind = serde_json::from_value(entry["kind"].clone())?;
        let key = entry["key"].as_str().context("record without key")?;
        let file = entry["file"].as_str().context("record without file")?;
        let payload: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(file))?)?;
        store
            .store_json(kind, key, payload)
            .with_context(|| format!("importing {file}"))?;
    }
    Ok(store)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let opts = cli.opts;
    let result = match &cli.command {
        Command::Train { tasks } => cmd_tasks(&opts, tasks, RunMode::Train),
        Command::Run { tasks } => cmd_tasks(&opts, tasks, RunMode::Exploit),
        Command::Bench { spec } => cmd_bench(&opts, spec),
        Command::Consolidate { log } => cmd_consolidate(&opts, log),
        Command::Memory(sub) => cmd_memory(&opts, sub),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Usage(e) | Failure::Task(e) | Failure::Backend(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "ice",
            "--no-planning-ice",
            "--threshold-pipeline",
            "0.5",
            "--seed",
            "9",
            "run",
            "t.json",
        ])
        .unwrap();
        let cfg = cli.opts.run_config().unwrap();
        assert!(!cfg.planning_ice);
        assert!(cfg.execution_ice);
        assert_eq!(cfg.pipeline_threshold, 0.5);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn later_ice_flag_wins() {
        let cli = Cli::try_parse_from(["ice", "--no-execution-ice", "--execution-ice", "run"]).unwrap();
        assert!(cli.opts.run_config().unwrap().execution_ice);
    }

    #[test]
    fn out_of_range_threshold_is_rejected() {
        let cli = Cli::try_parse_from(["ice", "--threshold-workflow", "2", "run"]).unwrap();
        assert!(cli.opts.run_config().is_err());
    }

    #[test]
    fn backend_flag_parses() {
        let cli = Cli::try_parse_from(["ice", "--backend", "scripted:s.json", "run"]).unwrap();
        assert_eq!(cli.opts.backend, Some(BackendSpec::Scripted("s.json".into())));
        assert!(Cli::try_parse_from(["ice", "--backend", "smtp", "run"]).is_err());
    }
}

//! The `scaffold` command line.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::agent::{read_jsonl, write_jsonl, ConfigLabel, TaskSpec, TerminationCause, TrajectoryError, TrajectoryRecord};
use crate::config::{Backend, ConfigError, EnvSelection, GatewayMode, RunConfig};
use crate::env::{EnvError, Environment};
use crate::evaluator::{build_report, classify_failure, task_goal_completion, ClassifyMode, Report, ReportError};
use crate::gateway::{
    ChatGateway, FixtureStore, GatewayError, HttpGateway, LlmEndpointConfig, LlmRole, RecordingGateway, ReplayGateway,
};
use crate::miniworld::adapter::{conformance_suite, serve, AdapterEnv};
use crate::miniworld::fixture::{TaskFixture, DEFAULT_MAX_TURNS};
use crate::miniworld::{builtin_tasks, load_task_dir, MiniWorld};
use crate::runner::{run_ablation, run_suite};
use crate::synthetic::SyntheticModel;

#[derive(Debug, Parser)]
#[command(name = "scaffold", version, about = "Run and evaluate scaffolded tool-using agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration over the task set.
    Run(RunArgs),
    /// Run baseline, correction_only and full_scaffold over the same tasks.
    Ablate(AblateArgs),
    /// Classify the failed episodes of a trajectory file.
    Classify(ClassifyArgs),
    /// Render metrics and failure tables from trajectory files.
    Report(ReportArgs),
    /// Record completions for every arm into a fixture directory.
    RecordFixtures(RecordArgs),
    /// Serve the built-in world over the adapter protocol.
    ServeEnv(ServeArgs),
    /// Run the adapter conformance suite against a server.
    CheckAdapter(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunOpts {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<ConfigLabel>,
    #[arg(long, value_enum)]
    pub mode: Option<GatewayMode>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_turns: Option<u32>,
    /// Directory of task files for the built-in world.
    #[arg(long)]
    pub tasks_dir: Option<PathBuf>,
    /// Use an adapter server (`tcp:host:port`, `unix:path`, `stdio:command`).
    #[arg(long)]
    pub adapter: Option<String>,
    /// Only these task ids (comma separated). With an adapter an id may
    /// carry a difficulty as `id@2`.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    /// Episodes to run concurrently.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Give the corrector the artifacts extracted from the history.
    #[arg(long)]
    pub inject_artifacts: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub opts: RunOpts,
    /// Trajectory JSONL output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub opts: RunOpts,
    /// Directory for the per-arm trajectories and the report.
    #[arg(long, default_value = "ablation")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    pub input: PathBuf,
    /// Use an LLM judge at this OpenAI-compatible base URL.
    #[arg(long, requires = "judge_model")]
    pub judge_url: Option<String>,
    #[arg(long)]
    pub judge_model: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Trajectory files, one per run. With two or more, the first and last
    /// are compared.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub opts: RunOpts,
    /// Overwrite fixtures that already exist.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub tasks_dir: Option<PathBuf>,
    /// `tcp:host:port` or `unix:path`. Without it, serve one session on
    /// stdin and stdout.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub address: String,
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value = "print(apis.supervisor.show_profile())")]
    pub code: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub fn main(cli: Cli) -> ExitCode {
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run_command(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Report(a) => cmd_report(a),
        Command::RecordFixtures(a) => cmd_record(a),
        Command::ServeEnv(a) => cmd_serve(a),
        Command::CheckAdapter(a) => cmd_check(a),
    }
}

/// The config file, if any, with command-line flags on top.
pub fn resolve_config(opts: &RunOpts, output: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env_overrides(|k| std::env::var(k).ok());
    if let Some(l) = opts.label {
        cfg.label = l;
    }
    if let Some(m) = opts.mode {
        cfg.mode = m;
    }
    if let Some(b) = opts.backend {
        cfg.backend = b;
    }
    if let Some(f) = &opts.fixtures {
        cfg.fixtures = Some(f.clone());
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if opts.max_turns.is_some() {
        cfg.max_turns = opts.max_turns;
    }
    if let Some(t) = &opts.tasks_dir {
        cfg.env = EnvSelection::Miniworld { tasks: Some(t.clone()) };
    }
    if let Some(a) = &opts.adapter {
        cfg.env = EnvSelection::Adapter { address: a.clone() };
    }
    if !opts.tasks.is_empty() {
        cfg.tasks = opts.tasks.clone();
    }
    if let Some(p) = opts.parallel {
        cfg.parallel = p;
    }
    if opts.inject_artifacts {
        cfg.selective_artifact_injection = true;
    }
    if let Some(o) = output {
        cfg.output = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Task fixtures of the built-in world, or `None` with an adapter.
fn world_tasks(cfg: &RunConfig) -> Result<Option<Vec<TaskFixture>>, CliError> {
    match &cfg.env {
        EnvSelection::Miniworld { tasks: None } => Ok(Some(builtin_tasks())),
        EnvSelection::Miniworld { tasks: Some(dir) } => Ok(Some(load_task_dir(dir)?)),
        EnvSelection::Adapter { .. } => Ok(None),
    }
}

fn task_list(cfg: &RunConfig, fixtures: Option<&[TaskFixture]>) -> Result<Vec<TaskSpec>, CliError> {
    let Some(fixtures) = fixtures else {
        return cfg
            .tasks
            .iter()
            .map(|t| {
                let (id, difficulty) = match t.split_once('@') {
                    Some((id, d)) => {
                        (id, d.parse().map_err(|_| CliError::Failed(format!("bad difficulty in task `{t}`")))?)
                    }
                    None => (t.as_str(), 0),
                };
                Ok(TaskSpec {
                    task_id: id.to_string(),
                    instruction: "Complete the task described in the first observation.".into(),
                    difficulty,
                    max_turns: cfg.max_turns.unwrap_or(DEFAULT_MAX_TURNS),
                })
            })
            .collect();
    };
    let mut specs: Vec<TaskSpec> = fixtures.iter().map(TaskFixture::task_spec).collect();
    if !cfg.tasks.is_empty() {
        if let Some(missing) = cfg.tasks.iter().find(|t| !specs.iter().any(|s| &s.task_id == *t)) {
            return Err(EnvError::UnknownTask(missing.clone()).into());
        }
        specs.retain(|s| cfg.tasks.contains(&s.task_id));
    }
    Ok(specs)
}

fn backend(cfg: &RunConfig, fixtures: Option<&[TaskFixture]>) -> Result<Box<dyn ChatGateway>, CliError> {
    Ok(match cfg.backend {
        Backend::Http => Box::new(
            HttpGateway::new(cfg.endpoint_configs())?.with_api_key(std::env::var("SCAFFOLD_API_KEY").ok()),
        ),
        Backend::Synthetic => {
            let tasks = fixtures.map(<[TaskFixture]>::to_vec).unwrap_or_else(builtin_tasks);
            Box::new(SyntheticModel::from_tasks(&tasks).map_err(CliError::Failed)?)
        }
    })
}

enum Gateway {
    Plain(Box<dyn ChatGateway>),
    Recording(RecordingGateway<Box<dyn ChatGateway>>),
}

impl Gateway {
    fn as_dyn(&self) -> &dyn ChatGateway {
        match self {
            Gateway::Plain(g) => g.as_ref(),
            Gateway::Recording(g) => g,
        }
    }

    fn flush(&self) -> Result<(), GatewayError> {
        match self {
            Gateway::Plain(_) => Ok(()),
            Gateway::Recording(g) => g.flush(),
        }
    }
}

fn gateway(cfg: &RunConfig, fixtures: Option<&[TaskFixture]>, force: bool) -> Result<Gateway, CliError> {
    let dir = || cfg.fixtures.clone().expect("validated: fixture directory present");
    Ok(match cfg.mode {
        GatewayMode::Live => Gateway::Plain(backend(cfg, fixtures)?),
        GatewayMode::Replay => Gateway::Plain(Box::new(ReplayGateway::open(dir())?)),
        GatewayMode::Record => {
            Gateway::Recording(RecordingGateway::new(backend(cfg, fixtures)?, FixtureStore::open(dir())?, force))
        }
    })
}

type EnvFactory = Box<dyn Fn() -> Result<Box<dyn Environment>, EnvError> + Sync>;

fn env_factory(cfg: &RunConfig, fixtures: Option<Vec<TaskFixture>>) -> EnvFactory {
    match (&cfg.env, fixtures) {
        (EnvSelection::Adapter { address }, _) => {
            let address = address.clone();
            Box::new(move || Ok(Box::new(AdapterEnv::connect(&address)?) as Box<dyn Environment>))
        }
        (_, fixtures) => {
            let fixtures = fixtures.unwrap_or_else(builtin_tasks);
            Box::new(move || Ok(Box::new(MiniWorld::new(fixtures.clone())?) as Box<dyn Environment>))
        }
    }
}

/// A gateway failure in any episode fails the command, after results are
/// written.
fn gateway_failures(records: &[TrajectoryRecord]) -> Result<(), CliError> {
    let failed: Vec<String> = records
        .iter()
        .filter(|r| r.termination_cause == TerminationCause::GatewayError)
        .map(|r| format!("{}: {}", r.task_id, r.error.as_deref().unwrap_or("gateway error")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} episode(s) hit a gateway error:\n  {}", failed.len(), failed.join("\n  "))))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_records(path: &Path, records: &[TrajectoryRecord]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_jsonl(path, records)?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.opts, a.output.as_deref())?;
    let fixtures = world_tasks(&cfg)?;
    let tasks = task_list(&cfg, fixtures.as_deref())?;
    let gw = gateway(&cfg, fixtures.as_deref(), false)?;
    let make_env = env_factory(&cfg, fixtures);
    let records = run_suite(&tasks, &cfg.agent_config(), gw.as_dyn(), &make_env, cfg.parallel);
    gw.flush()?;
    write_records(&cfg.output, &records)?;
    let report = build_report(std::slice::from_ref(&records), ClassifyMode::RuleBased)?;
    write_text(&cfg.output.with_extension("report.json"), &report.to_json())?;
    print!("{}", report.render_text());
    gateway_failures(&records)
}

fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.opts, None)?;
    let fixtures = world_tasks(&cfg)?;
    let tasks = task_list(&cfg, fixtures.as_deref())?;
    let gw = gateway(&cfg, fixtures.as_deref(), false)?;
    let make_env = env_factory(&cfg, fixtures);
    let runs = run_ablation(&tasks, &cfg.agent_config(), gw.as_dyn(), &make_env, cfg.parallel);
    gw.flush()?;
    for (label, records) in ConfigLabel::ALL.iter().zip(&runs) {
        write_records(&a.out_dir.join(format!("{label}.jsonl")), records)?;
    }
    let report = build_report(&runs, ClassifyMode::RuleBased)?;
    write_text(&a.out_dir.join("report.json"), &report.to_json())?;
    let text = report.render_text();
    write_text(&a.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    runs.iter().try_for_each(|r| gateway_failures(r))
}

fn cmd_classify(a: ClassifyArgs) -> Result<(), CliError> {
    let records = read_nonempty(&a.input)?;
    let judge = match (&a.judge_url, &a.judge_model) {
        (Some(url), Some(model)) => Some(
            HttpGateway::new([LlmEndpointConfig::new(LlmRole::Judge, url, model)])?
                .with_api_key(std::env::var("SCAFFOLD_API_KEY").ok()),
        ),
        _ => None,
    };
    let mode = match &judge {
        Some(g) => ClassifyMode::Judge(g),
        None => ClassifyMode::RuleBased,
    };
    let mut out = String::new();
    for r in records.iter().filter(|r| !r.succeeded()) {
        let c = classify_failure(r, mode).map_err(ReportError::from)?;
        out.push_str(&serde_json::to_string(&c).map_err(ReportError::from)?);
        out.push('\n');
    }
    match &a.output {
        Some(p) => write_text(p, &out),
        None => Ok(std::io::stdout().write_all(out.as_bytes())?),
    }
}

fn read_nonempty(path: &Path) -> Result<Vec<TrajectoryRecord>, CliError> {
    let records = read_jsonl(path)?;
    if records.is_empty() {
        return Err(TrajectoryError::Empty(path.display().to_string()).into());
    }
    Ok(records)
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let runs = a.inputs.iter().map(|p| read_nonempty(p)).collect::<Result<Vec<_>, _>>()?;
    for run in &runs {
        task_goal_completion(run).map_err(ReportError::from)?;
    }
    let report: Report = build_report(&runs, ClassifyMode::RuleBased)?;
    let text = match a.format {
        ReportFormat::Text => report.render_text(),
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Csv => report.render_csv(),
    };
    match &a.output {
        Some(p) => write_text(p, &text),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn cmd_record(a: RecordArgs) -> Result<(), CliError> {
    let mut opts = a.opts.clone();
    opts.mode = Some(GatewayMode::Record);
    let cfg = resolve_config(&opts, None)?;
    let fixtures = world_tasks(&cfg)?;
    let tasks = task_list(&cfg, fixtures.as_deref())?;
    let gw = gateway(&cfg, fixtures.as_deref(), a.force)?;
    let make_env = env_factory(&cfg, fixtures);
    let runs = run_ablation(&tasks, &cfg.agent_config(), gw.as_dyn(), &make_env, cfg.parallel);
    gw.flush()?;
    for (label, records) in ConfigLabel::ALL.iter().zip(&runs) {
        let won = records.iter().filter(|r| r.succeeded()).count();
        println!("{label}: {won}/{} tasks", records.len());
    }
    runs.iter().try_for_each(|r| gateway_failures(r))?;
    println!("fixtures written to {}", cfg.fixtures.expect("record mode has a fixture dir").display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let fixtures = match &a.tasks_dir {
        Some(d) => load_task_dir(d)?,
        None => builtin_tasks(),
    };
    let world = || MiniWorld::new(fixtures.clone());
    match a.listen.as_deref().map(|l| l.split_once(':')) {
        None => {
            let stdin = std::io::stdin();
            serve(&mut world()?, stdin.lock(), std::io::stdout().lock())?;
        }
        Some(Some(("tcp", addr))) => {
            let listener = std::net::TcpListener::bind(addr)?;
            println!("listening on tcp:{}", listener.local_addr()?);
            std::io::stdout().flush()?;
            std::thread::scope(|s| -> Result<(), CliError> {
                for conn in listener.incoming() {
                    let conn = conn?;
                    let mut env = world()?;
                    s.spawn(move || {
                        let Ok(read) = conn.try_clone() else { return };
                        if let Err(e) = serve(&mut env, BufReader::new(read), conn) {
                            eprintln!("session ended: {e}");
                        }
                    });
                }
                Ok(())
            })?;
        }
        #[cfg(unix)]
        Some(Some(("unix", path))) => {
            let listener = std::os::unix::net::UnixListener::bind(path)?;
            println!("listening on unix:{path}");
            std::io::stdout().flush()?;
            std::thread::scope(|s| -> Result<(), CliError> {
                for conn in listener.incoming() {
                    let conn = conn?;
                    let mut env = world()?;
                    s.spawn(move || {
                        let Ok(read) = conn.try_clone() else { return };
                        if let Err(e) = serve(&mut env, BufReader::new(read), conn) {
                            eprintln!("session ended: {e}");
                        }
                    });
                }
                Ok(())
            })?;
        }
        _ => return Err(CliError::Failed(format!("unsupported listen address `{}`", a.listen.unwrap_or_default()))),
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<(), CliError> {
    let checks = conformance_suite(&mut || AdapterEnv::connect(&a.address), &a.task, &a.code);
    let mut failed = 0;
    for c in &checks {
        match &c.outcome {
            Ok(()) => println!("PASS {}", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", c.name);
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} conformance checks failed", checks.len())));
    }
    Ok(())
}

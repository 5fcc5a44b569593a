//! Command-line entry points. Every subcommand validates its config before
//! touching the filesystem.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use socpilot::agent::profile::AgentId;
use socpilot::agent::Agent;
use socpilot::experiment::config::BackendSpec;
use socpilot::experiment::interview::{InterviewChannel, InterviewSession};
use socpilot::experiment::metrics::mean_with_ci;
use socpilot::experiment::recorder::{interview_file_name, write_csv, INTERVIEW_DIR};
use socpilot::experiment::sim::{build_gateway, load_final_state, run_simulation, Checkpoint, CHECKPOINT};
use socpilot::experiment::survey::{run_survey, scores, SurveyInstrument};
use socpilot::experiment::{report, ConfigError, ExperimentConfig, SimError, Simulation};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "socpilot", version, about = "Run and inspect simulated social experiments")]
pub struct Cli {
    /// machine-readable output
    #[arg(long, global = true)]
    pub json: bool,
    /// more log output (-v, -vv)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    /// `scripted[:RULES]`, `live` or `replay:TRANSCRIPT`
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment to its horizon.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// output directory (default: runs/NAME-seedSEED)
        #[arg(long)]
        out: Option<PathBuf>,
        /// continue from the checkpoint in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Survey the agents of a finished run.
    Survey {
        config: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// `cesd`, `thermometer` or a survey file
        #[arg(long)]
        survey: String,
        #[arg(long)]
        group: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
        /// response table (default: RUN/survey_ID.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interview one agent of a finished run; questions come from stdin,
    /// one per line, or from a file.
    Interview {
        config: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        agent: AgentId,
        #[arg(long)]
        questions: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute a run's metric report from its raw tables.
    Report {
        run: PathBuf,
        /// compare against the stored report instead of rewriting it
        #[arg(long)]
        check: bool,
    },
    /// Re-run a config against a recorded gateway transcript.
    Replay {
        config: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve runs over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// directory holding one subdirectory per run
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
    /// Check configs without running them.
    Validate {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

/// What a subcommand failed with.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Failure::Config(e) => json!({
                "kind": "config",
                "message": e.message,
                "file": e.file,
                "line": e.line,
                "column": e.column,
                "display": e.to_string(),
            }),
            Failure::Runtime(m) => json!({ "kind": "runtime", "message": m }),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Config(c),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Loads a config and applies command-line overrides. A relative rules or
/// transcript path given on the command line is taken from the working
/// directory.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(b) = &overrides.backend {
        let mut spec = BackendSpec::parse_override(b).map_err(|e| e.at(path))?;
        let cwd = std::env::current_dir().unwrap_or_default();
        let absolute = |p: &String| cwd.join(p).to_string_lossy().into_owned();
        if spec.rules.is_none() && spec.kind == cfg.backend.kind {
            spec.rules = cfg.backend.rules.as_ref().map(|r| cfg.resolve(r).to_string_lossy().into_owned());
        } else {
            spec.rules = spec.rules.as_ref().map(absolute);
        }
        spec.transcript = spec.transcript.as_ref().map(absolute);
        spec.rate_limit_rpm = cfg.backend.rate_limit_rpm;
        cfg.backend = spec;
    }
    cfg.validate().map_err(|e| e.at(path))?;
    Ok(cfg)
}

pub fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{}", cfg.name, cfg.seed))
}

/// Files of a run directory, sorted.
pub fn artifact_paths(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// A run's agents: the final state, or the checkpoint of an aborted run.
fn run_agents(run: &Path) -> Result<BTreeMap<AgentId, Agent>, Failure> {
    if run.join(socpilot::experiment::sim::FINAL_STATE).exists() {
        return load_final_state(run).map_err(runtime);
    }
    let p = run.join(CHECKPOINT);
    let text = std::fs::read_to_string(&p).map_err(|e| runtime(format!("{}: no finished or checkpointed run: {e}", run.display())))?;
    let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    Ok(cp.agents.into_iter().map(|a| (a.id(), a)).collect())
}

/// Reads questions line by line; a blank line or `quit` ends the session.
pub struct LineQuestions<R> {
    reader: R,
    echo: bool,
}

impl<R: BufRead> LineQuestions<R> {
    pub fn new(reader: R, echo: bool) -> Self {
        Self { reader, echo }
    }
}

impl<R: BufRead> InterviewChannel for LineQuestions<R> {
    fn next_question(&mut self, last_answer: Option<&str>) -> Option<String> {
        if self.echo {
            if let Some(a) = last_answer {
                println!("agent> {a}");
            }
            print!("you> ");
            let _ = std::io::stdout().flush();
        }
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => {
                let q = line.trim();
                (!q.is_empty() && q != "quit").then(|| q.to_string())
            }
        }
    }
}

fn cmd_run(config: &Path, overrides: &Overrides, out: Option<PathBuf>, resume: bool) -> Result<Value, Failure> {
    let cfg = load_config(config, overrides)?;
    let out = out.unwrap_or_else(|| default_out(&cfg));
    let mut sim = Simulation::build(cfg)?;
    if resume {
        let p = out.join(CHECKPOINT);
        let text = std::fs::read_to_string(&p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        sim.restore(cp)?;
    }
    tracing::info!(out = %out.display(), "running");
    let report = run_simulation(sim, &out)?;
    Ok(json!({
        "out": out,
        "artifacts": artifact_paths(&out),
        "report": report,
    }))
}

fn cmd_survey(config: &Path, run: &Path, spec: &str, group: Option<&str>, overrides: &Overrides, out: Option<PathBuf>) -> Result<Value, Failure> {
    let cfg = load_config(config, overrides)?;
    let topic = cfg.topic.as_ref().map(|t| t.name.clone());
    let instrument = SurveyInstrument::resolve(spec, topic.as_deref(), &cfg.base_dir).map_err(|e| Failure::Config(ConfigError::new(e.to_string())))?;
    let agents = run_agents(run)?;
    let gateway = build_gateway(&cfg)?;
    let selected: Vec<&Agent> = agents.values().filter(|a| group.is_none_or(|g| a.group == g)).collect();
    if selected.is_empty() {
        return Err(runtime(format!("no agents{}", group.map(|g| format!(" in group `{g}`")).unwrap_or_default())));
    }
    let now = chrono::Local::now().naive_local();
    let id = instrument.survey_id.clone();
    let (rows, checks) = run_survey(&instrument, &id, &selected, &gateway, now, topic.as_deref());
    let out = out.unwrap_or_else(|| run.join(format!("survey_{id}.csv")));
    write_csv(&out, &rows).map_err(runtime)?;
    let by_agent = scores(&instrument, &id, &rows);
    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for a in &selected {
        if let Some(s) = by_agent.get(&a.id()) {
            by_group.entry(a.group.as_str()).or_default().push(*s);
        }
    }
    let summary: BTreeMap<&str, Value> = by_group
        .into_iter()
        .map(|(g, s)| (g, json!({ "n": s.len(), "score": mean_with_ci(&s, 0.95).ok() })))
        .collect();
    Ok(json!({
        "out": out,
        "respondents": selected.len(),
        "scored": by_agent.len(),
        "isolation_violations": checks.iter().filter(|c| !c.holds()).count(),
        "groups": summary,
    }))
}

fn cmd_interview(config: &Path, run: &Path, agent_id: AgentId, questions: Option<PathBuf>, overrides: &Overrides, echo: bool) -> Result<Value, Failure> {
    let cfg = load_config(config, overrides)?;
    let agents = run_agents(run)?;
    let agent = agents.get(&agent_id).ok_or(SimError::UnknownAgent(agent_id))?;
    let gateway = build_gateway(&cfg)?;
    let now = chrono::Local::now().naive_local();
    let (session, check) = match questions {
        Some(p) => {
            let f = std::fs::File::open(&p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            socpilot::experiment::interview::run_interview(agent, &gateway, &mut LineQuestions::new(std::io::BufReader::new(f), false), now)
        }
        None => {
            let stdin = std::io::stdin();
            socpilot::experiment::interview::run_interview(agent, &gateway, &mut LineQuestions::new(stdin.lock(), echo), now)
        }
    };
    if echo {
        if let Some(last) = session.turns.last().filter(|t| t.speaker == socpilot::experiment::interview::Speaker::Agent) {
            println!("agent> {}", last.text);
        }
    }
    let path = persist_interview(run, "cli", &session)?;
    Ok(json!({
        "transcript": path,
        "turns": session.turns.len(),
        "isolated": check.holds(),
        "ended_by": session.ended_by,
    }))
}

/// Writes a session under the run's interview directory without replacing
/// earlier sessions.
pub fn persist_interview(run: &Path, label: &str, session: &InterviewSession) -> Result<PathBuf, Failure> {
    let dir = run.join(INTERVIEW_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let mut n = 1;
    let path = loop {
        let p = dir.join(interview_file_name(&format!("{label}-{n}"), session.agent_id));
        if !p.exists() {
            break p;
        }
        n += 1;
    };
    std::fs::write(&path, session.to_text()).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_report(run: &Path, check: bool) -> Result<Value, Failure> {
    if check {
        let diffs = report::check(run).map_err(runtime)?;
        if !diffs.is_empty() {
            return Err(runtime(format!("report differs from the raw tables in: {}", diffs.join(", "))));
        }
        return Ok(json!({ "run": run, "consistent": true }));
    }
    let r = report::build(run).map_err(runtime)?;
    report::write(run, &r).map_err(runtime)?;
    Ok(json!({ "run": run, "report": r }))
}

fn cmd_replay(config: &Path, transcript: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Value, Failure> {
    let overrides = Overrides { seed, backend: Some(format!("replay:{}", transcript.display())) };
    let cfg = load_config(config, &overrides)?;
    let out = out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}-replay", cfg.name, cfg.seed)));
    let sim = Simulation::build(cfg)?;
    let report = run_simulation(sim, &out)?;
    Ok(json!({ "out": out, "artifacts": artifact_paths(&out), "report": report }))
}

fn cmd_validate(configs: &[PathBuf]) -> Result<Value, Failure> {
    let mut ok = Vec::new();
    for c in configs {
        let cfg = ExperimentConfig::load(c)?;
        ok.push(json!({ "config": c, "name": cfg.name }));
    }
    Ok(json!({ "valid": ok }))
}

fn print_human(command: &Command, v: &Value) {
    match command {
        Command::Run { .. } | Command::Replay { .. } => {
            println!("run written to {}", v["out"].as_str().unwrap_or(""));
            for p in v["artifacts"].as_array().into_iter().flatten() {
                println!("  {}", p.as_str().unwrap_or(""));
            }
        }
        Command::Survey { .. } => {
            println!("responses written to {}", v["out"].as_str().unwrap_or(""));
            for (g, s) in v["groups"].as_object().into_iter().flatten() {
                println!("  {g}: {}", s["score"]);
            }
        }
        Command::Interview { .. } => println!("transcript written to {} ({} turns)", v["transcript"].as_str().unwrap_or(""), v["turns"]),
        Command::Report { check: true, .. } => println!("report matches the raw tables"),
        Command::Report { .. } => println!("{}", serde_json::to_string_pretty(&v["report"]).unwrap_or_default()),
        Command::Validate { .. } => {
            for c in v["valid"].as_array().into_iter().flatten() {
                println!("ok  {}", c["config"].as_str().unwrap_or(""));
            }
        }
        Command::Serve { .. } => {}
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Runs the parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Run { config, overrides, out, resume } => cmd_run(config, overrides, out.clone(), *resume),
        Command::Survey { config, run, survey, group, overrides, out } => cmd_survey(config, run, survey, group.as_deref(), overrides, out.clone()),
        Command::Interview { config, run, agent, questions, overrides } => {
            cmd_interview(config, run, *agent, questions.clone(), overrides, !cli.json && questions.is_none())
        }
        Command::Report { run, check } => cmd_report(run, *check),
        Command::Replay { config, transcript, seed, out } => cmd_replay(config, transcript, *seed, out.clone()),
        Command::Validate { configs } => cmd_validate(configs),
        Command::Serve { addr, runs } => crate::server::serve_blocking(addr, runs).map(|_| json!({})).map_err(runtime),
    };
    match result {
        Ok(v) => {
            if cli.json {
                let mut v = v;
                v["ok"] = json!(true);
                println!("{v}");
            } else {
                print_human(&cli.command, &v);
            }
            0
        }
        Err(f) => {
            if cli.json {
                println!("{}", json!({ "ok": false, "error": f.to_json() }));
            } else {
                eprintln!("{f}");
            }
            f.exit_code()
        }
    }
}

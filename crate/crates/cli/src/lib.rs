//! The `vigil` command line: run one test, run a benchmark, replay a run, or parse inputs.
//!
//! Exit codes: 0 pass, 1 error, 2 bug reported, 3 replay divergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use vigil_core::action::Driver;
use vigil_core::gateway::{
    ModelGateway, NullGateway, RecordingGateway, RemoteConfig, RemoteGateway, ReplayGateway, ScriptedGateway, Transcript,
};
use vigil_core::metrics::{run_benchmark, BenchConfig};
use vigil_core::oracle::{RunOptions, RunRecord, RunStatus, Tester, VotePolicy};
use vigil_core::requirement::{parse_requirement, to_structured, Requirement};
use vigil_core::simapp::{load_app, BugSpec, SimApp};
use vigil_dsl::{check_program, parse, parse_schemas, CheckContext, SchemaRegistry};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_BUG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vigil", version, about = "Oracle-driven end-to-end web testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one test requirement against an app.
    Run(RunArgs),
    /// Run every case of a benchmark directory and report metrics.
    Bench(BenchArgs),
    /// Re-execute a recorded run from its transcript and compare the records.
    Replay(ReplayArgs),
    /// Parse a requirement into steps, or statically check an assertion program.
    Parse(ParseArgs),
}

#[derive(Debug, Clone, Default, Args)]
struct PolicyArgs {
    /// single | majority:<m> | threshold:<m>:<x>
    #[arg(long)]
    vote: Option<String>,
    #[arg(long)]
    action_retries: Option<usize>,
    #[arg(long)]
    regen_retries: Option<usize>,
    #[arg(long)]
    continue_on_failure: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    requirement: Option<PathBuf>,
    /// Bundled app name (minishop, minidocs) or an app definition file.
    #[arg(long)]
    app: Option<String>,
    /// Bug file to inject into the app.
    #[arg(long)]
    bug: Option<PathBuf>,
    /// scripted:<path> | remote
    #[arg(long)]
    gateway: Option<String>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run_id: Option<String>,
    /// JSON file with any of the run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    dir: PathBuf,
    /// Run without injecting the case bugs.
    #[arg(long)]
    clean: bool,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Output directory of a previous `run`.
    run_dir: PathBuf,
    /// Replay against a different app than the recorded one.
    #[arg(long)]
    app: Option<String>,
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Where to write the replayed record; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParseArgs {
    #[arg(long, conflicts_with = "program")]
    requirement: Option<PathBuf>,
    /// Needed only for plain-text requirements.
    #[arg(long)]
    gateway: Option<String>,
    #[arg(long)]
    program: Option<PathBuf>,
    /// Schema declarations the program may reference.
    #[arg(long, requires = "program")]
    schemas: Option<PathBuf>,
}

/// Fully resolved settings of a single run, saved as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub requirement: PathBuf,
    pub app: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug: Option<PathBuf>,
    pub gateway: String,
    pub vote: String,
    pub action_retries: usize,
    pub regen_retries: usize,
    pub continue_on_failure: bool,
    pub out: PathBuf,
    pub seed: u64,
    pub run_id: String,
}

/// Settings as they may appear in a config file or the environment.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    requirement: Option<PathBuf>,
    app: Option<String>,
    bug: Option<PathBuf>,
    gateway: Option<String>,
    vote: Option<String>,
    action_retries: Option<usize>,
    regen_retries: Option<usize>,
    continue_on_failure: Option<bool>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    run_id: Option<String>,
}

impl PartialConfig {
    fn from_env() -> Result<PartialConfig> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let num = |k: &str| -> Result<Option<usize>> {
            var(k).map(|v| v.parse().with_context(|| format!("{k} must be a whole number"))).transpose()
        };
        Ok(PartialConfig {
            app: var("VIGIL_APP"),
            gateway: var("VIGIL_GATEWAY"),
            vote: var("VIGIL_VOTE"),
            action_retries: num("VIGIL_ACTION_RETRIES")?,
            regen_retries: num("VIGIL_REGEN_RETRIES")?,
            out: var("VIGIL_OUT").map(PathBuf::from),
            ..PartialConfig::default()
        })
    }

    fn from_file(path: &Path) -> Result<PartialConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fills unset fields from `lower`.
    fn over(self, lower: PartialConfig) -> PartialConfig {
        PartialConfig {
            requirement: self.requirement.or(lower.requirement),
            app: self.app.or(lower.app),
            bug: self.bug.or(lower.bug),
            gateway: self.gateway.or(lower.gateway),
            vote: self.vote.or(lower.vote),
            action_retries: self.action_retries.or(lower.action_retries),
            regen_retries: self.regen_retries.or(lower.regen_retries),
            continue_on_failure: self.continue_on_failure.or(lower.continue_on_failure),
            out: self.out.or(lower.out),
            seed: self.seed.or(lower.seed),
            run_id: self.run_id.or(lower.run_id),
        }
    }
}

impl RunConfig {
    fn resolve(args: &RunArgs) -> Result<RunConfig> {
        let flags = PartialConfig {
            requirement: args.requirement.clone(),
            app: args.app.clone(),
            bug: args.bug.clone(),
            gateway: args.gateway.clone(),
            vote: args.policy.vote.clone(),
            action_retries: args.policy.action_retries,
            regen_retries: args.policy.regen_retries,
            continue_on_failure: args.policy.continue_on_failure.then_some(true),
            out: args.out.clone(),
            seed: args.seed,
            run_id: args.run_id.clone(),
        };
        let file = match &args.config {
            Some(p) => PartialConfig::from_file(p)?,
            None => PartialConfig::default(),
        };
        let merged = flags.over(file).over(PartialConfig::from_env()?);
        let defaults = VotePolicy::single();
        let config = RunConfig {
            requirement: absolute(&merged.requirement.ok_or_else(|| anyhow!("--requirement is required"))?)?,
            app: app_reference(merged.app.ok_or_else(|| anyhow!("--app is required"))?)?,
            bug: merged.bug.as_deref().map(absolute).transpose()?,
            gateway: gateway_profile(merged.gateway.unwrap_or_else(|| "remote".into()))?,
            vote: merged.vote.unwrap_or_else(|| "single".into()),
            action_retries: merged.action_retries.unwrap_or(defaults.action_retries),
            regen_retries: merged.regen_retries.unwrap_or(defaults.regeneration_retries),
            continue_on_failure: merged.continue_on_failure.unwrap_or(false),
            out: merged.out.unwrap_or_else(|| PathBuf::from("vigil-out")),
            seed: merged.seed.unwrap_or(0),
            run_id: merged.run_id.unwrap_or_else(|| "run".into()),
        };
        config.policy()?;
        Ok(config)
    }

    pub fn policy(&self) -> Result<VotePolicy> {
        Ok(VotePolicy::from_str(&self.vote)?.with_retries(self.action_retries, self.regen_retries))
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            run_id: self.run_id.clone(),
            continue_on_failure: self.continue_on_failure,
            max_steps: None,
        }
    }

    fn build_app(&self, app: &str) -> Result<SimApp> {
        let mut sim = load_app(app).with_context(|| format!("loading app {app}"))?;
        if let Some(bug) = &self.bug {
            sim = sim.inject(load_bug(bug)?);
        }
        Ok(sim)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    Ok(std::env::current_dir()?.join(p))
}

/// Bundled app names stay as they are; file paths become absolute so replays work from anywhere.
fn app_reference(app: String) -> Result<String> {
    if matches!(app.as_str(), "minishop" | "minidocs") {
        return Ok(app);
    }
    Ok(absolute(Path::new(&app))?.to_string_lossy().into_owned())
}

fn gateway_profile(profile: String) -> Result<String> {
    match profile.strip_prefix("scripted:") {
        Some(path) => Ok(format!("scripted:{}", absolute(Path::new(path))?.display())),
        None => Ok(profile),
    }
}

fn load_bug(path: &Path) -> Result<BugSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading bug file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing bug file {}", path.display()))
}

/// `scripted:<path>` or `remote`.
pub fn build_gateway(profile: &str) -> Result<Arc<dyn ModelGateway>> {
    if let Some(path) = profile.strip_prefix("scripted:") {
        let g = ScriptedGateway::from_path(Path::new(path)).with_context(|| format!("loading gateway script {path}"))?;
        return Ok(Arc::new(g));
    }
    match profile {
        "remote" => Ok(Arc::new(RemoteGateway::new(RemoteConfig::from_env()?))),
        other => bail!("unknown gateway profile `{other}`; expected scripted:<path> or remote"),
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let path = dir.join(name);
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn execute(config: &RunConfig, app: &str, gateway: Arc<dyn ModelGateway>) -> Result<RunRecord> {
    let requirement = Requirement::from_path(&config.requirement)
        .with_context(|| format!("reading requirement {}", config.requirement.display()))?;
    let mut sim = config.build_app(app)?;
    sim.reset().map_err(|e| anyhow!("app reset failed: {e}"))?;
    Ok(Tester::new(gateway, config.policy()?, config.options()).run_test(&requirement, &mut sim))
}

fn status_code(status: RunStatus) -> i32 {
    match status {
        RunStatus::Passed | RunStatus::Degenerate => EXIT_PASS,
        RunStatus::Bug => EXIT_BUG,
        RunStatus::Error => EXIT_ERROR,
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    let config = RunConfig::resolve(args)?;
    let recording = Arc::new(RecordingGateway::new(build_gateway(&config.gateway)?));
    recording.begin_run(&config.run_id);
    let record = execute(&config, &config.app, recording.clone())?;
    let out = &config.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(out, "config.json", &config)?;
    write_json(out, "run_record.json", &record)?;
    write_json(out, "trace.json", &record.trace)?;
    write_json(out, "transcript.json", &recording.transcript(&config.run_id)?)?;
    if !record.bug_reports.is_empty() {
        let dir = out.join("bug_reports");
        fs::create_dir_all(&dir)?;
        for r in &record.bug_reports {
            write_json(&dir, &format!("step-{}.json", r.step_index), r)?;
        }
    }
    println!("run {}: {:?}", record.run_id, record.status);
    for r in &record.bug_reports {
        println!("  bug at step {} ({:?}): {}", r.step_index, r.phase, r.message);
    }
    if let Some(e) = &record.error {
        println!("  error: {e}");
    }
    Ok(status_code(record.status))
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let env = PartialConfig::from_env()?;
    let flags = PartialConfig {
        vote: args.policy.vote.clone(),
        action_retries: args.policy.action_retries,
        regen_retries: args.policy.regen_retries,
        out: args.out.clone(),
        ..PartialConfig::default()
    };
    let merged = flags.over(env);
    let defaults = VotePolicy::single();
    let policy = VotePolicy::from_str(merged.vote.as_deref().unwrap_or("single"))?.with_retries(
        merged.action_retries.unwrap_or(defaults.action_retries),
        merged.regen_retries.unwrap_or(defaults.regeneration_retries),
    );
    let config = BenchConfig {
        policy,
        clean: args.clean,
        continue_on_failure: args.policy.continue_on_failure,
    };
    let result = run_benchmark(&args.dir, &config)?;
    let out = merged.out.unwrap_or_else(|| PathBuf::from("vigil-out"));
    result.report.emit(&out)?;
    for run in &result.runs {
        let dir = out.join("runs").join(&run.case_id);
        fs::create_dir_all(&dir)?;
        if let Some(record) = &run.record {
            write_json(&dir, "run_record.json", record)?;
        }
        write_json(&dir, "transcript.json", &run.transcript)?;
    }
    print!("{}", result.report.table());
    Ok(EXIT_PASS)
}

/// First JSON path at which two documents differ, with both values.
pub fn first_divergence(expected: &Json, actual: &Json) -> Option<String> {
    fn go(a: &Json, b: &Json, path: &mut String) -> Option<String> {
        match (a, b) {
            (Json::Object(x), Json::Object(y)) => {
                for (k, v) in x {
                    let len = path.len();
                    path.push('/');
                    path.push_str(k);
                    let found = match y.get(k) {
                        Some(w) => go(v, w, path),
                        None => Some(format!("{path}: missing in replay")),
                    };
                    path.truncate(len);
                    if found.is_some() {
                        return found;
                    }
                }
                y.keys()
                    .find(|k| !x.contains_key(*k))
                    .map(|k| format!("{path}/{k}: only in replay"))
            }
            (Json::Array(x), Json::Array(y)) => {
                for (i, (v, w)) in x.iter().zip(y).enumerate() {
                    let len = path.len();
                    path.push_str(&format!("/{i}"));
                    let found = go(v, w, path);
                    path.truncate(len);
                    if found.is_some() {
                        return found;
                    }
                }
                (x.len() != y.len()).then(|| format!("{path}: length {} recorded, {} replayed", x.len(), y.len()))
            }
            _ if a == b => None,
            _ => Some(format!("{}: recorded {a}, replayed {b}", if path.is_empty() { "/" } else { path })),
        }
    }
    go(expected, actual, &mut String::new())
}

fn cmd_replay(args: &ReplayArgs) -> Result<i32> {
    let config: RunConfig = read_json(&args.run_dir.join("config.json"))?;
    let transcript_path = args.transcript.clone().unwrap_or_else(|| args.run_dir.join("transcript.json"));
    let transcript: Transcript = read_json(&transcript_path)?;
    let recorded: Json = read_json(&args.run_dir.join("run_record.json"))?;
    let app = args.app.clone().unwrap_or_else(|| config.app.clone());
    let replay = Arc::new(ReplayGateway::new(transcript));
    let record = execute(&config, &app, replay.clone())?;
    let replayed = serde_json::to_value(&record)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(out, "replayed_record.json", &record)?;
    }
    if let Some(diff) = first_divergence(&recorded, &replayed) {
        println!("replay diverged at {diff}");
        return Ok(EXIT_DIVERGENCE);
    }
    if replay.remaining() > 0 {
        println!("replay diverged: {} transcript entries were never requested", replay.remaining());
        return Ok(EXIT_DIVERGENCE);
    }
    println!("replay matches the recorded run");
    Ok(EXIT_PASS)
}

fn cmd_parse(args: &ParseArgs) -> Result<i32> {
    if let Some(path) = &args.program {
        let source = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let registry = SchemaRegistry::new();
        if let Some(s) = &args.schemas {
            let text = fs::read_to_string(s).with_context(|| format!("reading {}", s.display()))?;
            registry.register_all_replacing(parse_schemas(&text)?)?;
        }
        let program = parse(&source)?;
        check_program(&program, &CheckContext::standard(&registry))?;
        println!("{}: ok", path.display());
        return Ok(EXIT_PASS);
    }
    let path = args.requirement.as_ref().ok_or_else(|| anyhow!("give --requirement or --program"))?;
    let requirement = Requirement::from_path(path).with_context(|| format!("reading requirement {}", path.display()))?;
    let gateway: Arc<dyn ModelGateway> = match &args.gateway {
        Some(g) => build_gateway(g)?,
        None => Arc::new(NullGateway),
    };
    let parsed = parse_requirement(&requirement, gateway.as_ref(), "parse")?;
    print!("{}", to_structured(&parsed.steps));
    for line in &parsed.provenance {
        eprintln!("# {line}");
    }
    Ok(EXIT_PASS)
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Parse(a) => cmd_parse(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

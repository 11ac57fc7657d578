//! Benchmark cases, ground-truth scoring and aggregate metrics.
//!
//! A benchmark directory holds `cases/<id>/` folders, each with
//! `requirement.yaml` (or `requirement.txt`), `app-ref`, `ground_truth.json`,
//! an optional `bug.json` and the scripted gateway `gateway.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vigil_dsl::lexer::{tokenize, Tok};
use vigil_dsl::{evaluate, parse, AssertionProgram, EvalEnvironment, SchemaRegistry};

use crate::action::Driver;
use crate::gateway::{ModelGateway, RecordingGateway, ScriptedGateway, Transcript};
use crate::oracle::{RunOptions, RunRecord, StepOutcome, Tester, VotePolicy};
use crate::requirement::Requirement;
use crate::simapp::{load_app, BugSpec};
use crate::trace::{bindings, Session, SymbolContext};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{0}: no benchmark cases found")]
    Empty(PathBuf),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> BenchError {
    BenchError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Cases

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAssertion {
    pub step_index: usize,
    pub program: String,
}

/// `bug.json`: a bug plus the 1-based step whose resulting state it corrupts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugFile {
    pub bug_step: usize,
    #[serde(flatten)]
    pub spec: BugSpec,
}

#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub dir: PathBuf,
    pub app_ref: String,
    pub requirement: Requirement,
    pub ground_truth: Vec<GroundTruthAssertion>,
    pub bug: Option<BugFile>,
    pub gateway_script: PathBuf,
}

/// True when the program never calls `extract`, so it needs no model.
pub fn is_gateway_free(program: &AssertionProgram) -> bool {
    match tokenize(&program.source) {
        Ok(tokens) => !tokens.iter().any(|t| match &t.tok {
            Tok::Name(n) => n == "extract",
            Tok::FStr(body) => body.contains("extract"),
            _ => false,
        }),
        Err(_) => false,
    }
}

impl BenchmarkCase {
    pub fn load(dir: &Path) -> Result<BenchmarkCase, BenchError> {
        let case_id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| malformed(dir, "case directory has no name"))?
            .to_string();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))
        };
        let requirement = if dir.join("requirement.yaml").exists() {
            Requirement::structured(read("requirement.yaml")?)
        } else {
            Requirement::plain(read("requirement.txt")?)
        };
        let app_ref = read("app-ref")?.trim().to_string();
        let gt_path = dir.join("ground_truth.json");
        let ground_truth: Vec<GroundTruthAssertion> =
            serde_json::from_str(&read("ground_truth.json")?).map_err(|e| malformed(&gt_path, e.to_string()))?;
        for (i, a) in ground_truth.iter().enumerate() {
            if a.step_index != i + 1 {
                return Err(malformed(&gt_path, format!("entry {} has step_index {}", i + 1, a.step_index)));
            }
            let program = parse(&a.program).map_err(|e| malformed(&gt_path, format!("step {}: {e}", a.step_index)))?;
            if !is_gateway_free(&program) {
                return Err(malformed(&gt_path, format!("step {} calls extract", a.step_index)));
            }
        }
        let bug_path = dir.join("bug.json");
        let bug = if bug_path.exists() {
            let b: BugFile = serde_json::from_str(&read("bug.json")?).map_err(|e| malformed(&bug_path, e.to_string()))?;
            if b.bug_step == 0 || b.bug_step > ground_truth.len() {
                return Err(malformed(&bug_path, format!("bug_step {} is outside the script", b.bug_step)));
            }
            Some(b)
        } else {
            None
        };
        Ok(BenchmarkCase {
            case_id,
            dir: dir.to_path_buf(),
            app_ref,
            requirement,
            ground_truth,
            bug,
            gateway_script: dir.join("gateway.json"),
        })
    }

    /// The app reference resolved against the case directory; bundled names pass through.
    pub fn app_location(&self) -> String {
        let local = self.dir.join(&self.app_ref);
        if local.exists() {
            local.to_string_lossy().into_owned()
        } else {
            self.app_ref.clone()
        }
    }

    pub fn app_name(&self) -> String {
        Path::new(&self.app_ref)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.app_ref)
            .to_string()
    }
}

pub fn load_cases(benchmark_dir: &Path) -> Result<Vec<BenchmarkCase>, BenchError> {
    let cases_dir = benchmark_dir.join("cases");
    let entries = std::fs::read_dir(&cases_dir).map_err(|e| io_err(&cases_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(BenchError::Empty(benchmark_dir.to_path_buf()));
    }
    dirs.iter().map(|d| BenchmarkCase::load(d)).collect()
}

// ---------------------------------------------------------------------------
// Scoring

/// (TC, CT) from per-assertion outcomes; entries past `holds.len()` count as failed.
pub fn trace_scores(holds: &[bool], expected: usize) -> (u8, f64) {
    if expected == 0 {
        return (1, 1.0);
    }
    let prefix = holds.iter().take(expected).take_while(|h| **h).count();
    let tc = u8::from(prefix == expected);
    (tc, prefix as f64 / expected as f64)
}

pub fn precision(tp: usize, fp: usize) -> Option<f64> {
    (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64)
}

pub fn recall(tp: usize, fn_: usize) -> Option<f64> {
    (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn precision(&self) -> Option<f64> {
        precision(self.tp, self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        recall(self.tp, self.fn_)
    }
}

/// Step-level confusion counts from what the tester flagged.
///
/// `flagged[k]` is `Some(true)` when step k+1 produced a bug report and `None`
/// when it never ran. An unreached bug step is a miss.
pub fn step_confusion(flagged: &[Option<bool>], bug_step: Option<usize>) -> Confusion {
    let mut c = Confusion::default();
    for (i, f) in flagged.iter().enumerate() {
        let is_bug = bug_step == Some(i + 1);
        match (f, is_bug) {
            (Some(true), true) => c.tp += 1,
            (Some(true), false) => c.fp += 1,
            (Some(false), true) | (None, true) => c.fn_ += 1,
            (Some(false), false) => c.tn += 1,
            (None, false) => {}
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub app: String,
    pub tc: u8,
    pub ct: f64,
    /// Ground-truth outcome per step; `None` when the step never ran.
    pub assertions: Vec<Option<bool>>,
    pub truncated: bool,
    pub bug_step: Option<usize>,
    pub flagged_steps: Vec<usize>,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub applied_steps: usize,
    pub error: Option<String>,
}

fn outcome_for(run: &RunRecord, k: usize) -> Option<&StepOutcome> {
    run.outcomes.iter().find(|o| o.step_index == k)
}

/// Evaluates a gateway-free program on the trace prefix ending at `state_index`.
pub fn check_ground_truth(program: &AssertionProgram, trace: &Session, state_index: usize) -> bool {
    let registry = Arc::new(SchemaRegistry::new());
    let prefix = trace.prefix(state_index + 1);
    let (s, st) = bindings(prefix.history(), &SymbolContext::offline(registry.clone()));
    evaluate(program, &EvalEnvironment::new(s, st, registry)).is_pass()
}

pub fn score_trace(case: &BenchmarkCase, run: &RunRecord) -> CaseMetrics {
    let expected = case.ground_truth.len();
    let mut m = CaseMetrics {
        case_id: case.case_id.clone(),
        app: case.app_name(),
        tc: 0,
        ct: 0.0,
        assertions: Vec::with_capacity(expected),
        truncated: false,
        bug_step: case.bug.as_ref().map(|b| b.bug_step),
        flagged_steps: Vec::new(),
        confusion: Confusion::default(),
        applied_steps: run.outcomes.len(),
        error: run.error.clone(),
    };
    let trace = match run.session() {
        Ok(t) => t,
        Err(e) => {
            m.error = Some(format!("unreadable trace: {e}"));
            Session::new()
        }
    };
    let mut flagged = Vec::with_capacity(expected);
    for a in &case.ground_truth {
        match outcome_for(run, a.step_index) {
            Some(o) if o.end_state < trace.len() => {
                let program = parse(&a.program).expect("ground truth parsed at load");
                m.assertions.push(Some(check_ground_truth(&program, &trace, o.end_state)));
                flagged.push(Some(o.bug_report.is_some()));
                if o.bug_report.is_some() {
                    m.flagged_steps.push(a.step_index);
                }
            }
            _ => {
                m.truncated = true;
                m.assertions.push(None);
                flagged.push(None);
            }
        }
    }
    let holds: Vec<bool> = m.assertions.iter().map(|a| a.unwrap_or(false)).collect();
    (m.tc, m.ct) = trace_scores(&holds, expected);
    m.confusion = step_confusion(&flagged, m.bug_step);
    m
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub app: String,
    pub cases: usize,
    pub tc: Option<f64>,
    pub ct: Option<f64>,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl Aggregate {
    pub fn of<'a>(app: &str, cases: impl IntoIterator<Item = &'a CaseMetrics>) -> Aggregate {
        let mut n = 0;
        let (mut tc, mut ct) = (0.0, 0.0);
        let mut confusion = Confusion::default();
        for c in cases {
            n += 1;
            tc += f64::from(c.tc);
            ct += c.ct;
            confusion.add(c.confusion);
        }
        Aggregate {
            app: app.to_string(),
            cases: n,
            tc: (n > 0).then(|| tc / n as f64),
            ct: (n > 0).then(|| ct / n as f64),
            confusion,
            precision: confusion.precision(),
            recall: confusion.recall(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
    pub per_app: Vec<Aggregate>,
    pub total: Aggregate,
}

impl MetricsReport {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> MetricsReport {
        let mut apps: BTreeMap<&str, Vec<&CaseMetrics>> = BTreeMap::new();
        for c in &cases {
            apps.entry(c.app.as_str()).or_default().push(c);
        }
        let per_app = apps.iter().map(|(app, cs)| Aggregate::of(app, cs.iter().copied())).collect();
        let total = Aggregate::of("Total", &cases);
        MetricsReport { cases, per_app, total }
    }

    /// Canonical JSON; identical reports give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<MetricsReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
        let mut out = String::new();
        let header = ["App", "Cases", "TC", "CT", "TP", "FP", "FN", "TN", "Precision", "Recall"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
        for a in self.per_app.iter().chain(std::iter::once(&self.total)) {
            rows.push(vec![
                a.app.clone(),
                a.cases.to_string(),
                fmt(a.tc),
                fmt(a.ct),
                a.confusion.tp.to_string(),
                a.confusion.fp.to_string(),
                a.confusion.fn_.to_string(),
                a.confusion.tn.to_string(),
                fmt(a.precision),
                fmt(a.recall),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        for (n, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if n == 0 || n == rows.len() - 2 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, body) in [("report.json", self.to_json()), ("report.txt", self.table())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| io_err(&p, e))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Runner

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub policy: VotePolicy,
    /// Run without injecting bugs.
    pub clean: bool,
    pub continue_on_failure: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            policy: VotePolicy::single(),
            clean: false,
            continue_on_failure: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseRun {
    pub case_id: String,
    pub record: Option<RunRecord>,
    pub transcript: Transcript,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub report: MetricsReport,
    pub runs: Vec<CaseRun>,
}

fn failed_case(case: &BenchmarkCase, config: &BenchConfig, error: String) -> CaseMetrics {
    let expected = case.ground_truth.len();
    let bug_step = case.bug.as_ref().filter(|_| !config.clean).map(|b| b.bug_step);
    let (tc, ct) = trace_scores(&[], expected);
    CaseMetrics {
        case_id: case.case_id.clone(),
        app: case.app_name(),
        tc,
        ct,
        assertions: vec![None; expected],
        truncated: true,
        bug_step,
        flagged_steps: Vec::new(),
        confusion: step_confusion(&vec![None; expected], bug_step),
        applied_steps: 0,
        error: Some(error),
    }
}

/// Runs one case in isolation: fresh app, fresh gateway, step budget |A|.
pub fn run_case(case: &BenchmarkCase, config: &BenchConfig) -> (CaseMetrics, CaseRun) {
    let mut run = CaseRun {
        case_id: case.case_id.clone(),
        record: None,
        transcript: Transcript::default(),
    };
    let scripted = match ScriptedGateway::from_path(&case.gateway_script) {
        Ok(g) => g,
        Err(e) => return (failed_case(case, config, format!("gateway script: {e}")), run),
    };
    let mut app = match load_app(&case.app_location()) {
        Ok(a) => a,
        Err(e) => return (failed_case(case, config, format!("app: {e}")), run),
    };
    if let (Some(b), false) = (&case.bug, config.clean) {
        app = app.inject(b.spec.clone());
    }
    if let Err(e) = app.reset() {
        return (failed_case(case, config, format!("reset: {e}")), run);
    }
    let recording = Arc::new(RecordingGateway::new(Arc::new(scripted)));
    let options = RunOptions {
        run_id: case.case_id.clone(),
        continue_on_failure: config.continue_on_failure,
        max_steps: Some(case.ground_truth.len()),
    };
    let gateway: Arc<dyn ModelGateway> = recording.clone();
    let record = Tester::new(gateway, config.policy, options).run_test(&case.requirement, &mut app);
    let metrics = if config.clean {
        score_trace(&BenchmarkCase { bug: None, ..case.clone() }, &record)
    } else {
        score_trace(case, &record)
    };
    run.transcript = recording.full_transcript();
    run.record = Some(record);
    (metrics, run)
}

/// Runs every case sequentially and scores it.
pub fn run_benchmark(benchmark_dir: &Path, config: &BenchConfig) -> Result<BenchResult, BenchError> {
    let cases = load_cases(benchmark_dir)?;
    let mut metrics = Vec::with_capacity(cases.len());
    let mut runs = Vec::with_capacity(cases.len());
    for case in &cases {
        let (m, r) = run_case(case, config);
        metrics.push(m);
        runs.push(r);
    }
    Ok(BenchResult {
        report: MetricsReport::from_cases(metrics),
        runs,
    })
}

/// Drives a case against an arbitrary driver; used by replay.
pub fn run_case_with(
    case: &BenchmarkCase,
    driver: &mut dyn Driver,
    gateway: Arc<dyn ModelGateway>,
    config: &BenchConfig,
) -> RunRecord {
    let options = RunOptions {
        run_id: case.case_id.clone(),
        continue_on_failure: config.continue_on_failure,
        max_steps: Some(case.ground_truth.len()),
    };
    Tester::new(gateway, config.policy, options).run_test(&case.requirement, driver)
}

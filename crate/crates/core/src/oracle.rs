//! Oracle inference and step execution.
//!
//! Each step gets a bundle of schemas plus a precondition and a postcondition
//! program, inferred in two prompts from the step text and the trace. The step
//! then runs as: check pre, apply the action, check post.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;
use vigil_dsl::{
    check_program, evaluate, parse, parse_schemas, AssertionProgram, CheckContext, EvalEnvironment, SchemaDecl,
    SchemaRegistry, Span, Verdict, VerdictStatus, DSL_REFERENCE,
};

use crate::action::{ActionExecutor, AppliedAction, Driver, ExecutorConfig, TextGrounder};
use crate::gateway::{GatewayError, ModelGateway, Prompt, RoleTag};
use crate::requirement::{parse_requirement, Requirement, TestStep};
use crate::trace::{bindings, PageReidentifier, Session, SymbolContext};

// ---------------------------------------------------------------------------
// Bundles

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyKind {
    Causal,
    Temporal,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyNote {
    pub kind: DependencyKind,
    pub rationale: String,
}

/// Parses `causal: ...` style lines; anything else is ignored.
pub fn parse_dependency_notes(text: &str) -> Vec<DependencyNote> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    let re = LINE.get_or_init(|| Regex::new(r"(?i)^\s*(?:[-*]\s*)?(causal|temporal|data)\s*:\s*(.+?)\s*$").expect("static pattern"));
    text.lines()
        .filter_map(|l| re.captures(l))
        .map(|c| DependencyNote {
            kind: match c[1].to_lowercase().as_str() {
                "causal" => DependencyKind::Causal,
                "temporal" => DependencyKind::Temporal,
                _ => DependencyKind::Data,
            },
            rationale: c[2].to_string(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OracleBundle {
    pub precondition: AssertionProgram,
    pub postcondition: AssertionProgram,
    pub schemas: Vec<SchemaDecl>,
    pub dependency_notes: Vec<DependencyNote>,
}

/// Serializable view of a bundle: program and schema sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub schemas: String,
    pub precondition: String,
    pub postcondition: String,
    pub dependency_notes: Vec<DependencyNote>,
}

impl OracleBundle {
    pub fn schema_source(&self) -> String {
        self.schemas.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("\n")
    }

    pub fn record(&self) -> BundleRecord {
        BundleRecord {
            schemas: self.schema_source(),
            precondition: self.precondition.source.clone(),
            postcondition: self.postcondition.source.clone(),
            dependency_notes: self.dependency_notes.clone(),
        }
    }

    /// `base` plus this bundle's schemas.
    pub fn registry(&self, base: &SchemaRegistry) -> Result<Arc<SchemaRegistry>, String> {
        let reg = base.clone();
        reg.register_all_replacing(self.schemas.iter().cloned())
            .map_err(|e| format!("schema registration: {e}"))?;
        Ok(Arc::new(reg))
    }
}

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("assertion bundle rejected after regeneration: {reason}")]
    Invalid { reason: String, raw: String },
}

fn step_text(step: &TestStep) -> String {
    format!(
        "condition: {}\naction: {}\nexpectation: {}",
        step.condition, step.action, step.expectation
    )
}

pub fn dependency_prompt(step: &TestStep, session: &Session) -> Prompt {
    Prompt::new(
        RoleTag::InferDependencies,
        vec![
            "Identify what the step's condition and expectation depend on in earlier states of the trace. \
             Write one dependency per line as `causal: <rationale>`, `temporal: <rationale>` or \
             `data: <rationale>`; reply `none` if there are none."
                .to_string(),
            step_text(step),
            format!("trace:\n{}", session.trace_text()),
        ],
    )
}

pub fn assertion_prompt(
    step: &TestStep,
    session: &Session,
    dependencies: &str,
    registry: &SchemaRegistry,
    candidate: Option<(usize, usize)>,
) -> Prompt {
    let mut parts = vec![
        "Write the step's oracle. Put schema declarations in a ```schema block, the precondition program \
         in a ```pre block and the postcondition program in a ```post block. The precondition runs on the \
         current state before the action; the postcondition runs after it, when `state` is the new state \
         and `session.history` ends with it. Leave a block empty when the matching text is empty."
            .to_string(),
        step_text(step),
        format!("dependencies:\n{}", dependencies.trim()),
        format!("trace:\n{}", session.trace_text()),
    ];
    let known = registry.names();
    if !known.is_empty() {
        let decls: Vec<String> = known.iter().filter_map(|n| registry.get(n)).map(|d| d.to_string()).collect();
        parts.push(format!("declared schemas:\n{}", decls.join("\n")));
    }
    parts.push(format!("language reference:\n{DSL_REFERENCE}"));
    if let Some((k, m)) = candidate {
        parts.push(format!("candidate {k} of {m}"));
    }
    Prompt::new(RoleTag::SymbolizeAndAssert, parts)
}

#[derive(Debug, Default)]
struct Blocks {
    schema: Option<String>,
    pre: Option<String>,
    post: Option<String>,
}

fn fenced_blocks(text: &str) -> Blocks {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let re = FENCE.get_or_init(|| Regex::new(r"(?ms)^[ \t]*```[ \t]*(\w+)[ \t]*\r?\n(.*?)^[ \t]*```[ \t]*$").expect("static pattern"));
    let mut b = Blocks::default();
    for c in re.captures_iter(text) {
        let body = c[2].to_string();
        let slot = match c[1].to_lowercase().as_str() {
            "schema" | "schemas" => &mut b.schema,
            "pre" | "precondition" => &mut b.pre,
            "post" | "postcondition" => &mut b.post,
            _ => continue,
        };
        match slot {
            Some(prev) => prev.push_str(&body),
            None => *slot = Some(body),
        }
    }
    b
}

/// Parses and statically checks a stage-2 reply.
pub fn bundle_from_reply(
    reply: &str,
    step: &TestStep,
    notes: Vec<DependencyNote>,
    base: &SchemaRegistry,
) -> Result<OracleBundle, String> {
    let blocks = fenced_blocks(reply);
    let schemas = match &blocks.schema {
        Some(src) if !src.trim().is_empty() => parse_schemas(src).map_err(|e| e.to_string())?,
        _ => Vec::new(),
    };
    let program = |nl: &str, block: &Option<String>, tag: &str| -> Result<AssertionProgram, String> {
        if nl.trim().is_empty() {
            return Ok(AssertionProgram::empty());
        }
        let src = block.as_ref().ok_or_else(|| format!("reply has no ```{tag} block"))?;
        parse(src).map_err(|e| format!("{tag}: {e}"))
    };
    let bundle = OracleBundle {
        precondition: program(&step.condition, &blocks.pre, "pre")?,
        postcondition: program(&step.expectation, &blocks.post, "post")?,
        schemas,
        dependency_notes: notes,
    };
    let registry = bundle.registry(base)?;
    let ctx = CheckContext::standard(&registry);
    check_program(&bundle.precondition, &ctx).map_err(|e| format!("pre: {e}"))?;
    check_program(&bundle.postcondition, &ctx).map_err(|e| format!("post: {e}"))?;
    Ok(bundle)
}

/// Candidates for one step plus the number of regeneration re-prompts used.
pub struct Inference {
    pub bundles: Vec<OracleBundle>,
    pub reprompts: usize,
}

/// Runs both inference stages, producing `m` candidate bundles.
///
/// `feedback` is appended to every stage-2 prompt.
pub fn infer_candidates(
    step: &TestStep,
    session: &Session,
    gateway: &dyn ModelGateway,
    registry: &SchemaRegistry,
    run_id: &str,
    m: usize,
    feedback: Option<&str>,
) -> Result<Inference, OracleError> {
    let tag = |p: Prompt| p.tagged(run_id, Some(step.index));
    let deps = gateway.complete(&tag(dependency_prompt(step, session)))?;
    let notes = parse_dependency_notes(&deps);
    let mut bundles = Vec::with_capacity(m);
    let mut reprompts = 0;
    for k in 1..=m.max(1) {
        let mut prompt = assertion_prompt(step, session, &deps, registry, (m > 1).then_some((k, m)));
        if let Some(f) = feedback {
            prompt.parts.push(f.to_string());
        }
        let prompt = tag(prompt);
        let reply = gateway.complete(&prompt)?;
        let bundle = match bundle_from_reply(&reply, step, notes.clone(), registry) {
            Ok(b) => b,
            Err(problem) => {
                reprompts += 1;
                let mut retry = prompt.clone();
                retry.parts.push(format!(
                    "The previous reply was rejected by the static check: {problem}\nPrevious reply:\n{reply}\nReply again with corrected blocks."
                ));
                let second = gateway.complete(&retry)?;
                bundle_from_reply(&second, step, notes.clone(), registry)
                    .map_err(|reason| OracleError::Invalid { reason, raw: second })?
            }
        };
        bundles.push(bundle);
    }
    Ok(Inference { bundles, reprompts })
}

/// Single-candidate inference.
pub fn infer_oracle(
    step: &TestStep,
    session: &Session,
    gateway: &dyn ModelGateway,
    registry: &SchemaRegistry,
    run_id: &str,
) -> Result<OracleBundle, OracleError> {
    let mut inf = infer_candidates(step, session, gateway, registry, run_id, 1, None)?;
    Ok(inf.bundles.remove(0))
}

// ---------------------------------------------------------------------------
// Voting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    Single,
    Majority,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotePolicy {
    pub mode: VoteMode,
    pub candidates_m: usize,
    pub threshold: Option<f64>,
    pub regeneration_retries: usize,
    pub action_retries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid vote policy: {0}")]
pub struct PolicyError(pub String);

impl Default for VotePolicy {
    fn default() -> Self {
        VotePolicy::single()
    }
}

impl VotePolicy {
    pub fn single() -> Self {
        VotePolicy {
            mode: VoteMode::Single,
            candidates_m: 1,
            threshold: None,
            regeneration_retries: 1,
            action_retries: 1,
        }
    }

    pub fn majority(m: usize) -> Result<Self, PolicyError> {
        let p = VotePolicy {
            mode: VoteMode::Majority,
            candidates_m: m,
            ..VotePolicy::single()
        };
        p.validate().map(|_| p)
    }

    pub fn threshold(m: usize, threshold: f64) -> Result<Self, PolicyError> {
        let p = VotePolicy {
            mode: VoteMode::Threshold,
            candidates_m: m,
            threshold: Some(threshold),
            ..VotePolicy::single()
        };
        p.validate().map(|_| p)
    }

    pub fn with_retries(mut self, action_retries: usize, regeneration_retries: usize) -> Self {
        self.action_retries = action_retries;
        self.regeneration_retries = regeneration_retries;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.mode {
            VoteMode::Single if self.candidates_m != 1 => Err(PolicyError("single voting uses exactly one candidate".into())),
            VoteMode::Majority | VoteMode::Threshold if self.candidates_m < 2 => {
                Err(PolicyError("majority and threshold voting need at least 2 candidates".into()))
            }
            VoteMode::Threshold => match self.threshold {
                Some(x) if x > 0.0 && x < 1.0 => Ok(()),
                _ => Err(PolicyError("threshold must lie strictly between 0 and 1".into())),
            },
            _ => Ok(()),
        }
    }

    /// Decision for `passes` passing candidates out of `candidates_m`.
    pub fn decide(&self, passes: usize) -> bool {
        let m = self.candidates_m;
        match self.mode {
            VoteMode::Single => passes >= 1,
            VoteMode::Majority => 2 * passes > m,
            VoteMode::Threshold => (passes as f64) / (m as f64) > self.threshold.unwrap_or(0.5),
        }
    }
}

impl FromStr for VotePolicy {
    type Err = PolicyError;

    /// `single`, `majority:<m>` or `threshold:<m>:<x>`.
    fn from_str(s: &str) -> Result<Self, PolicyError> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |t: &str| t.parse::<usize>().map_err(|_| PolicyError(format!("`{t}` is not a candidate count")));
        match parts.as_slice() {
            ["single"] => Ok(VotePolicy::single()),
            ["majority", m] => VotePolicy::majority(int(m)?),
            ["threshold", m, x] => {
                let x = x.parse::<f64>().map_err(|_| PolicyError(format!("`{x}` is not a fraction")))?;
                VotePolicy::threshold(int(m)?, x)
            }
            _ => Err(PolicyError(format!("unrecognized vote policy `{s}`"))),
        }
    }
}

impl fmt::Display for VotePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            VoteMode::Single => f.write_str("single"),
            VoteMode::Majority => write!(f, "majority:{}", self.candidates_m),
            VoteMode::Threshold => write!(f, "threshold:{}:{}", self.candidates_m, self.threshold.unwrap_or(0.5)),
        }
    }
}

/// Resolves candidate verdicts; errors count as failures.
pub fn resolve_vote(verdicts: &[Verdict], policy: &VotePolicy) -> bool {
    policy.decide(verdicts.iter().filter(|v| v.is_pass()).count())
}

// ---------------------------------------------------------------------------
// Step execution

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Passed,
    PreconditionFailed,
    ActionFailed,
    PostconditionFailed,
    OracleError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub step_index: usize,
    pub phase: Phase,
    pub failed_program_source: String,
    pub schema_source: String,
    pub message: String,
    pub failing_span: Option<Span>,
    /// Trace index of `state` when the program failed.
    pub state_index: usize,
    pub implicated_state_indices: BTreeSet<usize>,
    pub requirement_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step_index: usize,
    pub status: StepStatus,
    pub attempts_used: usize,
    /// Precondition-driven re-inferences.
    pub regenerations: usize,
    /// Static-check repair prompts.
    pub reprompts: usize,
    pub bundles: Vec<BundleRecord>,
    pub pre_verdicts: Vec<Verdict>,
    pub post_verdicts: Vec<Verdict>,
    pub actions: Vec<AppliedAction>,
    /// Trace index of the state the step started from.
    pub start_state: usize,
    /// Trace index of the step's final state.
    pub end_state: usize,
    pub error: Option<String>,
    pub bug_report: Option<BugReport>,
}

/// Everything a step needs besides the trace and driver.
pub struct StepContext<'a> {
    pub gateway: Arc<dyn ModelGateway>,
    pub registry: &'a SchemaRegistry,
    pub executor: &'a ActionExecutor,
    pub reidentifier: &'a PageReidentifier,
    pub policy: &'a VotePolicy,
    pub run_id: &'a str,
}

struct Candidate {
    bundle: OracleBundle,
    registry: Arc<SchemaRegistry>,
    symbols: SymbolContext,
}

impl StepContext<'_> {
    fn candidates(&self, step: &TestStep, bundles: Vec<OracleBundle>) -> Result<Vec<Candidate>, String> {
        bundles
            .into_iter()
            .map(|bundle| {
                let registry = bundle.registry(self.registry)?;
                let symbols = SymbolContext::new(self.gateway.clone(), registry.clone()).for_step(self.run_id, Some(step.index));
                Ok(Candidate {
                    bundle,
                    registry,
                    symbols,
                })
            })
            .collect()
    }
}

fn eval_on(program: &AssertionProgram, c: &Candidate, session: &Session) -> Verdict {
    let (s, st) = bindings(session.history(), &c.symbols);
    evaluate(program, &EvalEnvironment::new(s, st, c.registry.clone()))
}

fn excerpt(step: &TestStep) -> String {
    step_text(step).replace('\n', "; ")
}

fn bug_report(step: &TestStep, phase: Phase, c: &Candidate, v: &Verdict, session: &Session, start: usize) -> BugReport {
    let state_index = session.len().saturating_sub(1);
    let program = match phase {
        Phase::Pre => &c.bundle.precondition,
        Phase::Post => &c.bundle.postcondition,
    };
    BugReport {
        step_index: step.index,
        phase,
        failed_program_source: program.source.clone(),
        schema_source: c.bundle.schema_source(),
        message: v.message.clone(),
        failing_span: v.failing_span,
        state_index,
        implicated_state_indices: (start..=state_index).collect(),
        requirement_excerpt: excerpt(step),
    }
}

fn first_failing<'a>(cands: &'a [Candidate], verdicts: &'a [Verdict]) -> (&'a Candidate, &'a Verdict) {
    let i = verdicts.iter().position(|v| !v.is_pass()).unwrap_or(0);
    (&cands[i], &verdicts[i])
}

/// Runs one step: pre check (with regeneration), action (with retries), post check.
pub fn execute_step(
    step: &TestStep,
    bundles: Vec<OracleBundle>,
    session: &mut Session,
    driver: &mut dyn Driver,
    ctx: &StepContext,
) -> StepOutcome {
    let start = session.len().saturating_sub(1);
    let mut out = StepOutcome {
        step_index: step.index,
        status: StepStatus::OracleError,
        attempts_used: 0,
        regenerations: 0,
        reprompts: 0,
        bundles: bundles.iter().map(|b| b.record()).collect(),
        pre_verdicts: Vec::new(),
        post_verdicts: Vec::new(),
        actions: Vec::new(),
        start_state: start,
        end_state: start,
        error: None,
        bug_report: None,
    };
    let mut cands = match ctx.candidates(step, bundles) {
        Ok(c) => c,
        Err(e) => {
            out.error = Some(e);
            return out;
        }
    };

    loop {
        out.pre_verdicts = cands.iter().map(|c| eval_on(&c.bundle.precondition, c, session)).collect();
        if resolve_vote(&out.pre_verdicts, ctx.policy) {
            break;
        }
        if out.regenerations >= ctx.policy.regeneration_retries {
            let (c, v) = first_failing(&cands, &out.pre_verdicts);
            out.status = StepStatus::PreconditionFailed;
            out.bug_report = Some(bug_report(step, Phase::Pre, c, v, session, start));
            return out;
        }
        out.regenerations += 1;
        let feedback = format!(
            "The previous precondition did not hold on the current state: {}",
            first_failing(&cands, &out.pre_verdicts).1
        );
        let regenerated = infer_candidates(
            step,
            session,
            ctx.gateway.as_ref(),
            ctx.registry,
            ctx.run_id,
            ctx.policy.candidates_m,
            Some(&feedback),
        )
        .map_err(|e| e.to_string())
        .and_then(|inf| {
            out.reprompts += inf.reprompts;
            ctx.candidates(step, inf.bundles)
        });
        match regenerated {
            Ok(c) => {
                out.bundles = c.iter().map(|c| c.bundle.record()).collect();
                cands = c;
            }
            Err(e) => {
                out.error = Some(e);
                return out;
            }
        }
    }

    let tag = (ctx.run_id, Some(step.index));
    loop {
        out.attempts_used += 1;
        let result = ctx.executor.execute(&step.action, driver, session, ctx.reidentifier, tag);
        out.end_state = session.len().saturating_sub(1);
        match result {
            Ok(applied) => {
                out.actions.extend(applied);
                break;
            }
            Err(e) if out.attempts_used > ctx.policy.action_retries => {
                out.status = StepStatus::ActionFailed;
                out.error = Some(e.to_string());
                return out;
            }
            Err(_) => {}
        }
    }

    // The earliest assertion failure is the evidence; later retries only confirm it.
    let mut evidence: Option<(bool, BugReport)> = None;
    loop {
        out.post_verdicts = cands.iter().map(|c| eval_on(&c.bundle.postcondition, c, session)).collect();
        if resolve_vote(&out.post_verdicts, ctx.policy) {
            out.status = StepStatus::Passed;
            return out;
        }
        let (c, v) = first_failing(&cands, &out.post_verdicts);
        let is_fail = v.status == VerdictStatus::Fail;
        if evidence.as_ref().map_or(true, |(held, _)| !held && is_fail) {
            evidence = Some((is_fail, bug_report(step, Phase::Post, c, v, session, start)));
        }
        let report = evidence.as_ref().map(|(_, r)| r.clone()).expect("evidence recorded");
        if out.attempts_used > ctx.policy.action_retries {
            out.status = StepStatus::PostconditionFailed;
            out.bug_report = Some(report);
            return out;
        }
        out.attempts_used += 1;
        let result = ctx.executor.execute(&step.action, driver, session, ctx.reidentifier, tag);
        out.end_state = session.len().saturating_sub(1);
        match result {
            Ok(applied) => out.actions.extend(applied),
            Err(e) => {
                out.status = StepStatus::PostconditionFailed;
                out.error = Some(format!("action retry failed: {e}"));
                out.bug_report = Some(report);
                return out;
            }
        }
    }
}

/// Re-evaluates a bug report's program against the trace as it was when it failed.
pub fn replay_bug_report(
    report: &BugReport,
    trace: &Session,
    gateway: Arc<dyn ModelGateway>,
    base: &SchemaRegistry,
    run_id: &str,
) -> Result<Verdict, String> {
    let schemas = if report.schema_source.trim().is_empty() {
        Vec::new()
    } else {
        parse_schemas(&report.schema_source).map_err(|e| e.to_string())?
    };
    let registry = base.clone();
    registry.register_all_replacing(schemas).map_err(|e| e.to_string())?;
    let registry = Arc::new(registry);
    let program = parse(&report.failed_program_source).map_err(|e| e.to_string())?;
    let prefix = trace.prefix(report.state_index + 1);
    let symbols = SymbolContext::new(gateway, registry.clone()).for_step(run_id, Some(report.step_index));
    let (s, st) = bindings(prefix.history(), &symbols);
    Ok(evaluate(&program, &EvalEnvironment::new(s, st, registry)))
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Passed,
    Bug,
    Error,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub policy: VotePolicy,
    pub requirement: Requirement,
    pub steps: Vec<TestStep>,
    pub provenance: Vec<String>,
    pub outcomes: Vec<StepOutcome>,
    pub bug_reports: Vec<BugReport>,
    pub error: Option<String>,
    pub trace: Json,
}

impl RunRecord {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    pub fn session(&self) -> Result<Session, crate::trace::TraceError> {
        Session::from_json(&self.trace)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub run_id: String,
    pub continue_on_failure: bool,
    /// Steps beyond this many are not executed.
    pub max_steps: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            run_id: "run".into(),
            continue_on_failure: false,
            max_steps: None,
        }
    }
}

/// The testing agent: parses a requirement and drives it step by step.
pub struct Tester {
    pub gateway: Arc<dyn ModelGateway>,
    pub registry: Arc<SchemaRegistry>,
    pub executor: ActionExecutor,
    pub reidentifier: PageReidentifier,
    pub policy: VotePolicy,
    pub options: RunOptions,
}

impl Tester {
    /// Text grounding, deterministic selection and gateway-backed reidentification.
    pub fn new(gateway: Arc<dyn ModelGateway>, policy: VotePolicy, options: RunOptions) -> Self {
        Tester {
            executor: ActionExecutor::new(Arc::new(TextGrounder), gateway.clone(), ExecutorConfig::default()),
            reidentifier: PageReidentifier::new(gateway.clone()).with_run_id(&options.run_id),
            registry: Arc::new(SchemaRegistry::new()),
            gateway,
            policy,
            options,
        }
    }

    pub fn run_test(&self, requirement: &Requirement, driver: &mut dyn Driver) -> RunRecord {
        let run_id = self.options.run_id.as_str();
        let mut session = Session::new();
        let mut record = RunRecord {
            run_id: run_id.to_string(),
            status: RunStatus::Error,
            policy: self.policy,
            requirement: requirement.clone(),
            steps: Vec::new(),
            provenance: Vec::new(),
            outcomes: Vec::new(),
            bug_reports: Vec::new(),
            error: None,
            trace: session.to_json(),
        };
        if let Err(e) = self.policy.validate() {
            record.error = Some(e.to_string());
            return record;
        }
        let parsed = match parse_requirement(requirement, self.gateway.as_ref(), run_id) {
            Ok(p) => p,
            Err(e) => {
                record.error = Some(e.to_string());
                return record;
            }
        };
        record.steps = parsed.steps;
        record.provenance = parsed.provenance;
        if record.steps.is_empty() {
            record.status = RunStatus::Degenerate;
            return record;
        }
        let seeded = driver
            .observe()
            .map_err(|e| e.to_string())
            .and_then(|page| session.append_state(&page, &self.reidentifier).map_err(|e| e.to_string()));
        if let Err(e) = seeded {
            record.error = Some(format!("initial state: {e}"));
            return record;
        }
        self.executor.reset_focus();
        let budget = self.options.max_steps.unwrap_or(usize::MAX);
        if record.steps.len() > budget {
            record
                .provenance
                .push(format!("step budget {budget} reached; {} steps not run", record.steps.len() - budget));
        }
        let ctx = StepContext {
            gateway: self.gateway.clone(),
            registry: &self.registry,
            executor: &self.executor,
            reidentifier: &self.reidentifier,
            policy: &self.policy,
            run_id,
        };
        for step in record.steps.iter().take(budget) {
            let outcome = match infer_candidates(
                step,
                &session,
                self.gateway.as_ref(),
                &self.registry,
                run_id,
                self.policy.candidates_m,
                None,
            ) {
                Ok(inf) => {
                    let mut o = execute_step(step, inf.bundles, &mut session, driver, &ctx);
                    o.reprompts += inf.reprompts;
                    o
                }
                Err(e) => oracle_error_outcome(step, &session, e.to_string()),
            };
            let passed = outcome.status == StepStatus::Passed;
            if let Some(b) = &outcome.bug_report {
                record.bug_reports.push(b.clone());
            }
            record.outcomes.push(outcome);
            if !passed && !self.options.continue_on_failure {
                break;
            }
        }
        record.status = if !record.bug_reports.is_empty() {
            RunStatus::Bug
        } else if record.outcomes.iter().all(|o| o.status == StepStatus::Passed) {
            RunStatus::Passed
        } else {
            RunStatus::Error
        };
        record.trace = session.to_json();
        record
    }
}

fn oracle_error_outcome(step: &TestStep, session: &Session, error: String) -> StepOutcome {
    let here = session.len().saturating_sub(1);
    StepOutcome {
        step_index: step.index,
        status: StepStatus::OracleError,
        attempts_used: 0,
        regenerations: 0,
        reprompts: 0,
        bundles: Vec::new(),
        pre_verdicts: Vec::new(),
        post_verdicts: Vec::new(),
        actions: Vec::new(),
        start_state: here,
        end_state: here,
        error: Some(error),
        bug_report: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vigil_dsl::Span;

    fn verdicts(passes: usize, m: usize) -> Vec<Verdict> {
        (0..m)
            .map(|i| if i < passes { Verdict::pass() } else { Verdict::fail("x", Span::default()) })
            .collect()
    }

    #[test]
    fn vote_examples() {
        let maj3 = VotePolicy::majority(3).unwrap();
        assert!(resolve_vote(&verdicts(2, 3), &maj3));
        let maj4 = VotePolicy::majority(4).unwrap();
        assert!(!resolve_vote(&verdicts(2, 4), &maj4));
        assert!(!resolve_vote(&verdicts(2, 4), &VotePolicy::threshold(4, 0.5).unwrap()));
        assert!(resolve_vote(&verdicts(2, 4), &VotePolicy::threshold(4, 0.49).unwrap()));
        assert!(resolve_vote(&verdicts(1, 1), &VotePolicy::single()));
        assert!(!resolve_vote(&verdicts(0, 1), &VotePolicy::single()));
    }

    #[test]
    fn error_verdicts_count_as_fail() {
        let err = Verdict::error(&vigil_dsl::DslError::runtime("boom"));
        let v = vec![Verdict::pass(), err.clone(), err];
        assert!(!resolve_vote(&v, &VotePolicy::majority(3).unwrap()));
    }

    #[test]
    fn policy_parsing_and_validation() {
        assert_eq!("single".parse::<VotePolicy>().unwrap(), VotePolicy::single());
        let p: VotePolicy = "majority:5".parse().unwrap();
        assert_eq!((p.mode, p.candidates_m), (VoteMode::Majority, 5));
        let p: VotePolicy = "threshold:4:0.75".parse().unwrap();
        assert_eq!(p.threshold, Some(0.75));
        assert_eq!(p.to_string(), "threshold:4:0.75");
        for bad in ["majority:1", "threshold:3:1.0", "threshold:3:0", "single:2", "vote", "majority:x"] {
            assert!(bad.parse::<VotePolicy>().is_err(), "{bad}");
        }
        let defaults = VotePolicy::default();
        assert_eq!((defaults.action_retries, defaults.regeneration_retries), (1, 1));
    }

    #[test]
    fn fenced_blocks_are_collected() {
        let reply = "Here you go.\n```schema\nschema A { x: integer }\n```\n```pre\nassert True\n```\ntext\n```post\nassert 1 == 1\n```\n";
        let b = fenced_blocks(reply);
        assert_eq!(b.schema.as_deref(), Some("schema A { x: integer }\n"));
        assert_eq!(b.pre.as_deref(), Some("assert True\n"));
        assert_eq!(b.post.as_deref(), Some("assert 1 == 1\n"));
        assert!(fenced_blocks("```python\nx\n```").post.is_none());
    }

    #[test]
    fn dependency_lines() {
        let notes = parse_dependency_notes("- causal: typing fills the box\nnoise\nTemporal: cart revisited\ndata: price carried over");
        let kinds: Vec<DependencyKind> = notes.iter().map(|n| n.kind).collect();
        assert_eq!(kinds, [DependencyKind::Causal, DependencyKind::Temporal, DependencyKind::Data]);
        assert_eq!(notes[1].rationale, "cart revisited");
        assert!(parse_dependency_notes("none").is_empty());
    }
}

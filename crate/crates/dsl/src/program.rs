//! Program construction, free-name analysis and evaluation entry points.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::ast::*;
use crate::error::DslError;
use crate::interp::{Interp, Stop};
use crate::parser::{parse_expression, parse_program, parse_template};
use crate::schema::SchemaRegistry;
use crate::value::Value;
use crate::verdict::Verdict;

pub const DEFAULT_STEP_BUDGET: u64 = 100_000;

/// A parsed assertion program with its statically known dependencies.
#[derive(Debug, Clone, PartialEq)]
pub struct AssertionProgram {
    pub source: String,
    pub ast: Program,
    /// Every identifier read somewhere without a binding inside the program.
    pub referenced_names: BTreeSet<String>,
    /// Names passed as the schema argument of `extract`.
    pub referenced_schemas: BTreeSet<String>,
}

pub fn parse(source: &str) -> Result<AssertionProgram, DslError> {
    AssertionProgram::parse(source)
}

impl AssertionProgram {
    pub fn parse(source: &str) -> Result<Self, DslError> {
        let ast = parse_program(source)?;
        let (referenced_names, referenced_schemas) = analyze(&ast);
        Ok(AssertionProgram {
            source: source.to_string(),
            ast,
            referenced_names,
            referenced_schemas,
        })
    }

    /// The program with no statements; it always passes.
    pub fn empty() -> Self {
        AssertionProgram::parse("").expect("empty program parses")
    }

    pub fn is_empty(&self) -> bool {
        self.ast.body.is_empty()
    }

    pub fn canonical(&self) -> String {
        self.ast.to_string()
    }
}

/// Bindings and limits for one evaluation.
#[derive(Debug, Clone)]
pub struct EvalEnvironment {
    pub bindings: BTreeMap<String, Value>,
    pub schema_registry: Arc<SchemaRegistry>,
    pub step_budget: u64,
}

impl EvalEnvironment {
    pub fn new(session: Value, state: Value, schema_registry: Arc<SchemaRegistry>) -> Self {
        let mut bindings = BTreeMap::new();
        bindings.insert("session".to_string(), session);
        bindings.insert("state".to_string(), state);
        EvalEnvironment {
            bindings,
            schema_registry,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    pub fn bind(&mut self, name: impl Into<String>, value: Value) -> &mut Self {
        self.bindings.insert(name.into(), value);
        self
    }

    pub fn with_budget(mut self, step_budget: u64) -> Self {
        self.step_budget = step_budget.max(1);
        self
    }

    pub fn function_whitelist(&self) -> &'static [&'static str] {
        &crate::builtins::FUNCTION_WHITELIST
    }
}

/// Result of an evaluation plus the number of interpreter steps it used.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub verdict: Verdict,
    pub steps: u64,
}

pub fn evaluate(program: &AssertionProgram, env: &EvalEnvironment) -> Verdict {
    evaluate_counted(program, env).verdict
}

pub fn evaluate_counted(program: &AssertionProgram, env: &EvalEnvironment) -> Evaluation {
    let globals: HashMap<String, Value> = env.bindings.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut interp = Interp::new(globals, &env.schema_registry, &program.source, env.step_budget);
    let verdict = match interp.run(&program.ast) {
        Ok(()) => Verdict::pass(),
        Err(Stop::Fail { message, span }) => Verdict::fail(message, span),
        Err(Stop::Error(e)) => Verdict::error(&e),
    };
    Evaluation {
        verdict,
        steps: interp.steps(),
    }
}

/// Parses and evaluates in one go; parse failures become error verdicts.
pub fn evaluate_source(source: &str, env: &EvalEnvironment) -> Verdict {
    match AssertionProgram::parse(source) {
        Ok(p) => evaluate(&p, env),
        Err(e) => Verdict::error(&e),
    }
}

/// Evaluates a single expression against the environment's bindings.
pub fn evaluate_expression(source: &str, env: &EvalEnvironment) -> Result<Value, DslError> {
    let expr = parse_expression(source)?;
    eval_detached(&expr, source, env)
}

/// Renders `template` as if it were the body of an f-string.
pub fn render_template(template: &str, env: &EvalEnvironment) -> Result<String, DslError> {
    let expr = parse_template(template)?;
    Ok(eval_detached(&expr, template, env)?.to_str())
}

fn eval_detached(expr: &Expr, source: &str, env: &EvalEnvironment) -> Result<Value, DslError> {
    let globals: HashMap<String, Value> = env.bindings.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut interp = Interp::new(globals, &env.schema_registry, source, env.step_budget);
    interp.eval(expr)
}

// ---------------------------------------------------------------------------
// Free-name analysis

struct Analyzer {
    assigned: BTreeSet<String>,
    used: BTreeSet<String>,
    schemas: BTreeSet<String>,
}

fn analyze(program: &Program) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut a = Analyzer {
        assigned: BTreeSet::new(),
        used: BTreeSet::new(),
        schemas: BTreeSet::new(),
    };
    collect_assigned(&program.body, &mut a.assigned);
    for s in &program.body {
        a.stmt(s);
    }
    let assigned = a.assigned.clone();
    let names = a.used.into_iter().filter(|n| !assigned.contains(n)).collect();
    let schemas = a.schemas.into_iter().filter(|n| !assigned.contains(n)).collect();
    (names, schemas)
}

fn collect_assigned(stmts: &[Stmt], out: &mut BTreeSet<String>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { target, .. } => {
                let mut names = Vec::new();
                target.names(&mut names);
                out.extend(names);
            }
            StmtKind::AugAssign { target, .. } => {
                out.insert(target.clone());
            }
            StmtKind::For { target, body, .. } => {
                let mut names = Vec::new();
                target.names(&mut names);
                out.extend(names);
                collect_assigned(body, out);
            }
            StmtKind::If { branches, orelse } => {
                for (_, b) in branches {
                    collect_assigned(b, out);
                }
                collect_assigned(orelse, out);
            }
            StmtKind::While { body, .. } => collect_assigned(body, out),
            _ => {}
        }
    }
}

impl Analyzer {
    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Assert { test, msg } => {
                self.expr(test, &[]);
                if let Some(m) = msg {
                    self.expr(m, &[]);
                }
            }
            StmtKind::Assign { value, .. } => self.expr(value, &[]),
            StmtKind::AugAssign { target, value, .. } => {
                self.used.insert(target.clone());
                self.expr(value, &[]);
            }
            StmtKind::Expr(e) => self.expr(e, &[]),
            StmtKind::If { branches, orelse } => {
                for (t, b) in branches {
                    self.expr(t, &[]);
                    b.iter().for_each(|s| self.stmt(s));
                }
                orelse.iter().for_each(|s| self.stmt(s));
            }
            StmtKind::For { iter, body, .. } => {
                self.expr(iter, &[]);
                body.iter().for_each(|s| self.stmt(s));
            }
            StmtKind::While { test, body } => {
                self.expr(test, &[]);
                body.iter().for_each(|s| self.stmt(s));
            }
            StmtKind::Pass | StmtKind::Break | StmtKind::Continue => {}
        }
    }

    /// `local` holds names bound by enclosing comprehensions and lambdas.
    fn expr(&mut self, e: &Expr, local: &[String]) {
        match &e.kind {
            ExprKind::Name(n) => {
                if !local.contains(n) {
                    self.used.insert(n.clone());
                }
            }
            ExprKind::Lambda { params, body } => {
                let mut inner = local.to_vec();
                inner.extend(params.iter().cloned());
                self.expr(body, &inner);
            }
            ExprKind::Comp { elt, generators, .. } => {
                let inner = self.generators(generators, local);
                self.expr(elt, &inner);
            }
            ExprKind::DictComp { key, value, generators } => {
                let inner = self.generators(generators, local);
                self.expr(key, &inner);
                self.expr(value, &inner);
            }
            ExprKind::Call { func, args, kwargs } => {
                if let ExprKind::Attr(_, m) = &func.kind {
                    if m == "extract" {
                        let schema_arg = kwargs
                            .iter()
                            .find(|(k, _)| k == "schema")
                            .map(|(_, v)| v)
                            .or_else(|| args.get(1))
                            .or_else(|| if args.len() == 1 { args.first() } else { None });
                        if let Some(Expr { kind: ExprKind::Name(n), .. }) = schema_arg {
                            if !local.contains(n) {
                                self.schemas.insert(n.clone());
                            }
                        }
                    }
                }
                self.expr(func, local);
                args.iter().for_each(|a| self.expr(a, local));
                kwargs.iter().for_each(|(_, v)| self.expr(v, local));
            }
            _ => self.children(e, local),
        }
    }

    fn generators(&mut self, gens: &[Generator], local: &[String]) -> Vec<String> {
        let mut inner = local.to_vec();
        for g in gens {
            // the iterable is evaluated before this generator's target is bound
            self.expr(&g.iter, &inner);
            g.target.names(&mut inner);
            for c in &g.ifs {
                self.expr(c, &inner);
            }
        }
        inner
    }

    fn children(&mut self, e: &Expr, local: &[String]) {
        match &e.kind {
            ExprKind::Lit(_) | ExprKind::Name(_) => {}
            ExprKind::FString(parts) => {
                for p in parts {
                    if let FPart::Expr { expr, .. } = p {
                        self.expr(expr, local);
                    }
                }
            }
            ExprKind::List(items) | ExprKind::Tuple(items) | ExprKind::Set(items) => {
                items.iter().for_each(|i| self.expr(i, local))
            }
            ExprKind::Dict(pairs) => pairs.iter().for_each(|(k, v)| {
                self.expr(k, local);
                self.expr(v, local);
            }),
            ExprKind::Attr(v, _) | ExprKind::Unary(_, v) => self.expr(v, local),
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) | ExprKind::And(a, b) | ExprKind::Or(a, b) => {
                self.expr(a, local);
                self.expr(b, local);
            }
            ExprKind::Slice { value, lower, upper, step } => {
                self.expr(value, local);
                for b in [lower, upper, step].into_iter().flatten() {
                    self.expr(b, local);
                }
            }
            ExprKind::Compare { left, ops } => {
                self.expr(left, local);
                ops.iter().for_each(|(_, r)| self.expr(r, local));
            }
            ExprKind::IfExp { test, body, orelse } => {
                self.expr(test, local);
                self.expr(body, local);
                self.expr(orelse, local);
            }
            // binding forms are handled in `expr`
            ExprKind::Call { .. } | ExprKind::Lambda { .. } | ExprKind::Comp { .. } | ExprKind::DictComp { .. } => {}
        }
    }
}

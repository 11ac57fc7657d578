//! Tree-walking evaluator with a step budget.

use std::collections::HashMap;
use std::rc::Rc;

use chrono::TimeDelta;
use regex::Regex;

use crate::ast::*;
use crate::error::{DslError, DslErrorKind, Span};
use crate::schema::SchemaRegistry;
use crate::value::{contains, dict_get, Builtin, LambdaValue, Module, Value};

/// Names that would reach outside the sandbox in the host language. Using
/// any of them is a `forbidden_call`, not an `unknown_name`.
pub const FORBIDDEN_NAMES: [&str; 31] = [
    "eval",
    "exec",
    "open",
    "compile",
    "getattr",
    "setattr",
    "delattr",
    "hasattr",
    "globals",
    "locals",
    "vars",
    "dir",
    "input",
    "print",
    "breakpoint",
    "exit",
    "quit",
    "help",
    "type",
    "object",
    "super",
    "id",
    "memoryview",
    "classmethod",
    "staticmethod",
    "property",
    "bytearray",
    "issubclass",
    "callable",
    "__import__",
    "__builtins__",
];

pub fn is_forbidden_name(name: &str) -> bool {
    name.starts_with("__") || FORBIDDEN_NAMES.contains(&name)
}

/// Lambda calls nested deeper than this exhaust the budget.
const MAX_CALL_DEPTH: usize = 64;

pub(crate) const STACK_RED_ZONE: usize = 128 * 1024;
pub(crate) const STACK_GROWTH: usize = 2 * 1024 * 1024;

pub(crate) enum Stop {
    Fail { message: String, span: Span },
    Error(DslError),
}

impl From<DslError> for Stop {
    fn from(e: DslError) -> Self {
        Stop::Error(e)
    }
}

enum Flow {
    Normal,
    Break,
    Continue,
}

pub(crate) struct Interp<'a> {
    pub(crate) globals: HashMap<String, Value>,
    scopes: Vec<HashMap<String, Value>>,
    registry: &'a SchemaRegistry,
    source: &'a str,
    steps: u64,
    budget: u64,
    depth: usize,
    regex_cache: HashMap<(String, u32), Rc<Regex>>,
}

pub(crate) type R<T> = Result<T, DslError>;

impl<'a> Interp<'a> {
    pub(crate) fn new(
        globals: HashMap<String, Value>,
        registry: &'a SchemaRegistry,
        source: &'a str,
        budget: u64,
    ) -> Self {
        Interp {
            globals,
            scopes: Vec::new(),
            registry,
            source,
            steps: 0,
            budget,
            depth: 0,
            regex_cache: HashMap::new(),
        }
    }

    pub(crate) fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn charge(&mut self, n: u64) -> R<()> {
        self.steps = self.steps.saturating_add(n);
        if self.steps > self.budget {
            return Err(DslError::new(
                DslErrorKind::BudgetExceeded,
                format!("step budget of {} exhausted", self.budget),
            ));
        }
        Ok(())
    }

    pub(crate) fn regex(&mut self, pattern: &str, flags: i64) -> R<Rc<Regex>> {
        let key = (pattern.to_string(), flags as u32);
        if let Some(r) = self.regex_cache.get(&key) {
            return Ok(r.clone());
        }
        let r = regex::RegexBuilder::new(pattern)
            .case_insensitive(flags & 2 != 0)
            .multi_line(flags & 8 != 0)
            .dot_matches_new_line(flags & 16 != 0)
            .size_limit(1 << 20)
            .build()
            .map_err(|e| DslError::runtime(format!("invalid regular expression: {e}")))?;
        let r = Rc::new(r);
        self.regex_cache.insert(key, r.clone());
        Ok(r)
    }

    // ----- statements

    pub(crate) fn run(&mut self, program: &Program) -> Result<(), Stop> {
        match self.exec_block(&program.body)? {
            Flow::Normal | Flow::Break | Flow::Continue => Ok(()),
        }
    }

    fn exec_block(&mut self, stmts: &[Stmt]) -> Result<Flow, Stop> {
        for s in stmts {
            match self.exec(s)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, s: &Stmt) -> Result<Flow, Stop> {
        self.charge(1).map_err(|e| e.at(s.span))?;
        match &s.kind {
            StmtKind::Assert { test, msg } => {
                if !self.eval(test)?.truthy() {
                    let message = match msg {
                        Some(m) => self.eval(m)?.to_str(),
                        None => format!("assertion failed: {}", test.span.slice(self.source)),
                    };
                    return Err(Stop::Fail { message, span: s.span });
                }
                Ok(Flow::Normal)
            }
            StmtKind::Assign { target, value } => {
                let v = self.eval(value)?;
                self.bind(target, v).map_err(|e| e.at(s.span))?;
                Ok(Flow::Normal)
            }
            StmtKind::AugAssign { target, op, value } => {
                let current = self.lookup(target).map_err(|e| e.at(s.span))?;
                let v = self.eval(value)?;
                let out = self.binop(*op, &current, &v).map_err(|e| e.at(s.span))?;
                self.globals.insert(target.clone(), out);
                Ok(Flow::Normal)
            }
            StmtKind::Expr(e) => {
                self.eval(e)?;
                Ok(Flow::Normal)
            }
            StmtKind::If { branches, orelse } => {
                for (test, body) in branches {
                    if self.eval(test)?.truthy() {
                        return self.exec_block(body);
                    }
                }
                self.exec_block(orelse)
            }
            StmtKind::For { target, iter, body } => {
                let seq = self.eval(iter)?;
                let items = self.iterate(&seq).map_err(|e| e.at(iter.span))?;
                for item in items {
                    self.charge(1).map_err(|e| e.at(s.span))?;
                    self.bind(target, item).map_err(|e| e.at(s.span))?;
                    match self.exec_block(body)? {
                        Flow::Break => break,
                        Flow::Continue | Flow::Normal => {}
                    }
                }
                Ok(Flow::Normal)
            }
            StmtKind::While { test, body } => {
                while self.eval(test)?.truthy() {
                    self.charge(1).map_err(|e| e.at(s.span))?;
                    match self.exec_block(body)? {
                        Flow::Break => break,
                        Flow::Continue | Flow::Normal => {}
                    }
                }
                Ok(Flow::Normal)
            }
            StmtKind::Pass => Ok(Flow::Normal),
            StmtKind::Break => Ok(Flow::Break),
            StmtKind::Continue => Ok(Flow::Continue),
        }
    }

    fn bind(&mut self, target: &Target, value: Value) -> R<()> {
        match target {
            Target::Name(n) => {
                match self.scopes.last_mut() {
                    Some(scope) => scope.insert(n.clone(), value),
                    None => self.globals.insert(n.clone(), value),
                };
                Ok(())
            }
            Target::Tuple(targets) => {
                let items = self.iterate(&value)?;
                if items.len() != targets.len() {
                    return Err(DslError::runtime(format!(
                        "cannot unpack {} values into {} targets",
                        items.len(),
                        targets.len()
                    )));
                }
                for (t, v) in targets.iter().zip(items) {
                    self.bind(t, v)?;
                }
                Ok(())
            }
        }
    }

    pub(crate) fn lookup(&self, name: &str) -> R<Value> {
        for scope in self.scopes.iter().rev() {
            if let Some(v) = scope.get(name) {
                return Ok(v.clone());
            }
        }
        if let Some(v) = self.globals.get(name) {
            return Ok(v.clone());
        }
        if let Some(s) = self.registry.get(name) {
            return Ok(Value::Schema(s));
        }
        if let Some(b) = Builtin::global(name) {
            return Ok(Value::Builtin(b));
        }
        if let Some(m) = Module::lookup(name) {
            return Ok(Value::Module(m));
        }
        if is_forbidden_name(name) {
            return Err(DslError::forbidden(format!("`{name}` is not available in assertions")));
        }
        Err(DslError::new(DslErrorKind::UnknownName, format!("name `{name}` is not defined")))
    }

    // ----- expressions

    pub(crate) fn eval(&mut self, e: &Expr) -> R<Value> {
        self.charge(1).map_err(|err| err.at(e.span))?;
        stacker::maybe_grow(STACK_RED_ZONE, STACK_GROWTH, || self.eval_inner(e)).map_err(|err| err.at(e.span))
    }

    fn eval_inner(&mut self, e: &Expr) -> R<Value> {
        match &e.kind {
            ExprKind::Lit(l) => Ok(match l {
                Literal::None => Value::None,
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Int(i) => Value::Int(*i),
                Literal::Float(f) => Value::Float(*f),
                Literal::Str(s) => Value::str(s.as_str()),
            }),
            ExprKind::Name(n) => self.lookup(n),
            ExprKind::FString(parts) => {
                let mut out = String::new();
                for p in parts {
                    match p {
                        FPart::Lit(s) => out.push_str(s),
                        FPart::Expr { expr, spec } => {
                            let v = self.eval(expr)?;
                            match spec {
                                Some(spec) => out.push_str(&crate::builtins::format_spec(&v, spec)?),
                                None => out.push_str(&v.to_str()),
                            }
                        }
                    }
                }
                Ok(Value::str(out))
            }
            ExprKind::List(items) => Ok(Value::list(self.eval_all(items)?)),
            ExprKind::Tuple(items) => Ok(Value::tuple(self.eval_all(items)?)),
            ExprKind::Set(items) => {
                let vals = self.eval_all(items)?;
                crate::builtins::make_set(vals)
            }
            ExprKind::Dict(pairs) => {
                let mut out: Vec<(Value, Value)> = Vec::new();
                for (k, v) in pairs {
                    let k = self.eval(k)?;
                    let v = self.eval(v)?;
                    dict_insert(&mut out, k, v)?;
                }
                Ok(Value::Dict(Rc::new(out)))
            }
            ExprKind::Attr(obj, name) => {
                let v = self.eval(obj)?;
                self.get_attr(&v, name)
            }
            ExprKind::Call { func, args, kwargs } => {
                let argv = self.eval_all(args)?;
                let mut kw = Vec::with_capacity(kwargs.len());
                for (k, v) in kwargs {
                    kw.push((k.clone(), self.eval(v)?));
                }
                if let ExprKind::Attr(obj, name) = &func.kind {
                    let recv = self.eval(obj)?;
                    return self.call_method(&recv, name, argv, kw);
                }
                let f = self.eval(func)?;
                self.call_value(&f, argv, kw)
            }
            ExprKind::Index(v, i) => {
                let v = self.eval(v)?;
                let i = self.eval(i)?;
                index(&v, &i)
            }
            ExprKind::Slice { value, lower, upper, step } => {
                let v = self.eval(value)?;
                let mut bound = |b: &Option<Box<Expr>>| -> R<Option<i64>> {
                    match b {
                        None => Ok(None),
                        Some(e) => match self.eval(e)? {
                            Value::None => Ok(None),
                            x => x.as_int().map(Some).ok_or_else(|| {
                                DslError::type_mismatch("slice indices must be integers or None")
                            }),
                        },
                    }
                };
                let lo = bound(lower)?;
                let hi = bound(upper)?;
                let st = bound(step)?;
                slice(&v, lo, hi, st)
            }
            ExprKind::Unary(op, inner) => {
                let v = self.eval(inner)?;
                unary(*op, &v)
            }
            ExprKind::Binary(op, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                self.binop(*op, &a, &b)
            }
            ExprKind::And(a, b) => {
                let a = self.eval(a)?;
                if !a.truthy() {
                    return Ok(a);
                }
                self.eval(b)
            }
            ExprKind::Or(a, b) => {
                let a = self.eval(a)?;
                if a.truthy() {
                    return Ok(a);
                }
                self.eval(b)
            }
            ExprKind::Compare { left, ops } => {
                let mut lhs = self.eval(left)?;
                for (op, rhs_e) in ops {
                    let rhs = self.eval(rhs_e)?;
                    if !self.compare(*op, &lhs, &rhs)? {
                        return Ok(Value::Bool(false));
                    }
                    lhs = rhs;
                }
                Ok(Value::Bool(true))
            }
            ExprKind::IfExp { test, body, orelse } => {
                if self.eval(test)?.truthy() {
                    self.eval(body)
                } else {
                    self.eval(orelse)
                }
            }
            ExprKind::Lambda { params, body } => {
                let mut captured: Vec<(String, Value)> = Vec::new();
                for scope in &self.scopes {
                    for (k, v) in scope {
                        captured.retain(|(n, _)| n != k);
                        captured.push((k.clone(), v.clone()));
                    }
                }
                captured.sort_by(|a, b| a.0.cmp(&b.0));
                Ok(Value::Lambda(Rc::new(LambdaValue {
                    params: params.clone(),
                    body: (**body).clone(),
                    captured,
                })))
            }
            ExprKind::Comp { kind, elt, generators } => {
                let mut out = Vec::new();
                self.scopes.push(HashMap::new());
                let r = self.comprehend(generators, &mut |me| {
                    out.push(me.eval(elt)?);
                    Ok(())
                });
                self.scopes.pop();
                r?;
                match kind {
                    CompKind::List | CompKind::Gen => Ok(Value::list(out)),
                    CompKind::Set => crate::builtins::make_set(out),
                }
            }
            ExprKind::DictComp { key, value, generators } => {
                let mut out: Vec<(Value, Value)> = Vec::new();
                self.scopes.push(HashMap::new());
                let r = self.comprehend(generators, &mut |me| {
                    let k = me.eval(key)?;
                    let v = me.eval(value)?;
                    dict_insert(&mut out, k, v)
                });
                self.scopes.pop();
                r?;
                Ok(Value::Dict(Rc::new(out)))
            }
        }
    }

    fn eval_all(&mut self, items: &[Expr]) -> R<Vec<Value>> {
        items.iter().map(|e| self.eval(e)).collect()
    }

    fn comprehend(&mut self, gens: &[Generator], emit: &mut dyn FnMut(&mut Self) -> R<()>) -> R<()> {
        let Some((g, rest)) = gens.split_first() else {
            return emit(self);
        };
        let seq = self.eval(&g.iter)?;
        let items = self.iterate(&seq).map_err(|e| e.at(g.iter.span))?;
        'outer: for item in items {
            self.charge(1)?;
            self.bind(&g.target, item)?;
            for cond in &g.ifs {
                if !self.eval(cond)?.truthy() {
                    continue 'outer;
                }
            }
            self.comprehend(rest, emit)?;
        }
        Ok(())
    }

    fn compare(&mut self, op: CmpOp, a: &Value, b: &Value) -> R<bool> {
        use std::cmp::Ordering::*;
        Ok(match op {
            CmpOp::Eq => a.equals(b)?,
            CmpOp::Ne => !a.equals(b)?,
            CmpOp::Lt => a.compare(b)? == Less,
            CmpOp::Le => a.compare(b)? != Greater,
            CmpOp::Gt => a.compare(b)? == Greater,
            CmpOp::Ge => a.compare(b)? != Less,
            CmpOp::In => self.membership(a, b)?,
            CmpOp::NotIn => !self.membership(a, b)?,
            CmpOp::Is => a.same(b),
            CmpOp::IsNot => !a.same(b),
        })
    }

    fn membership(&mut self, item: &Value, container: &Value) -> R<bool> {
        match container {
            Value::Str(hay) => match item {
                Value::Str(needle) => {
                    self.charge(hay.len() as u64 / 64)?;
                    Ok(hay.contains(&**needle))
                }
                other => Err(DslError::type_mismatch(format!(
                    "'in <string>' requires string as left operand, not {}",
                    other.type_name()
                ))),
            },
            Value::List(items) | Value::Tuple(items) | Value::Set(items) => {
                self.charge(items.len() as u64)?;
                contains(items, item)
            }
            Value::Dict(pairs) => {
                self.charge(pairs.len() as u64)?;
                let keys: Vec<Value> = pairs.iter().map(|(k, _)| k.clone()).collect();
                contains(&keys, item)
            }
            other => Err(DslError::type_mismatch(format!(
                "argument of type '{}' is not a container",
                other.type_name()
            ))),
        }
    }

    pub(crate) fn iterate(&self, v: &Value) -> R<Vec<Value>> {
        match v {
            Value::List(items) | Value::Tuple(items) | Value::Set(items) => Ok(items.as_ref().clone()),
            Value::Str(s) => Ok(s.chars().map(|c| Value::str(c.to_string())).collect()),
            Value::Dict(pairs) => Ok(pairs.iter().map(|(k, _)| k.clone()).collect()),
            other => Err(DslError::type_mismatch(format!("'{}' object is not iterable", other.type_name()))),
        }
    }

    // ----- attributes and calls

    fn get_attr(&mut self, v: &Value, name: &str) -> R<Value> {
        match v {
            Value::Object(o) => {
                if let Some(a) = o.get_attr(name)? {
                    return Ok(a);
                }
                if o.has_method(name) {
                    return Ok(Value::HostMethod(o.clone(), name.into()));
                }
                Err(DslError::unknown_attribute(o.type_name(), name))
            }
            Value::Symbol(s) => s
                .fields
                .get(name)
                .cloned()
                .ok_or_else(|| DslError::unknown_attribute(&s.schema_name, name)),
            Value::Module(m) => m
                .member(name)
                .ok_or_else(|| DslError::unknown_attribute(&format!("module '{}'", m.name()), name)),
            Value::None => Err(DslError::runtime(format!("'NoneType' object has no attribute '{name}'"))),
            other => {
                if let Some(a) = crate::builtins::value_attribute(other, name) {
                    return Ok(a);
                }
                if crate::builtins::has_value_method(other, name) {
                    return Ok(Value::Method(Rc::new(other.clone()), name.into()));
                }
                Err(DslError::unknown_attribute(&other.type_name(), name))
            }
        }
    }

    fn call_method(&mut self, recv: &Value, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        match recv {
            Value::Object(o) => {
                if o.has_method(name) {
                    return o.call_method(name, &args, &kwargs);
                }
                if let Some(a) = o.get_attr(name)? {
                    return self.call_value(&a, args, kwargs);
                }
                Err(DslError::forbidden(format!("{} has no method `{name}`", o.type_name())))
            }
            Value::Symbol(s) => match s.fields.get(name) {
                Some(f) => {
                    let f = f.clone();
                    self.call_value(&f, args, kwargs)
                }
                None => Err(DslError::forbidden(format!("{} has no method `{name}`", s.schema_name))),
            },
            Value::Module(m) => match m.member(name) {
                Some(f) => self.call_value(&f, args, kwargs),
                None => Err(DslError::forbidden(format!("`{}.{name}` is not available in assertions", m.name()))),
            },
            Value::None => Err(DslError::runtime(format!("'NoneType' object has no attribute '{name}'"))),
            other => {
                if crate::builtins::has_value_method(other, name) {
                    return self.call_value_method(other, name, args, kwargs);
                }
                if let Some(a) = crate::builtins::value_attribute(other, name) {
                    return self.call_value(&a, args, kwargs);
                }
                Err(DslError::forbidden(format!("{} has no method `{name}`", other.type_name())))
            }
        }
    }

    pub(crate) fn call_value(&mut self, f: &Value, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        match f {
            Value::Builtin(b) => self.call_builtin(*b, args, kwargs),
            Value::Method(recv, name) => {
                let recv = (**recv).clone();
                self.call_value_method(&recv, name, args, kwargs)
            }
            Value::HostMethod(o, name) => o.call_method(name, &args, &kwargs),
            Value::Lambda(l) => self.call_lambda(l.clone(), args, kwargs),
            Value::Schema(s) => Err(DslError::forbidden(format!(
                "schema `{}` cannot be instantiated directly; use extract",
                s.name
            ))),
            other => Err(DslError::type_mismatch(format!("'{}' object is not callable", other.type_name()))),
        }
    }

    fn call_lambda(&mut self, l: Rc<LambdaValue>, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let mut bound: Vec<Option<Value>> = vec![None; l.params.len()];
        if args.len() > l.params.len() {
            return Err(DslError::type_mismatch(format!(
                "lambda takes {} arguments but {} were given",
                l.params.len(),
                args.len()
            )));
        }
        for (slot, a) in bound.iter_mut().zip(args) {
            *slot = Some(a);
        }
        for (k, v) in kwargs {
            match l.params.iter().position(|p| *p == k) {
                Some(i) if bound[i].is_none() => bound[i] = Some(v),
                Some(_) => return Err(DslError::type_mismatch(format!("multiple values for argument `{k}`"))),
                None => return Err(DslError::type_mismatch(format!("unexpected keyword argument `{k}`"))),
            }
        }
        let mut frame: HashMap<String, Value> = l.captured.iter().cloned().collect();
        for (p, v) in l.params.iter().zip(bound) {
            match v {
                Some(v) => frame.insert(p.clone(), v),
                None => return Err(DslError::type_mismatch(format!("missing argument `{p}`"))),
            };
        }
        if self.depth >= MAX_CALL_DEPTH {
            return Err(DslError::new(
                DslErrorKind::BudgetExceeded,
                "call depth limit exceeded",
            ));
        }
        self.depth += 1;
        let saved = std::mem::replace(&mut self.scopes, vec![frame]);
        let out = self.eval(&l.body);
        self.scopes = saved;
        self.depth -= 1;
        out
    }

    // ----- operators

    pub(crate) fn binop(&mut self, op: BinOp, a: &Value, b: &Value) -> R<Value> {
        use Value::*;
        let unsupported = || {
            DslError::type_mismatch(format!(
                "unsupported operand types for {}: '{}' and '{}'",
                op.symbol(),
                a.type_name(),
                b.type_name()
            ))
        };
        let overflow = || DslError::runtime("integer overflow");
        if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
            return match op {
                BinOp::Add => x.checked_add(y).map(Int).ok_or_else(overflow),
                BinOp::Sub => x.checked_sub(y).map(Int).ok_or_else(overflow),
                BinOp::Mul => x.checked_mul(y).map(Int).ok_or_else(overflow),
                BinOp::Div => {
                    if y == 0 {
                        Err(DslError::runtime("division by zero"))
                    } else {
                        Ok(Float(x as f64 / y as f64))
                    }
                }
                BinOp::FloorDiv => {
                    if y == 0 {
                        return Err(DslError::runtime("integer division by zero"));
                    }
                    let q = x.checked_div(y).ok_or_else(overflow)?;
                    Ok(Int(if (x % y != 0) && ((x < 0) != (y < 0)) { q - 1 } else { q }))
                }
                BinOp::Mod => {
                    if y == 0 {
                        return Err(DslError::runtime("integer modulo by zero"));
                    }
                    let r = x.checked_rem(y).unwrap_or(0);
                    Ok(Int(if r != 0 && ((r < 0) != (y < 0)) { r + y } else { r }))
                }
                BinOp::Pow => {
                    if y < 0 {
                        if x == 0 {
                            return Err(DslError::runtime("zero cannot be raised to a negative power"));
                        }
                        Ok(Float((x as f64).powf(y as f64)))
                    } else {
                        let e = u32::try_from(y).map_err(|_| overflow())?;
                        x.checked_pow(e).map(Int).ok_or_else(overflow)
                    }
                }
            };
        }
        if let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) {
            return match op {
                BinOp::Add => Ok(Float(x + y)),
                BinOp::Sub => Ok(Float(x - y)),
                BinOp::Mul => Ok(Float(x * y)),
                BinOp::Div => {
                    if y == 0.0 {
                        Err(DslError::runtime("float division by zero"))
                    } else {
                        Ok(Float(x / y))
                    }
                }
                BinOp::FloorDiv => {
                    if y == 0.0 {
                        Err(DslError::runtime("float floor division by zero"))
                    } else {
                        Ok(Float((x / y).floor()))
                    }
                }
                BinOp::Mod => {
                    if y == 0.0 {
                        Err(DslError::runtime("float modulo by zero"))
                    } else {
                        let r = x % y;
                        Ok(Float(if r != 0.0 && ((r < 0.0) != (y < 0.0)) { r + y } else { r }))
                    }
                }
                BinOp::Pow => {
                    if x == 0.0 && y < 0.0 {
                        Err(DslError::runtime("zero cannot be raised to a negative power"))
                    } else if x < 0.0 && y.fract() != 0.0 {
                        Err(DslError::runtime("negative number raised to a fractional power"))
                    } else {
                        Ok(Float(x.powf(y)))
                    }
                }
            };
        }
        match (op, a, b) {
            (BinOp::Add, Str(x), Str(y)) => {
                self.charge((x.len() + y.len()) as u64 / 16)?;
                Ok(Value::str(format!("{x}{y}")))
            }
            (BinOp::Add, List(x), List(y)) => {
                self.charge((x.len() + y.len()) as u64)?;
                Ok(Value::list(x.iter().chain(y.iter()).cloned().collect()))
            }
            (BinOp::Add, Tuple(x), Tuple(y)) => {
                self.charge((x.len() + y.len()) as u64)?;
                Ok(Value::tuple(x.iter().chain(y.iter()).cloned().collect()))
            }
            (BinOp::Mul, Str(s), n) | (BinOp::Mul, n, Str(s)) if n.as_int().is_some() => {
                let n = n.as_int().unwrap().max(0) as u64;
                self.charge(n.saturating_mul(s.len() as u64) / 16)?;
                Ok(Value::str(s.repeat(n as usize)))
            }
            (BinOp::Mul, List(xs), n) | (BinOp::Mul, n, List(xs)) if n.as_int().is_some() => {
                let n = n.as_int().unwrap().max(0) as u64;
                self.charge(n.saturating_mul(xs.len() as u64))?;
                let mut out = Vec::new();
                for _ in 0..n {
                    out.extend(xs.iter().cloned());
                }
                Ok(Value::list(out))
            }
            (BinOp::Mul, Tuple(xs), n) | (BinOp::Mul, n, Tuple(xs)) if n.as_int().is_some() => {
                let n = n.as_int().unwrap().max(0) as u64;
                self.charge(n.saturating_mul(xs.len() as u64))?;
                let mut out = Vec::new();
                for _ in 0..n {
                    out.extend(xs.iter().cloned());
                }
                Ok(Value::tuple(out))
            }
            (BinOp::Sub, Set(x), Set(y)) => {
                self.charge((x.len() * y.len().max(1)) as u64)?;
                let mut out = Vec::new();
                for v in x.iter() {
                    if !contains(y, v)? {
                        out.push(v.clone());
                    }
                }
                Ok(Set(Rc::new(out)))
            }
            (BinOp::Sub, DateTime(x), DateTime(y)) => Ok(Duration(x.signed_duration_since(*y))),
            (BinOp::Sub, Date(x), Date(y)) => Ok(Duration(x.signed_duration_since(*y))),
            (BinOp::Add, DateTime(x), Duration(d)) | (BinOp::Add, Duration(d), DateTime(x)) => x
                .checked_add_signed(*d)
                .map(DateTime)
                .ok_or_else(|| DslError::runtime("date value out of range")),
            (BinOp::Sub, DateTime(x), Duration(d)) => x
                .checked_sub_signed(*d)
                .map(DateTime)
                .ok_or_else(|| DslError::runtime("date value out of range")),
            (BinOp::Add, Date(x), Duration(d)) | (BinOp::Add, Duration(d), Date(x)) => x
                .checked_add_signed(TimeDelta::days(d.num_days()))
                .map(Date)
                .ok_or_else(|| DslError::runtime("date value out of range")),
            (BinOp::Sub, Date(x), Duration(d)) => x
                .checked_sub_signed(TimeDelta::days(d.num_days()))
                .map(Date)
                .ok_or_else(|| DslError::runtime("date value out of range")),
            (BinOp::Add, Duration(x), Duration(y)) => {
                x.checked_add(y).map(Duration).ok_or_else(|| DslError::runtime("timedelta overflow"))
            }
            (BinOp::Sub, Duration(x), Duration(y)) => {
                x.checked_sub(y).map(Duration).ok_or_else(|| DslError::runtime("timedelta overflow"))
            }
            (BinOp::Div, Duration(x), Duration(y)) => {
                let y = y.num_milliseconds();
                if y == 0 {
                    Err(DslError::runtime("division by zero"))
                } else {
                    Ok(Float(x.num_milliseconds() as f64 / y as f64))
                }
            }
            (BinOp::Mul, Duration(d), n) | (BinOp::Mul, n, Duration(d)) if n.as_int().is_some() => {
                let n = i32::try_from(n.as_int().unwrap()).map_err(|_| overflow())?;
                d.checked_mul(n).map(Duration).ok_or_else(|| DslError::runtime("timedelta overflow"))
            }
            _ => Err(unsupported()),
        }
    }
}

fn unary(op: UnaryOp, v: &Value) -> R<Value> {
    match op {
        UnaryOp::Not => Ok(Value::Bool(!v.truthy())),
        UnaryOp::Neg => match v {
            Value::Float(f) => Ok(Value::Float(-f)),
            Value::Duration(d) => Ok(Value::Duration(-*d)),
            v => match v.as_int() {
                Some(i) => i.checked_neg().map(Value::Int).ok_or_else(|| DslError::runtime("integer overflow")),
                None => Err(DslError::type_mismatch(format!("bad operand type for unary -: '{}'", v.type_name()))),
            },
        },
        UnaryOp::Pos => match v {
            Value::Float(_) | Value::Duration(_) => Ok(v.clone()),
            v => match v.as_int() {
                Some(i) => Ok(Value::Int(i)),
                None => Err(DslError::type_mismatch(format!("bad operand type for unary +: '{}'", v.type_name()))),
            },
        },
    }
}

pub(crate) fn dict_insert(pairs: &mut Vec<(Value, Value)>, k: Value, v: Value) -> R<()> {
    if !k.is_hashable() {
        return Err(DslError::type_mismatch(format!("unhashable type: '{}'", k.type_name())));
    }
    for (ek, ev) in pairs.iter_mut() {
        if ek.is_number() == k.is_number() && ek.equals(&k)? {
            *ev = v;
            return Ok(());
        }
    }
    pairs.push((k, v));
    Ok(())
}

fn norm_index(i: i64, len: usize) -> Option<usize> {
    let len = len as i64;
    let j = if i < 0 { i + len } else { i };
    (0..len).contains(&j).then_some(j as usize)
}

fn index(v: &Value, i: &Value) -> R<Value> {
    let int_index = |i: &Value, what: &str| -> R<i64> {
        i.as_int()
            .ok_or_else(|| DslError::type_mismatch(format!("{what} indices must be integers, not {}", i.type_name())))
    };
    match v {
        Value::List(items) | Value::Tuple(items) => {
            let what = if matches!(v, Value::List(_)) { "list" } else { "tuple" };
            let k = int_index(i, what)?;
            norm_index(k, items.len())
                .map(|j| items[j].clone())
                .ok_or_else(|| DslError::runtime(format!("{what} index {k} out of range")))
        }
        Value::Str(s) => {
            let k = int_index(i, "string")?;
            let chars: Vec<char> = s.chars().collect();
            norm_index(k, chars.len())
                .map(|j| Value::str(chars[j].to_string()))
                .ok_or_else(|| DslError::runtime(format!("string index {k} out of range")))
        }
        Value::Dict(pairs) => {
            if !i.is_hashable() {
                return Err(DslError::type_mismatch(format!("unhashable type: '{}'", i.type_name())));
            }
            dict_get(pairs, i)?.ok_or_else(|| DslError::runtime(format!("key {} not found", i.repr())))
        }
        Value::Match(m) => crate::builtins::match_group(m, i),
        Value::None => Err(DslError::runtime("'NoneType' object is not subscriptable")),
        other => Err(DslError::type_mismatch(format!("'{}' object is not subscriptable", other.type_name()))),
    }
}

fn slice_indices(len: usize, lo: Option<i64>, hi: Option<i64>, step: Option<i64>) -> R<Vec<usize>> {
    let step = step.unwrap_or(1);
    if step == 0 {
        return Err(DslError::runtime("slice step cannot be zero"));
    }
    let len = len as i64;
    let clamp = |v: i64, lower: i64, upper: i64| v.max(lower).min(upper);
    let adjust = |v: i64| if v < 0 { v + len } else { v };
    let mut out = Vec::new();
    if step > 0 {
        let start = lo.map(|v| clamp(adjust(v), 0, len)).unwrap_or(0);
        let stop = hi.map(|v| clamp(adjust(v), 0, len)).unwrap_or(len);
        let mut i = start;
        while i < stop {
            out.push(i as usize);
            i += step;
        }
    } else {
        let start = lo.map(|v| clamp(adjust(v), -1, len - 1)).unwrap_or(len - 1);
        let stop = hi.map(|v| clamp(adjust(v), -1, len - 1)).unwrap_or(-1);
        let mut i = start;
        while i > stop {
            out.push(i as usize);
            i += step;
        }
    }
    Ok(out)
}

fn slice(v: &Value, lo: Option<i64>, hi: Option<i64>, step: Option<i64>) -> R<Value> {
    match v {
        Value::List(items) => {
            let idx = slice_indices(items.len(), lo, hi, step)?;
            Ok(Value::list(idx.into_iter().map(|i| items[i].clone()).collect()))
        }
        Value::Tuple(items) => {
            let idx = slice_indices(items.len(), lo, hi, step)?;
            Ok(Value::tuple(idx.into_iter().map(|i| items[i].clone()).collect()))
        }
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let idx = slice_indices(chars.len(), lo, hi, step)?;
            Ok(Value::str(idx.into_iter().map(|i| chars[i]).collect::<String>()))
        }
        Value::None => Err(DslError::runtime("'NoneType' object is not subscriptable")),
        other => Err(DslError::type_mismatch(format!("'{}' object cannot be sliced", other.type_name()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn python_slices() {
        assert_eq!(slice_indices(5, None, None, Some(-1)).unwrap(), vec![4, 3, 2, 1, 0]);
        assert_eq!(slice_indices(5, Some(1), Some(-1), None).unwrap(), vec![1, 2, 3]);
        assert_eq!(slice_indices(5, Some(-2), None, None).unwrap(), vec![3, 4]);
        assert_eq!(slice_indices(5, Some(10), None, None).unwrap(), Vec::<usize>::new());
        assert!(slice_indices(5, None, None, Some(0)).is_err());
    }

    #[test]
    fn floor_semantics() {
        let reg = SchemaRegistry::new();
        let mut it = Interp::new(HashMap::new(), &reg, "", 100);
        let r = it.binop(BinOp::FloorDiv, &Value::Int(-7), &Value::Int(2)).unwrap();
        assert!(matches!(r, Value::Int(-4)));
        let r = it.binop(BinOp::Mod, &Value::Int(-7), &Value::Int(2)).unwrap();
        assert!(matches!(r, Value::Int(1)));
        let e = it.binop(BinOp::Mul, &Value::Int(i64::MAX), &Value::Int(2)).unwrap_err();
        assert_eq!(e.kind, DslErrorKind::RuntimeFault);
    }
}

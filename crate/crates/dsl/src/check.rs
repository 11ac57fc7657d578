//! Static checks run before a program is accepted: schema resolution,
//! name binding and a light type inference over the built-in types that
//! catches hallucinated attributes and methods early.

use std::collections::{BTreeSet, HashMap};

use crate::ast::*;
use crate::error::{DslError, DslErrorKind};
use crate::interp::{is_forbidden_name, STACK_GROWTH, STACK_RED_ZONE};
use crate::model::Ty;
use crate::program::AssertionProgram;
use crate::schema::SchemaRegistry;
use crate::value::{Builtin, Module};

/// What the checker may assume is bound at evaluation time.
pub struct CheckContext<'a> {
    pub registry: &'a SchemaRegistry,
    pub bound_names: BTreeSet<String>,
}

impl<'a> CheckContext<'a> {
    /// The standard context: `session` and `state` plus the registry.
    pub fn standard(registry: &'a SchemaRegistry) -> Self {
        CheckContext {
            registry,
            bound_names: ["session", "state"].into_iter().map(String::from).collect(),
        }
    }

    fn resolves(&self, name: &str) -> bool {
        self.bound_names.contains(name)
            || self.registry.contains(name)
            || Builtin::global(name).is_some()
            || Module::lookup(name).is_some()
    }
}

pub fn check_program(program: &AssertionProgram, ctx: &CheckContext) -> Result<(), DslError> {
    for s in &program.referenced_schemas {
        if !ctx.registry.contains(s) && !ctx.bound_names.contains(s) {
            return Err(DslError::new(
                DslErrorKind::UnknownName,
                format!("schema `{s}` is not declared"),
            ));
        }
    }
    for n in &program.referenced_names {
        if ctx.resolves(n) {
            continue;
        }
        if is_forbidden_name(n) {
            return Err(DslError::forbidden(format!("`{n}` is not available in assertions")));
        }
        return Err(DslError::new(DslErrorKind::UnknownName, format!("name `{n}` is not defined")));
    }
    let mut checker = TypeCheck {
        registry: ctx.registry,
        vars: HashMap::new(),
    };
    checker.block(&program.ast.body)
}

struct TypeCheck<'a> {
    registry: &'a SchemaRegistry,
    vars: HashMap<String, Ty>,
}

type R<T> = Result<T, DslError>;

impl TypeCheck<'_> {
    fn block(&mut self, stmts: &[Stmt]) -> R<()> {
        stmts.iter().try_for_each(|s| self.stmt(s))
    }

    fn stmt(&mut self, s: &Stmt) -> R<()> {
        match &s.kind {
            StmtKind::Assert { test, msg } => {
                self.expr(test)?;
                if let Some(m) = msg {
                    self.expr(m)?;
                }
            }
            StmtKind::Assign { target, value } => {
                let ty = self.expr(value)?;
                self.bind(target, ty);
            }
            StmtKind::AugAssign { target, value, .. } => {
                self.expr(value)?;
                self.vars.insert(target.clone(), Ty::Unknown);
            }
            StmtKind::Expr(e) => {
                self.expr(e)?;
            }
            StmtKind::If { branches, orelse } => {
                for (t, b) in branches {
                    self.expr(t)?;
                    self.block(b)?;
                }
                self.block(orelse)?;
            }
            StmtKind::For { target, iter, body } => {
                let ty = self.expr(iter)?;
                self.bind(target, ty.element_type());
                self.block(body)?;
            }
            StmtKind::While { test, body } => {
                self.expr(test)?;
                self.block(body)?;
            }
            StmtKind::Pass | StmtKind::Break | StmtKind::Continue => {}
        }
        Ok(())
    }

    fn bind(&mut self, target: &Target, ty: Ty) {
        match target {
            Target::Name(n) => {
                self.vars.insert(n.clone(), ty);
            }
            Target::Tuple(items) => {
                for t in items {
                    self.bind(t, Ty::Unknown);
                }
            }
        }
    }

    fn name_type(&self, n: &str) -> Ty {
        if let Some(t) = self.vars.get(n) {
            return t.clone();
        }
        match n {
            "session" => Ty::Session,
            "state" => Ty::State,
            _ => Ty::Unknown,
        }
    }

    fn field_type(&self, schema: &str, field: &str) -> Option<Ty> {
        let decl = self.registry.get(schema)?;
        decl.field(field).map(|f| Ty::from_field(&f.kind))
    }

    fn attr(&mut self, e: &Expr, recv: &Ty, name: &str) -> R<Ty> {
        if let Some(host) = recv.host() {
            if let Some(t) = host.attribute_type(name) {
                return Ok(t);
            }
            if host.has_method(name) {
                return Ok(Ty::Unknown);
            }
            return Err(DslError::unknown_attribute(host.name(), name).at(e.span));
        }
        if let Ty::Symbol(schema) = recv {
            if self.registry.contains(schema) {
                return self
                    .field_type(schema, name)
                    .ok_or_else(|| DslError::unknown_attribute(schema, name).at(e.span));
            }
        }
        Ok(Ty::Unknown)
    }

    fn method_call(&mut self, e: &Expr, recv: &Ty, name: &str, args: &[Expr], kwargs: &[(String, Expr)]) -> R<Ty> {
        if let Some(host) = recv.host() {
            if host.has_method(name) {
                return Ok(match name {
                    "find" => Ty::list(Ty::Element),
                    "extract" => self.extract_type(args, kwargs),
                    _ => Ty::Unknown,
                });
            }
            if host.has_attribute(name) {
                return Ok(Ty::Unknown);
            }
            return Err(DslError::forbidden(format!("{} has no method `{name}`", host.name())).at(e.span));
        }
        if let Ty::Symbol(schema) = recv {
            if self.registry.contains(schema) && self.field_type(schema, name).is_none() {
                return Err(DslError::forbidden(format!("{schema} has no method `{name}`")).at(e.span));
            }
        }
        Ok(Ty::Unknown)
    }

    fn extract_type(&self, args: &[Expr], kwargs: &[(String, Expr)]) -> Ty {
        let schema_arg = kwargs
            .iter()
            .find(|(k, _)| k == "schema")
            .map(|(_, v)| v)
            .or_else(|| args.get(1))
            .or_else(|| if args.len() == 1 { args.first() } else { None });
        match schema_arg {
            Some(Expr { kind: ExprKind::Name(n), .. }) if self.registry.contains(n) => Ty::Symbol(n.clone()),
            _ => Ty::Unknown,
        }
    }

    fn scoped<T>(&mut self, f: impl FnOnce(&mut Self) -> R<T>) -> R<T> {
        let saved = self.vars.clone();
        let out = f(self);
        self.vars = saved;
        out
    }

    fn generators(&mut self, gens: &[Generator]) -> R<()> {
        for g in gens {
            let t = self.expr(&g.iter)?;
            self.bind(&g.target, t.element_type());
            for c in &g.ifs {
                self.expr(c)?;
            }
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> R<Ty> {
        stacker::maybe_grow(STACK_RED_ZONE, STACK_GROWTH, || self.expr_inner(e))
    }

    fn expr_inner(&mut self, e: &Expr) -> R<Ty> {
        Ok(match &e.kind {
            ExprKind::Lit(l) => match l {
                Literal::None => Ty::None,
                Literal::Bool(_) => Ty::Bool,
                Literal::Int(_) => Ty::Int,
                Literal::Float(_) => Ty::Float,
                Literal::Str(_) => Ty::Str,
            },
            ExprKind::Name(n) => self.name_type(n),
            ExprKind::FString(parts) => {
                for p in parts {
                    if let FPart::Expr { expr, .. } = p {
                        self.expr(expr)?;
                    }
                }
                Ty::Str
            }
            ExprKind::List(items) => {
                let mut tys = Vec::new();
                for i in items {
                    tys.push(self.expr(i)?);
                }
                match tys.split_first() {
                    Some((first, rest)) if rest.iter().all(|t| t == first) => Ty::list(first.clone()),
                    _ => Ty::list(Ty::Unknown),
                }
            }
            ExprKind::Tuple(items) | ExprKind::Set(items) => {
                for i in items {
                    self.expr(i)?;
                }
                Ty::Unknown
            }
            ExprKind::Dict(pairs) => {
                for (k, v) in pairs {
                    self.expr(k)?;
                    self.expr(v)?;
                }
                Ty::Dict
            }
            ExprKind::Attr(obj, name) => {
                let t = self.expr(obj)?;
                self.attr(e, &t, name)?
            }
            ExprKind::Call { func, args, kwargs } => {
                let mut arg_tys = Vec::new();
                for a in args {
                    arg_tys.push(self.expr(a)?);
                }
                for (_, v) in kwargs {
                    self.expr(v)?;
                }
                match &func.kind {
                    ExprKind::Attr(obj, name) => {
                        let t = self.expr(obj)?;
                        self.method_call(e, &t, name, args, kwargs)?
                    }
                    ExprKind::Name(n) if !self.vars.contains_key(n) => match (n.as_str(), arg_tys.first()) {
                        ("len" | "sum" | "abs" | "round" | "int", _) => {
                            if n == "len" || n == "int" { Ty::Int } else { Ty::Unknown }
                        }
                        ("sorted" | "list" | "reversed", Some(t)) => Ty::list(t.element_type()),
                        ("filter", _) => Ty::list(arg_tys.get(1).map(Ty::element_type).unwrap_or(Ty::Unknown)),
                        ("next" | "min" | "max", Some(t)) if args.len() <= 2 => t.element_type(),
                        ("str", _) => Ty::Str,
                        ("float", _) => Ty::Float,
                        ("bool" | "any" | "all", _) => Ty::Bool,
                        _ => Ty::Unknown,
                    },
                    _ => {
                        self.expr(func)?;
                        Ty::Unknown
                    }
                }
            }
            ExprKind::Index(v, i) => {
                let t = self.expr(v)?;
                self.expr(i)?;
                match t {
                    Ty::List(inner) => *inner,
                    Ty::Str => Ty::Str,
                    _ => Ty::Unknown,
                }
            }
            ExprKind::Slice { value, lower, upper, step } => {
                let t = self.expr(value)?;
                for b in [lower, upper, step].into_iter().flatten() {
                    self.expr(b)?;
                }
                t
            }
            ExprKind::Unary(op, v) => {
                let t = self.expr(v)?;
                if *op == UnaryOp::Not { Ty::Bool } else { t }
            }
            ExprKind::Binary(op, a, b) => {
                let ta = self.expr(a)?;
                let tb = self.expr(b)?;
                match (op, &ta, &tb) {
                    (BinOp::Add, Ty::List(x), Ty::List(y)) if x == y => ta.clone(),
                    (BinOp::Add, Ty::List(_), Ty::List(_)) => Ty::list(Ty::Unknown),
                    (BinOp::Add, Ty::Str, Ty::Str) => Ty::Str,
                    _ => Ty::Unknown,
                }
            }
            ExprKind::And(a, b) | ExprKind::Or(a, b) => {
                self.expr(a)?;
                self.expr(b)?;
                Ty::Unknown
            }
            ExprKind::Compare { left, ops } => {
                self.expr(left)?;
                for (_, r) in ops {
                    self.expr(r)?;
                }
                Ty::Bool
            }
            ExprKind::IfExp { test, body, orelse } => {
                self.expr(test)?;
                let a = self.expr(body)?;
                let b = self.expr(orelse)?;
                if a == b { a } else { Ty::Unknown }
            }
            ExprKind::Lambda { params, body } => self.scoped(|me| {
                for p in params {
                    me.vars.insert(p.clone(), Ty::Unknown);
                }
                me.expr(body)?;
                Ok(Ty::Unknown)
            })?,
            ExprKind::Comp { kind, elt, generators } => self.scoped(|me| {
                me.generators(generators)?;
                let t = me.expr(elt)?;
                Ok(if *kind == CompKind::Set { Ty::Unknown } else { Ty::list(t) })
            })?,
            ExprKind::DictComp { key, value, generators } => self.scoped(|me| {
                me.generators(generators)?;
                me.expr(key)?;
                me.expr(value)?;
                Ok(Ty::Dict)
            })?,
        })
    }
}

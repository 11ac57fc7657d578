//! Syntax tree and canonical source printing.
//!
//! `Display` renders the canonical form: four-space indentation, single
//! spaces around binary operators, double-quoted strings and the minimum
//! parentheses needed to preserve the tree. Parsing the canonical form
//! yields a tree that prints identically.

use std::fmt::{self, Write};

use crate::error::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Name(String),
    Tuple(Vec<Target>),
}

impl Target {
    pub fn names(&self, out: &mut Vec<String>) {
        match self {
            Target::Name(n) => out.push(n.clone()),
            Target::Tuple(items) => items.iter().for_each(|t| t.names(out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assert { test: Expr, msg: Option<Expr> },
    Assign { target: Target, value: Expr },
    AugAssign { target: String, op: BinOp, value: Expr },
    Expr(Expr),
    If { branches: Vec<(Expr, Vec<Stmt>)>, orelse: Vec<Stmt> },
    For { target: Target, iter: Expr, body: Vec<Stmt> },
    While { test: Expr, body: Vec<Stmt> },
    Pass,
    Break,
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FPart {
    Lit(String),
    Expr { expr: Expr, spec: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Pow => "**",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Pos,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    NotIn,
    Is,
    IsNot,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::In => "in",
            CmpOp::NotIn => "not in",
            CmpOp::Is => "is",
            CmpOp::IsNot => "is not",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompKind {
    List,
    Set,
    Gen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub target: Target,
    pub iter: Expr,
    pub ifs: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Lit(Literal),
    Name(String),
    FString(Vec<FPart>),
    List(Vec<Expr>),
    Tuple(Vec<Expr>),
    Set(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    Attr(Box<Expr>, String),
    Call {
        func: Box<Expr>,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
    },
    Index(Box<Expr>, Box<Expr>),
    Slice {
        value: Box<Expr>,
        lower: Option<Box<Expr>>,
        upper: Option<Box<Expr>>,
        step: Option<Box<Expr>>,
    },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Compare {
        left: Box<Expr>,
        ops: Vec<(CmpOp, Expr)>,
    },
    IfExp {
        test: Box<Expr>,
        body: Box<Expr>,
        orelse: Box<Expr>,
    },
    Lambda {
        params: Vec<String>,
        body: Box<Expr>,
    },
    Comp {
        kind: CompKind,
        elt: Box<Expr>,
        generators: Vec<Generator>,
    },
    DictComp {
        key: Box<Expr>,
        value: Box<Expr>,
        generators: Vec<Generator>,
    },
}

// Binding strength, low to high. Mirrors the parser's precedence climb.
const P_LAMBDA: u8 = 1;
const P_IFEXP: u8 = 2;
const P_OR: u8 = 3;
const P_AND: u8 = 4;
const P_NOT: u8 = 5;
const P_CMP: u8 = 6;
const P_ADD: u8 = 7;
const P_MUL: u8 = 8;
const P_UNARY: u8 = 9;
const P_POW: u8 = 10;
const P_POSTFIX: u8 = 11;
const P_ATOM: u8 = 12;

impl Expr {
    fn prec(&self) -> u8 {
        match &self.kind {
            ExprKind::Lambda { .. } => P_LAMBDA,
            ExprKind::IfExp { .. } => P_IFEXP,
            ExprKind::Or(..) => P_OR,
            ExprKind::And(..) => P_AND,
            ExprKind::Unary(UnaryOp::Not, _) => P_NOT,
            ExprKind::Compare { .. } => P_CMP,
            ExprKind::Binary(BinOp::Add | BinOp::Sub, ..) => P_ADD,
            ExprKind::Binary(BinOp::Pow, ..) => P_POW,
            ExprKind::Binary(..) => P_MUL,
            ExprKind::Unary(..) => P_UNARY,
            ExprKind::Attr(..) | ExprKind::Call { .. } | ExprKind::Index(..) | ExprKind::Slice { .. } => P_POSTFIX,
            _ => P_ATOM,
        }
    }

    /// Visits this expression and every sub-expression in pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Lit(_) | ExprKind::Name(_) => {}
            ExprKind::FString(parts) => {
                for p in parts {
                    if let FPart::Expr { expr, .. } = p {
                        expr.walk(f);
                    }
                }
            }
            ExprKind::List(items) | ExprKind::Tuple(items) | ExprKind::Set(items) => {
                items.iter().for_each(|e| e.walk(f))
            }
            ExprKind::Dict(pairs) => {
                for (k, v) in pairs {
                    k.walk(f);
                    v.walk(f);
                }
            }
            ExprKind::Attr(v, _) => v.walk(f),
            ExprKind::Call { func, args, kwargs } => {
                func.walk(f);
                args.iter().for_each(|e| e.walk(f));
                kwargs.iter().for_each(|(_, e)| e.walk(f));
            }
            ExprKind::Index(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Slice { value, lower, upper, step } => {
                value.walk(f);
                for e in [lower, upper, step].into_iter().flatten() {
                    e.walk(f);
                }
            }
            ExprKind::Unary(_, e) => e.walk(f),
            ExprKind::Binary(_, a, b) | ExprKind::And(a, b) | ExprKind::Or(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Compare { left, ops } => {
                left.walk(f);
                ops.iter().for_each(|(_, e)| e.walk(f));
            }
            ExprKind::IfExp { test, body, orelse } => {
                test.walk(f);
                body.walk(f);
                orelse.walk(f);
            }
            ExprKind::Lambda { body, .. } => body.walk(f),
            ExprKind::Comp { elt, generators, .. } => {
                elt.walk(f);
                for g in generators {
                    g.iter.walk(f);
                    g.ifs.iter().for_each(|e| e.walk(f));
                }
            }
            ExprKind::DictComp { key, value, generators } => {
                key.walk(f);
                value.walk(f);
                for g in generators {
                    g.iter.walk(f);
                    g.ifs.iter().for_each(|e| e.walk(f));
                }
            }
        }
    }
}

pub(crate) fn quote_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Formats a float the way the language prints it: shortest round-trip
/// form with a trailing `.0` for integral values.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let s = format!("{v:?}");
        match s.find('e') {
            // Rust writes 1e20, Python writes 1e+20
            Some(i) if !s[i + 1..].starts_with('-') => format!("{}e+{}", &s[..i], &s[i + 1..]),
            _ => s,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::None => f.write_str("None"),
            Literal::Bool(true) => f.write_str("True"),
            Literal::Bool(false) => f.write_str("False"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(v) => {
                let s = format_float(*v);
                // keep literals re-lexable: `inf` is not a literal
                if v.is_finite() { f.write_str(&s) } else { write!(f, "float(\"{s}\")") }
            }
            Literal::Str(s) => f.write_str(&quote_str(s)),
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if e.prec() < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[Expr]) -> fmt::Result {
    for (i, e) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write_child(f, e, P_IFEXP)?;
    }
    Ok(())
}

fn write_target(f: &mut fmt::Formatter<'_>, t: &Target, nested: bool) -> fmt::Result {
    match t {
        Target::Name(n) => f.write_str(n),
        Target::Tuple(items) => {
            if nested {
                f.write_str("(")?;
            }
            for (i, t) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_target(f, t, true)?;
            }
            if items.len() == 1 {
                f.write_str(",")?;
            }
            if nested {
                f.write_str(")")?;
            }
            Ok(())
        }
    }
}

fn write_generators(f: &mut fmt::Formatter<'_>, gens: &[Generator]) -> fmt::Result {
    for g in gens {
        f.write_str(" for ")?;
        write_target(f, &g.target, false)?;
        f.write_str(" in ")?;
        write_child(f, &g.iter, P_OR)?;
        for cond in &g.ifs {
            f.write_str(" if ")?;
            write_child(f, cond, P_OR)?;
        }
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Lit(l) => write!(f, "{l}"),
            ExprKind::Name(n) => f.write_str(n),
            ExprKind::FString(parts) => {
                let mut body = String::new();
                for p in parts {
                    match p {
                        FPart::Lit(s) => {
                            for c in s.chars() {
                                match c {
                                    '{' => body.push_str("{{"),
                                    '}' => body.push_str("}}"),
                                    '"' => body.push_str("\\\""),
                                    '\\' => body.push_str("\\\\"),
                                    '\n' => body.push_str("\\n"),
                                    '\t' => body.push_str("\\t"),
                                    c => body.push(c),
                                }
                            }
                        }
                        FPart::Expr { expr, spec } => {
                            // nested strings use single quotes inside the f-string
                            let inner = expr.to_string().replace('"', "'");
                            write!(body, "{{{inner}")?;
                            if let Some(s) = spec {
                                write!(body, ":{s}")?;
                            }
                            body.push('}');
                        }
                    }
                }
                write!(f, "f\"{body}\"")
            }
            ExprKind::List(items) => {
                f.write_str("[")?;
                write_list(f, items)?;
                f.write_str("]")
            }
            ExprKind::Tuple(items) => {
                f.write_str("(")?;
                write_list(f, items)?;
                if items.len() == 1 {
                    f.write_str(",")?;
                }
                f.write_str(")")
            }
            ExprKind::Set(items) => {
                if items.is_empty() {
                    return f.write_str("set()");
                }
                f.write_str("{")?;
                write_list(f, items)?;
                f.write_str("}")
            }
            ExprKind::Dict(pairs) => {
                f.write_str("{")?;
                for (i, (k, v)) in pairs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_child(f, k, P_IFEXP)?;
                    f.write_str(": ")?;
                    write_child(f, v, P_IFEXP)?;
                }
                f.write_str("}")
            }
            ExprKind::Attr(v, name) => {
                // `1 .real` style attribute access on int literals needs parens
                if matches!(v.kind, ExprKind::Lit(Literal::Int(_))) {
                    write!(f, "({v}).{name}")
                } else {
                    write_child(f, v, P_POSTFIX)?;
                    write!(f, ".{name}")
                }
            }
            ExprKind::Call { func, args, kwargs } => {
                write_child(f, func, P_POSTFIX)?;
                f.write_str("(")?;
                // a lone generator argument keeps its bare form
                if args.len() == 1 && kwargs.is_empty() {
                    if let ExprKind::Comp { kind: CompKind::Gen, elt, generators } = &args[0].kind {
                        write_child(f, elt, P_IFEXP)?;
                        write_generators(f, generators)?;
                        return f.write_str(")");
                    }
                }
                write_list(f, args)?;
                for (i, (k, v)) in kwargs.iter().enumerate() {
                    if i > 0 || !args.is_empty() {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}=")?;
                    write_child(f, v, P_IFEXP)?;
                }
                f.write_str(")")
            }
            ExprKind::Index(v, i) => {
                write_child(f, v, P_POSTFIX)?;
                f.write_str("[")?;
                if let ExprKind::Tuple(items) = &i.kind {
                    if !items.is_empty() {
                        write_list(f, items)?;
                        if items.len() == 1 {
                            f.write_str(",")?;
                        }
                        return f.write_str("]");
                    }
                }
                write_child(f, i, P_IFEXP)?;
                f.write_str("]")
            }
            ExprKind::Slice { value, lower, upper, step } => {
                write_child(f, value, P_POSTFIX)?;
                f.write_str("[")?;
                if let Some(e) = lower {
                    write_child(f, e, P_IFEXP)?;
                }
                f.write_str(":")?;
                if let Some(e) = upper {
                    write_child(f, e, P_IFEXP)?;
                }
                if let Some(e) = step {
                    f.write_str(":")?;
                    write_child(f, e, P_IFEXP)?;
                }
                f.write_str("]")
            }
            ExprKind::Unary(op, e) => match op {
                UnaryOp::Not => {
                    f.write_str("not ")?;
                    write_child(f, e, P_NOT)
                }
                UnaryOp::Neg | UnaryOp::Pos => {
                    f.write_str(if *op == UnaryOp::Neg { "-" } else { "+" })?;
                    // avoid `--x` turning into a decrement lookalike; also keeps
                    // `-(-1)` readable
                    if matches!(e.kind, ExprKind::Unary(UnaryOp::Neg | UnaryOp::Pos, _)) {
                        write!(f, "({e})")
                    } else {
                        write_child(f, e, P_UNARY)
                    }
                }
            },
            ExprKind::Binary(op, a, b) => {
                let p = self.prec();
                if *op == BinOp::Pow {
                    // right-associative; the left side must bind tighter than unary
                    write_child(f, a, P_POSTFIX)?;
                    f.write_str(" ** ")?;
                    write_child(f, b, P_UNARY)
                } else {
                    write_child(f, a, p)?;
                    write!(f, " {} ", op.symbol())?;
                    write_child(f, b, p + 1)
                }
            }
            ExprKind::And(a, b) => {
                write_child(f, a, P_AND)?;
                f.write_str(" and ")?;
                write_child(f, b, P_AND + 1)
            }
            ExprKind::Or(a, b) => {
                write_child(f, a, P_OR)?;
                f.write_str(" or ")?;
                write_child(f, b, P_OR + 1)
            }
            ExprKind::Compare { left, ops } => {
                write_child(f, left, P_ADD)?;
                for (op, e) in ops {
                    write!(f, " {} ", op.symbol())?;
                    write_child(f, e, P_ADD)?;
                }
                Ok(())
            }
            ExprKind::IfExp { test, body, orelse } => {
                write_child(f, body, P_OR)?;
                f.write_str(" if ")?;
                write_child(f, test, P_OR)?;
                f.write_str(" else ")?;
                write_child(f, orelse, P_IFEXP)
            }
            ExprKind::Lambda { params, body } => {
                f.write_str("lambda")?;
                if !params.is_empty() {
                    write!(f, " {}", params.join(", "))?;
                }
                f.write_str(": ")?;
                write_child(f, body, P_LAMBDA)
            }
            ExprKind::Comp { kind, elt, generators } => {
                let (open, close) = match kind {
                    CompKind::List => ("[", "]"),
                    CompKind::Set => ("{", "}"),
                    CompKind::Gen => ("(", ")"),
                };
                f.write_str(open)?;
                write_child(f, elt, P_IFEXP)?;
                write_generators(f, generators)?;
                f.write_str(close)
            }
            ExprKind::DictComp { key, value, generators } => {
                f.write_str("{")?;
                write_child(f, key, P_IFEXP)?;
                f.write_str(": ")?;
                write_child(f, value, P_IFEXP)?;
                write_generators(f, generators)?;
                f.write_str("}")
            }
        }
    }
}

fn write_block(f: &mut fmt::Formatter<'_>, stmts: &[Stmt], indent: usize) -> fmt::Result {
    for s in stmts {
        write_stmt(f, s, indent)?;
    }
    Ok(())
}

fn write_stmt(f: &mut fmt::Formatter<'_>, s: &Stmt, indent: usize) -> fmt::Result {
    let pad = "    ".repeat(indent);
    f.write_str(&pad)?;
    match &s.kind {
        StmtKind::Assert { test, msg } => {
            f.write_str("assert ")?;
            write_child(f, test, P_IFEXP)?;
            if let Some(m) = msg {
                f.write_str(", ")?;
                write_child(f, m, P_IFEXP)?;
            }
            f.write_str("\n")
        }
        StmtKind::Assign { target, value } => {
            write_target(f, target, false)?;
            f.write_str(" = ")?;
            write_child(f, value, 0)?;
            f.write_str("\n")
        }
        StmtKind::AugAssign { target, op, value } => {
            write!(f, "{target} {}= ", op.symbol())?;
            write_child(f, value, 0)?;
            f.write_str("\n")
        }
        StmtKind::Expr(e) => {
            write_child(f, e, 0)?;
            f.write_str("\n")
        }
        StmtKind::If { branches, orelse } => {
            for (i, (test, body)) in branches.iter().enumerate() {
                if i > 0 {
                    f.write_str(&pad)?;
                    f.write_str("elif ")?;
                } else {
                    f.write_str("if ")?;
                }
                write_child(f, test, P_IFEXP)?;
                f.write_str(":\n")?;
                write_block(f, body, indent + 1)?;
            }
            if !orelse.is_empty() {
                f.write_str(&pad)?;
                f.write_str("else:\n")?;
                write_block(f, orelse, indent + 1)?;
            }
            Ok(())
        }
        StmtKind::For { target, iter, body } => {
            f.write_str("for ")?;
            write_target(f, target, false)?;
            f.write_str(" in ")?;
            write_child(f, iter, 0)?;
            f.write_str(":\n")?;
            write_block(f, body, indent + 1)
        }
        StmtKind::While { test, body } => {
            f.write_str("while ")?;
            write_child(f, test, P_IFEXP)?;
            f.write_str(":\n")?;
            write_block(f, body, indent + 1)
        }
        StmtKind::Pass => f.write_str("pass\n"),
        StmtKind::Break => f.write_str("break\n"),
        StmtKind::Continue => f.write_str("continue\n"),
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_block(f, &self.body, 0)
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_stmt(f, self, 0)
    }
}

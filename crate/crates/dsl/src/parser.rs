//! Recursive-descent parser for the assertion language.

use crate::ast::*;
use crate::error::{DslError, DslErrorKind, Span};
use crate::interp::{STACK_GROWTH, STACK_RED_ZONE};
use crate::lexer::{tokenize, Tok, Token};

const RESERVED: [&str; 33] = [
    "and", "or", "not", "in", "is", "if", "elif", "else", "for", "while", "break", "continue",
    "pass", "assert", "True", "False", "None", "lambda", "import", "from", "def", "class",
    "return", "del", "global", "nonlocal", "yield", "with", "try", "except", "raise", "async",
    "await",
];

const UNSUPPORTED_STMTS: [&str; 13] = [
    "def", "class", "return", "del", "global", "nonlocal", "yield", "with", "try", "except",
    "raise", "async", "await",
];

pub fn parse_program(source: &str) -> Result<Program, DslError> {
    let tokens = tokenize(source)?;
    let mut p = Parser::new(tokens);
    let mut body = Vec::new();
    while !p.at(&Tok::Eof) {
        if p.eat(&Tok::Newline) {
            continue;
        }
        if p.at(&Tok::Indent) {
            return Err(DslError::parse("unexpected indent", p.span()));
        }
        body.extend(p.statement()?);
    }
    Ok(Program { body })
}

/// Parses a single expression (used for f-string fields).
pub fn parse_expression(source: &str) -> Result<Expr, DslError> {
    let tokens = tokenize(source)?;
    let mut p = Parser::new(tokens);
    let e = p.testlist()?;
    p.eat(&Tok::Newline);
    if !p.at(&Tok::Eof) {
        return Err(DslError::parse("unexpected trailing input", p.span()));
    }
    Ok(e)
}

/// Deepest expression or block nesting accepted; keeps recursion bounded.
const MAX_DEPTH: usize = 100;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
    loops: usize,
}

fn is_kw(tok: &Tok, kw: &str) -> bool {
    matches!(tok, Tok::Name(n) if n == kw)
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Parser {
            tokens,
            pos: 0,
            depth: 0,
            loops: 0,
        }
    }

    fn nested<T>(&mut self, f: impl FnOnce(&mut Parser) -> Result<T, DslError>) -> Result<T, DslError> {
        if self.depth >= MAX_DEPTH {
            return Err(DslError::parse("program nests too deeply", self.span()));
        }
        self.depth += 1;
        let out = stacker::maybe_grow(STACK_RED_ZONE, STACK_GROWTH, || f(self));
        self.depth -= 1;
        out
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos.min(self.tokens.len() - 1)].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos.min(self.tokens.len() - 1)].span
    }

    fn prev_span(&self) -> Span {
        self.tokens[self.pos.saturating_sub(1)].span
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos.min(self.tokens.len() - 1)].clone();
        if self.pos < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn at(&self, tok: &Tok) -> bool {
        self.peek() == tok
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        is_kw(self.peek(), kw)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.at(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), DslError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(DslError::parse(format!("expected `{op}`, found {}", self.describe()), self.span()))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), DslError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(DslError::parse(format!("expected `{kw}`, found {}", self.describe()), self.span()))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Name(n) => format!("`{n}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Float(f) => format!("`{f}`"),
            Tok::Str(_) | Tok::FStr(_) => "string".into(),
            Tok::Op(o) => format!("`{o}`"),
            Tok::Newline => "end of line".into(),
            Tok::Indent => "indent".into(),
            Tok::Dedent => "dedent".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn name(&mut self) -> Result<String, DslError> {
        match self.peek().clone() {
            Tok::Name(n) if !RESERVED.contains(&n.as_str()) => {
                self.pos += 1;
                Ok(n)
            }
            _ => Err(DslError::parse(format!("expected identifier, found {}", self.describe()), self.span())),
        }
    }

    // ----- statements

    fn statement(&mut self) -> Result<Vec<Stmt>, DslError> {
        let start = self.span();
        if self.eat_kw("if") {
            let mut branches = Vec::new();
            let test = self.test()?;
            let body = self.block()?;
            branches.push((test, body));
            let mut orelse = Vec::new();
            loop {
                if self.eat_kw("elif") {
                    let test = self.test()?;
                    let body = self.block()?;
                    branches.push((test, body));
                } else if self.eat_kw("else") {
                    orelse = self.block()?;
                    break;
                } else {
                    break;
                }
            }
            return Ok(vec![Stmt {
                kind: StmtKind::If { branches, orelse },
                span: start.to(self.prev_span()),
            }]);
        }
        if self.eat_kw("for") {
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.testlist()?;
            let body = self.loop_block()?;
            if self.at_kw("else") {
                return Err(DslError::parse("`for ... else` is not supported", self.span()));
            }
            return Ok(vec![Stmt {
                kind: StmtKind::For { target, iter, body },
                span: start.to(self.prev_span()),
            }]);
        }
        if self.eat_kw("while") {
            let test = self.test()?;
            let body = self.loop_block()?;
            if self.at_kw("else") {
                return Err(DslError::parse("`while ... else` is not supported", self.span()));
            }
            return Ok(vec![Stmt {
                kind: StmtKind::While { test, body },
                span: start.to(self.prev_span()),
            }]);
        }
        let mut out = vec![self.simple_statement()?];
        while self.eat_op(";") {
            if self.at(&Tok::Newline) || self.at(&Tok::Eof) {
                break;
            }
            out.push(self.simple_statement()?);
        }
        if !self.eat(&Tok::Newline) && !self.at(&Tok::Eof) && !self.at(&Tok::Dedent) {
            return Err(DslError::parse(format!("unexpected {}", self.describe()), self.span()));
        }
        Ok(out)
    }

    fn loop_block(&mut self) -> Result<Vec<Stmt>, DslError> {
        self.loops += 1;
        let out = self.block();
        self.loops -= 1;
        out
    }

    fn block(&mut self) -> Result<Vec<Stmt>, DslError> {
        self.nested(|p| p.block_inner())
    }

    fn block_inner(&mut self) -> Result<Vec<Stmt>, DslError> {
        self.expect_op(":")?;
        if self.eat(&Tok::Newline) {
            if !self.eat(&Tok::Indent) {
                return Err(DslError::parse("expected an indented block", self.span()));
            }
            let mut body = Vec::new();
            while !self.eat(&Tok::Dedent) {
                if self.at(&Tok::Eof) {
                    break;
                }
                if self.eat(&Tok::Newline) {
                    continue;
                }
                body.extend(self.statement()?);
            }
            Ok(body)
        } else {
            // single-line suite
            let mut out = vec![self.simple_statement()?];
            while self.eat_op(";") {
                if self.at(&Tok::Newline) {
                    break;
                }
                out.push(self.simple_statement()?);
            }
            if !self.eat(&Tok::Newline) && !self.at(&Tok::Eof) {
                return Err(DslError::parse(format!("unexpected {}", self.describe()), self.span()));
            }
            Ok(out)
        }
    }

    fn simple_statement(&mut self) -> Result<Stmt, DslError> {
        let start = self.span();
        let tok = self.peek().clone();
        if is_kw(&tok, "import") || is_kw(&tok, "from") {
            return Err(DslError::parse("imports are not allowed", start));
        }
        if let Tok::Name(n) = &tok {
            if UNSUPPORTED_STMTS.contains(&n.as_str()) {
                return Err(DslError::parse(format!("`{n}` statements are not supported"), start));
            }
        }
        let kind = if self.eat_kw("assert") {
            let test = self.test()?;
            let msg = if self.eat_op(",") { Some(self.test()?) } else { None };
            StmtKind::Assert { test, msg }
        } else if self.eat_kw("pass") {
            StmtKind::Pass
        } else if self.eat_kw("break") {
            if self.loops == 0 {
                return Err(DslError::parse("`break` outside loop", start));
            }
            StmtKind::Break
        } else if self.eat_kw("continue") {
            if self.loops == 0 {
                return Err(DslError::parse("`continue` outside loop", start));
            }
            StmtKind::Continue
        } else {
            let expr = self.testlist()?;
            let aug = match self.peek() {
                Tok::Op("+=") => Some(BinOp::Add),
                Tok::Op("-=") => Some(BinOp::Sub),
                Tok::Op("*=") => Some(BinOp::Mul),
                Tok::Op("/=") => Some(BinOp::Div),
                Tok::Op("//=") => Some(BinOp::FloorDiv),
                Tok::Op("%=") => Some(BinOp::Mod),
                Tok::Op("**=") => Some(BinOp::Pow),
                _ => None,
            };
            if let Some(op) = aug {
                self.pos += 1;
                let ExprKind::Name(target) = expr.kind else {
                    return Err(DslError::parse("only plain names can be updated", expr.span));
                };
                let value = self.testlist()?;
                StmtKind::AugAssign { target, op, value }
            } else if self.eat_op("=") {
                let target = to_target(&expr)?;
                let value = self.testlist()?;
                if self.at_op("=") {
                    return Err(DslError::parse("chained assignment is not supported", self.span()));
                }
                StmtKind::Assign { target, value }
            } else {
                StmtKind::Expr(expr)
            }
        };
        Ok(Stmt {
            kind,
            span: start.to(self.prev_span()),
        })
    }

    fn target_list(&mut self) -> Result<Target, DslError> {
        let start = self.span();
        let mut items = vec![self.target_atom()?];
        let mut trailing = false;
        while self.eat_op(",") {
            if self.at_kw("in") || self.at_op("=") {
                trailing = true;
                break;
            }
            items.push(self.target_atom()?);
        }
        if items.len() == 1 && !trailing {
            Ok(items.pop().unwrap())
        } else if items.is_empty() {
            Err(DslError::parse("empty target", start))
        } else {
            Ok(Target::Tuple(items))
        }
    }

    fn target_atom(&mut self) -> Result<Target, DslError> {
        if self.eat_op("(") {
            let t = self.target_list()?;
            self.expect_op(")")?;
            return Ok(match t {
                Target::Name(_) => t,
                tuple => tuple,
            });
        }
        Ok(Target::Name(self.name()?))
    }

    // ----- expressions

    fn testlist(&mut self) -> Result<Expr, DslError> {
        let first = self.test()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let start = first.span;
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.starts_expr() {
                items.push(self.test()?);
            } else {
                break;
            }
        }
        Ok(Expr {
            kind: ExprKind::Tuple(items),
            span: start.to(self.prev_span()),
        })
    }

    fn starts_expr(&self) -> bool {
        match self.peek() {
            Tok::Name(n) => !RESERVED.contains(&n.as_str())
                || matches!(n.as_str(), "not" | "lambda" | "True" | "False" | "None"),
            Tok::Int(_) | Tok::Float(_) | Tok::Str(_) | Tok::FStr(_) => true,
            Tok::Op(o) => matches!(*o, "(" | "[" | "{" | "-" | "+"),
            _ => false,
        }
    }

    fn test(&mut self) -> Result<Expr, DslError> {
        self.nested(|p| p.test_inner())
    }

    fn test_inner(&mut self) -> Result<Expr, DslError> {
        if self.at_kw("lambda") {
            return self.lambda();
        }
        let start = self.span();
        let body = self.or_test()?;
        if self.eat_kw("if") {
            let test = self.or_test()?;
            self.expect_kw("else")?;
            let orelse = self.test()?;
            return Ok(Expr {
                kind: ExprKind::IfExp {
                    test: Box::new(test),
                    body: Box::new(body),
                    orelse: Box::new(orelse),
                },
                span: start.to(self.prev_span()),
            });
        }
        Ok(body)
    }

    fn lambda(&mut self) -> Result<Expr, DslError> {
        let start = self.span();
        self.expect_kw("lambda")?;
        let mut params = Vec::new();
        if !self.at_op(":") {
            loop {
                let n = self.name()?;
                if params.contains(&n) {
                    return Err(DslError::parse(format!("duplicate parameter `{n}`"), self.prev_span()));
                }
                params.push(n);
                if !self.eat_op(",") {
                    break;
                }
            }
        }
        self.expect_op(":")?;
        let body = self.test()?;
        Ok(Expr {
            kind: ExprKind::Lambda {
                params,
                body: Box::new(body),
            },
            span: start.to(self.prev_span()),
        })
    }

    fn or_test(&mut self) -> Result<Expr, DslError> {
        let mut left = self.and_test()?;
        while self.eat_kw("or") {
            let right = self.and_test()?;
            let span = left.span.to(right.span);
            left = Expr {
                kind: ExprKind::Or(Box::new(left), Box::new(right)),
                span,
            };
        }
        Ok(left)
    }

    fn and_test(&mut self) -> Result<Expr, DslError> {
        let mut left = self.not_test()?;
        while self.eat_kw("and") {
            let right = self.not_test()?;
            let span = left.span.to(right.span);
            left = Expr {
                kind: ExprKind::And(Box::new(left), Box::new(right)),
                span,
            };
        }
        Ok(left)
    }

    fn not_test(&mut self) -> Result<Expr, DslError> {
        let start = self.span();
        if self.eat_kw("not") {
            let inner = self.nested(|p| p.not_test())?;
            let span = start.to(inner.span);
            return Ok(Expr {
                kind: ExprKind::Unary(UnaryOp::Not, Box::new(inner)),
                span,
            });
        }
        self.comparison()
    }

    fn comp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            t if is_kw(t, "in") => CmpOp::In,
            t if is_kw(t, "not") && is_kw(self.peek_at(1), "in") => {
                self.pos += 2;
                return Some(CmpOp::NotIn);
            }
            t if is_kw(t, "is") => {
                if is_kw(self.peek_at(1), "not") {
                    self.pos += 2;
                    return Some(CmpOp::IsNot);
                }
                CmpOp::Is
            }
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    fn comparison(&mut self) -> Result<Expr, DslError> {
        let left = self.arith()?;
        let mut ops = Vec::new();
        while let Some(op) = self.comp_op() {
            ops.push((op, self.arith()?));
        }
        if ops.is_empty() {
            return Ok(left);
        }
        let span = left.span.to(ops.last().unwrap().1.span);
        Ok(Expr {
            kind: ExprKind::Compare {
                left: Box::new(left),
                ops,
            },
            span,
        })
    }

    fn arith(&mut self) -> Result<Expr, DslError> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op("+") => BinOp::Add,
                Tok::Op("-") => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let right = self.term()?;
            let span = left.span.to(right.span);
            left = Expr {
                kind: ExprKind::Binary(op, Box::new(left), Box::new(right)),
                span,
            };
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut left = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Op("*") => BinOp::Mul,
                Tok::Op("/") => BinOp::Div,
                Tok::Op("//") => BinOp::FloorDiv,
                Tok::Op("%") => BinOp::Mod,
                _ => break,
            };
            self.pos += 1;
            let right = self.factor()?;
            let span = left.span.to(right.span);
            left = Expr {
                kind: ExprKind::Binary(op, Box::new(left), Box::new(right)),
                span,
            };
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Expr, DslError> {
        let start = self.span();
        let op = match self.peek() {
            Tok::Op("-") => Some(UnaryOp::Neg),
            Tok::Op("+") => Some(UnaryOp::Pos),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let inner = self.nested(|p| p.factor())?;
            let span = start.to(inner.span);
            return Ok(Expr {
                kind: ExprKind::Unary(op, Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, DslError> {
        let base = self.postfix()?;
        if self.eat_op("**") {
            let exp = self.nested(|p| p.factor())?;
            let span = base.span.to(exp.span);
            return Ok(Expr {
                kind: ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(exp)),
                span,
            });
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, DslError> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op(".") {
                let span = self.span();
                let attr = match self.peek().clone() {
                    Tok::Name(n) => {
                        self.pos += 1;
                        n
                    }
                    _ => return Err(DslError::parse("expected attribute name", span)),
                };
                if attr.starts_with("__") {
                    return Err(DslError::new(
                        DslErrorKind::ForbiddenCall,
                        format!("access to dunder attribute `{attr}` is not allowed"),
                    )
                    .at(span));
                }
                let span = e.span.to(self.prev_span());
                e = Expr {
                    kind: ExprKind::Attr(Box::new(e), attr),
                    span,
                };
            } else if self.eat_op("(") {
                let (args, kwargs) = self.call_args()?;
                let span = e.span.to(self.prev_span());
                e = Expr {
                    kind: ExprKind::Call {
                        func: Box::new(e),
                        args,
                        kwargs,
                    },
                    span,
                };
            } else if self.eat_op("[") {
                e = self.subscript(e)?;
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn call_args(&mut self) -> Result<(Vec<Expr>, Vec<(String, Expr)>), DslError> {
        let mut args = Vec::new();
        let mut kwargs: Vec<(String, Expr)> = Vec::new();
        while !self.eat_op(")") {
            if self.at_op("*") || self.at_op("**") {
                return Err(DslError::parse("argument unpacking is not supported", self.span()));
            }
            if matches!(self.peek(), Tok::Name(_)) && matches!(self.peek_at(1), Tok::Op("=")) {
                let name = self.name()?;
                self.pos += 1;
                if kwargs.iter().any(|(k, _)| *k == name) {
                    return Err(DslError::parse(format!("repeated keyword `{name}`"), self.prev_span()));
                }
                kwargs.push((name, self.test()?));
            } else {
                if !kwargs.is_empty() {
                    return Err(DslError::parse("positional argument after keyword argument", self.span()));
                }
                let arg = self.test()?;
                if self.at_kw("for") {
                    let gens = self.comp_for()?;
                    let span = arg.span.to(self.prev_span());
                    args.push(Expr {
                        kind: ExprKind::Comp {
                            kind: CompKind::Gen,
                            elt: Box::new(arg),
                            generators: gens,
                        },
                        span,
                    });
                } else {
                    args.push(arg);
                }
            }
            if !self.eat_op(",") {
                self.expect_op(")")?;
                break;
            }
        }
        Ok((args, kwargs))
    }

    fn subscript(&mut self, value: Expr) -> Result<Expr, DslError> {
        let slice_part = |p: &mut Parser| -> Result<Option<Box<Expr>>, DslError> {
            if p.at_op(":") || p.at_op("]") {
                Ok(None)
            } else {
                Ok(Some(Box::new(p.test()?)))
            }
        };
        let lower = slice_part(self)?;
        if self.eat_op(":") {
            let upper = slice_part(self)?;
            let step = if self.eat_op(":") { slice_part(self)? } else { None };
            self.expect_op("]")?;
            let span = value.span.to(self.prev_span());
            return Ok(Expr {
                kind: ExprKind::Slice {
                    value: Box::new(value),
                    lower,
                    upper,
                    step,
                },
                span,
            });
        }
        let Some(first) = lower else {
            return Err(DslError::parse("empty subscript", self.span()));
        };
        let index = if self.at_op(",") {
            let start = first.span;
            let mut items = vec![*first];
            while self.eat_op(",") {
                if self.at_op("]") {
                    break;
                }
                items.push(self.test()?);
            }
            Expr {
                kind: ExprKind::Tuple(items),
                span: start.to(self.prev_span()),
            }
        } else {
            *first
        };
        self.expect_op("]")?;
        let span = value.span.to(self.prev_span());
        Ok(Expr {
            kind: ExprKind::Index(Box::new(value), Box::new(index)),
            span,
        })
    }

    fn comp_for(&mut self) -> Result<Vec<Generator>, DslError> {
        let mut gens = Vec::new();
        while self.eat_kw("for") {
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.or_test()?;
            let mut ifs = Vec::new();
            while self.eat_kw("if") {
                ifs.push(self.or_test()?);
            }
            gens.push(Generator { target, iter, ifs });
        }
        Ok(gens)
    }

    fn atom(&mut self) -> Result<Expr, DslError> {
        let start = self.span();
        let tok = self.advance();
        let lit = |kind| Ok(Expr { kind, span: start });
        match tok.tok {
            Tok::Int(i) => lit(ExprKind::Lit(Literal::Int(i))),
            Tok::Float(f) => lit(ExprKind::Lit(Literal::Float(f))),
            Tok::Str(_) | Tok::FStr(_) => {
                let mut parts: Vec<FPart> = Vec::new();
                let mut is_f = false;
                let mut push = |t: Tok, span: Span, parts: &mut Vec<FPart>| -> Result<(), DslError> {
                    match t {
                        Tok::Str(s) => parts.push(FPart::Lit(s)),
                        Tok::FStr(s) => {
                            is_f = true;
                            parts.extend(parse_fstring(&s, span)?);
                        }
                        _ => unreachable!(),
                    }
                    Ok(())
                };
                push(tok.tok, tok.span, &mut parts)?;
                while matches!(self.peek(), Tok::Str(_) | Tok::FStr(_)) {
                    let t = self.advance();
                    push(t.tok, t.span, &mut parts)?;
                }
                let span = start.to(self.prev_span());
                // merge adjacent literal parts
                let mut merged: Vec<FPart> = Vec::new();
                for p in parts {
                    match (merged.last_mut(), p) {
                        (Some(FPart::Lit(a)), FPart::Lit(b)) => a.push_str(&b),
                        (_, p) => merged.push(p),
                    }
                }
                if !is_f {
                    let s = match merged.pop() {
                        Some(FPart::Lit(s)) => s,
                        _ => String::new(),
                    };
                    return Ok(Expr {
                        kind: ExprKind::Lit(Literal::Str(s)),
                        span,
                    });
                }
                Ok(Expr {
                    kind: ExprKind::FString(merged),
                    span,
                })
            }
            Tok::Name(n) => match n.as_str() {
                "True" => lit(ExprKind::Lit(Literal::Bool(true))),
                "False" => lit(ExprKind::Lit(Literal::Bool(false))),
                "None" => lit(ExprKind::Lit(Literal::None)),
                "import" | "from" => Err(DslError::parse("imports are not allowed", start)),
                _ if RESERVED.contains(&n.as_str()) => {
                    Err(DslError::parse(format!("unexpected keyword `{n}`"), start))
                }
                _ => lit(ExprKind::Name(n)),
            },
            Tok::Op("(") => {
                if self.eat_op(")") {
                    return Ok(Expr {
                        kind: ExprKind::Tuple(vec![]),
                        span: start.to(self.prev_span()),
                    });
                }
                let first = self.test()?;
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op(")")?;
                    return Ok(Expr {
                        kind: ExprKind::Comp {
                            kind: CompKind::Gen,
                            elt: Box::new(first),
                            generators,
                        },
                        span: start.to(self.prev_span()),
                    });
                }
                if self.eat_op(")") {
                    // parenthesized expression keeps its inner span
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.test()?);
                }
                self.expect_op(")")?;
                Ok(Expr {
                    kind: ExprKind::Tuple(items),
                    span: start.to(self.prev_span()),
                })
            }
            Tok::Op("[") => {
                if self.eat_op("]") {
                    return Ok(Expr {
                        kind: ExprKind::List(vec![]),
                        span: start.to(self.prev_span()),
                    });
                }
                let first = self.test()?;
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op("]")?;
                    return Ok(Expr {
                        kind: ExprKind::Comp {
                            kind: CompKind::List,
                            elt: Box::new(first),
                            generators,
                        },
                        span: start.to(self.prev_span()),
                    });
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.test()?);
                }
                self.expect_op("]")?;
                Ok(Expr {
                    kind: ExprKind::List(items),
                    span: start.to(self.prev_span()),
                })
            }
            Tok::Op("{") => {
                if self.eat_op("}") {
                    return Ok(Expr {
                        kind: ExprKind::Dict(vec![]),
                        span: start.to(self.prev_span()),
                    });
                }
                let first = self.test()?;
                if self.eat_op(":") {
                    let value = self.test()?;
                    if self.at_kw("for") {
                        let generators = self.comp_for()?;
                        self.expect_op("}")?;
                        return Ok(Expr {
                            kind: ExprKind::DictComp {
                                key: Box::new(first),
                                value: Box::new(value),
                                generators,
                            },
                            span: start.to(self.prev_span()),
                        });
                    }
                    let mut pairs = vec![(first, value)];
                    while self.eat_op(",") {
                        if self.at_op("}") {
                            break;
                        }
                        let k = self.test()?;
                        self.expect_op(":")?;
                        let v = self.test()?;
                        pairs.push((k, v));
                    }
                    self.expect_op("}")?;
                    return Ok(Expr {
                        kind: ExprKind::Dict(pairs),
                        span: start.to(self.prev_span()),
                    });
                }
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op("}")?;
                    return Ok(Expr {
                        kind: ExprKind::Comp {
                            kind: CompKind::Set,
                            elt: Box::new(first),
                            generators,
                        },
                        span: start.to(self.prev_span()),
                    });
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("}") {
                        break;
                    }
                    items.push(self.test()?);
                }
                self.expect_op("}")?;
                Ok(Expr {
                    kind: ExprKind::Set(items),
                    span: start.to(self.prev_span()),
                })
            }
            other => {
                self.pos -= 1;
                let _ = other;
                Err(DslError::parse(format!("unexpected {}", self.describe()), start))
            }
        }
    }
}

fn to_target(e: &Expr) -> Result<Target, DslError> {
    match &e.kind {
        ExprKind::Name(n) => Ok(Target::Name(n.clone())),
        ExprKind::Tuple(items) | ExprKind::List(items) if !items.is_empty() => {
            Ok(Target::Tuple(items.iter().map(to_target).collect::<Result<_, _>>()?))
        }
        ExprKind::Attr(..) | ExprKind::Index(..) | ExprKind::Slice { .. } => Err(DslError::parse(
            "assignment to attributes or items is not allowed",
            e.span,
        )),
        _ => Err(DslError::parse("invalid assignment target", e.span)),
    }
}

/// Parses `body` as the contents of an f-string.
pub(crate) fn parse_template(body: &str) -> Result<Expr, DslError> {
    let span = Span::new(1, 1, 1, body.chars().count() + 1);
    Ok(Expr {
        kind: ExprKind::FString(parse_fstring(body, span)?),
        span,
    })
}

fn parse_fstring(body: &str, span: Span) -> Result<Vec<FPart>, DslError> {
    let chars: Vec<char> = body.chars().collect();
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '{' {
            if chars.get(i + 1) == Some(&'{') {
                lit.push('{');
                i += 2;
                continue;
            }
            // find the matching close brace at depth 0, skipping strings
            let mut depth = 0;
            let mut j = i + 1;
            let mut quote: Option<char> = None;
            let mut colon: Option<usize> = None;
            while j < chars.len() {
                let d = chars[j];
                if let Some(q) = quote {
                    if d == q {
                        quote = None;
                    }
                } else {
                    match d {
                        '\'' | '"' => quote = Some(d),
                        '(' | '[' | '{' => depth += 1,
                        ')' | ']' => depth -= 1,
                        '}' if depth == 0 => break,
                        '}' => depth -= 1,
                        ':' if depth == 0 && colon.is_none() => colon = Some(j),
                        _ => {}
                    }
                }
                j += 1;
            }
            if j >= chars.len() {
                return Err(DslError::parse("unterminated `{` in f-string", span));
            }
            let expr_end = colon.unwrap_or(j);
            let mut expr_src: String = chars[i + 1..expr_end].iter().collect();
            // conversions like !r are accepted and ignored
            if let Some(stripped) = expr_src
                .strip_suffix("!r")
                .or_else(|| expr_src.strip_suffix("!s"))
                .or_else(|| expr_src.strip_suffix("!a"))
            {
                expr_src = stripped.to_string();
            }
            if expr_src.trim().is_empty() {
                return Err(DslError::parse("empty expression in f-string", span));
            }
            let expr = parse_expression(expr_src.trim()).map_err(|mut e| {
                e.span = Some(span);
                e
            })?;
            let mut expr = expr;
            relocate(&mut expr, span);
            let spec = colon.map(|c| chars[c + 1..j].iter().collect::<String>());
            if !lit.is_empty() {
                parts.push(FPart::Lit(std::mem::take(&mut lit)));
            }
            parts.push(FPart::Expr { expr, spec });
            i = j + 1;
        } else if c == '}' {
            if chars.get(i + 1) == Some(&'}') {
                lit.push('}');
                i += 2;
                continue;
            }
            return Err(DslError::parse("single `}` in f-string", span));
        } else {
            lit.push(c);
            i += 1;
        }
    }
    if !lit.is_empty() {
        parts.push(FPart::Lit(lit));
    }
    Ok(parts)
}

/// Expressions inside f-strings report the whole string's location.
fn relocate(e: &mut Expr, span: Span) {
    fn visit(e: &mut Expr, span: Span) {
        e.span = span;
        match &mut e.kind {
            ExprKind::Lit(_) | ExprKind::Name(_) => {}
            ExprKind::FString(parts) => {
                for p in parts {
                    if let FPart::Expr { expr, .. } = p {
                        visit(expr, span);
                    }
                }
            }
            ExprKind::List(items) | ExprKind::Tuple(items) | ExprKind::Set(items) => {
                items.iter_mut().for_each(|e| visit(e, span))
            }
            ExprKind::Dict(pairs) => pairs.iter_mut().for_each(|(k, v)| {
                visit(k, span);
                visit(v, span)
            }),
            ExprKind::Attr(v, _) => visit(v, span),
            ExprKind::Call { func, args, kwargs } => {
                visit(func, span);
                args.iter_mut().for_each(|e| visit(e, span));
                kwargs.iter_mut().for_each(|(_, e)| visit(e, span));
            }
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) | ExprKind::And(a, b) | ExprKind::Or(a, b) => {
                visit(a, span);
                visit(b, span);
            }
            ExprKind::Slice { value, lower, upper, step } => {
                visit(value, span);
                for e in [lower, upper, step].into_iter().flatten() {
                    visit(e, span);
                }
            }
            ExprKind::Unary(_, e) => visit(e, span),
            ExprKind::Compare { left, ops } => {
                visit(left, span);
                ops.iter_mut().for_each(|(_, e)| visit(e, span));
            }
            ExprKind::IfExp { test, body, orelse } => {
                visit(test, span);
                visit(body, span);
                visit(orelse, span);
            }
            ExprKind::Lambda { body, .. } => visit(body, span),
            ExprKind::Comp { elt, generators, .. } => {
                visit(elt, span);
                for g in generators {
                    visit(&mut g.iter, span);
                    g.ifs.iter_mut().for_each(|e| visit(e, span));
                }
            }
            ExprKind::DictComp { key, value, generators } => {
                visit(key, span);
                visit(value, span);
                for g in generators {
                    visit(&mut g.iter, span);
                    g.ifs.iter_mut().for_each(|e| visit(e, span));
                }
            }
        }
    }
    visit(e, span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(src: &str) -> String {
        let p = parse_program(src).unwrap_or_else(|e| panic!("{src}: {e}"));
        let canon = p.to_string();
        let again = parse_program(&canon).unwrap_or_else(|e| panic!("canonical {canon}: {e}"));
        assert_eq!(canon, again.to_string(), "canonical form not stable for {src}");
        canon
    }

    #[test]
    fn parses_simple_assert() {
        let p = parse_program("assert 1 + 1 == 2").unwrap();
        assert_eq!(p.body.len(), 1);
        assert!(matches!(p.body[0].kind, StmtKind::Assert { .. }));
    }

    #[test]
    fn parses_generator_call() {
        let c = roundtrip("assert subtotal == sum(item.price for item in cart.items)");
        assert_eq!(c, "assert subtotal == sum(item.price for item in cart.items)\n");
    }

    #[test]
    fn rejects_imports() {
        for src in ["import os", "from os import path", "x = 1\nimport sys"] {
            let e = parse_program(src).unwrap_err();
            assert_eq!(e.kind, DslErrorKind::ParseError, "{src}");
        }
    }

    #[test]
    fn dunder_attribute_is_forbidden() {
        let e = parse_program("assert ().__class__").unwrap_err();
        assert_eq!(e.kind, DslErrorKind::ForbiddenCall);
    }

    #[test]
    fn rejects_unsupported_statements() {
        for src in ["def f():\n    pass", "return 1", "x.y = 1", "a = b = 1", "try:\n    pass", "break"] {
            assert!(parse_program(src).is_err(), "{src}");
        }
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(roundtrip("assert (a+b)*c>=d"), "assert (a + b) * c >= d\n");
        assert_eq!(roundtrip("assert not (a and b) or c"), "assert not (a and b) or c\n");
        assert_eq!(roundtrip("assert x not in [1,2,]"), "assert x not in [1, 2]\n");
        assert_eq!(roundtrip("assert -2 ** 2 == -4"), "assert -2 ** 2 == -4\n");
        assert_eq!(roundtrip("assert (-2) ** 2 == 4"), "assert (-2) ** 2 == 4\n");
        assert_eq!(roundtrip("assert a - (b - c) == a - b + c"), "assert a - (b - c) == a - b + c\n");
        assert_eq!(roundtrip("x = 1, 2"), "x = (1, 2)\n");
        assert_eq!(roundtrip("assert f'{a.b} and {{c}}'"), "assert f\"{a.b} and {{c}}\"\n");
        assert_eq!(roundtrip("assert 'a' 'b'"), "assert \"ab\"\n");
    }

    #[test]
    fn appendix_cart_program_roundtrips() {
        let src = r#"
added = session.history[-1].extract("Get product detail", schema=Product)
current = session.state.extract("Get cart summary", schema=Cart).items
prior = session.history[-2].extract("Get cart summary", schema=Cart).items

for prod in prior + [added]:
    match = next((p for p in current if p.title == prod.title), None)
    assert match is not None, f"Product {prod.title} missing in current cart"
    assert match.quantity == prod.quantity, f"Quantity mismatch for {prod.title}"
    assert match.price == prod.price, f"Price mismatch for {prod.title}"

prior_subtotal = sum(p.price * p.quantity for p in prior)
added_total = added.price * added.quantity
current_subtotal = sum(p.price * p.quantity for p in current)
assert current_subtotal == prior_subtotal + added_total, "Cart subtotal mismatch"
"#;
        roundtrip(src);
    }

    #[test]
    fn control_flow_roundtrips() {
        roundtrip("if a:\n    x = 1\nelif b:\n    x = 2\nelse:\n    x = 3\nwhile x < 3:\n    x += 1\n    if x == 2: break\n");
        roundtrip("for i, (a, b) in enumerate(zip(xs, ys)):\n    continue\n");
        roundtrip("f = lambda a, b: a if a > b else b\nassert f(1, 2) == 2\n");
        roundtrip("assert {k: v for k, v in d.items() if v} == {1: 2}\nassert {x for x in s} == {1}\n");
        roundtrip("assert xs[1:] == xs[::2][:-1]\nassert d[1, 2] == 3\n");
    }

    #[test]
    fn spans_point_at_source() {
        let src = "x = 1\nassert x == 2";
        let p = parse_program(src).unwrap();
        let StmtKind::Assert { test, .. } = &p.body[1].kind else { panic!() };
        assert_eq!(test.span.slice(src), "x == 2");
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let src = format!("assert {}1{}", "(".repeat(5000), ")".repeat(5000));
        assert_eq!(parse_program(&src).unwrap_err().kind, DslErrorKind::ParseError);
        let src = format!("assert {}1", "-".repeat(5000));
        assert_eq!(parse_program(&src).unwrap_err().kind, DslErrorKind::ParseError);
    }

    #[test]
    fn reports_error_location() {
        let e = parse_program("assert (1 +").unwrap_err();
        assert_eq!(e.kind, DslErrorKind::ParseError);
        assert!(e.span.is_some());
    }
}

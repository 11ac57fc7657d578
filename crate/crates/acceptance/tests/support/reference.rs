//! Independent recursive evaluator over a typed expression fragment, plus a seeded generator.
//!
//! The evaluator works on the generated tree directly and never sees source text, so it shares
//! nothing with the DSL parser or interpreter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Int,
    Float,
    Bool,
    Str,
    List,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bin {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    NotIn,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    List(Vec<Expr>),
    Bin(Bin, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Chain(Box<Expr>, Vec<(Cmp, Expr)>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(&'static str, Vec<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Slice(Box<Expr>, Option<i64>, Option<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Val {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    List(Vec<Val>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    TypeMismatch,
    Runtime,
}

impl Fault {
    pub fn kind(self) -> &'static str {
        match self {
            Fault::TypeMismatch => "type_mismatch",
            Fault::Runtime => "runtime_fault",
        }
    }
}

type R = Result<Val, Fault>;

fn num(v: &Val) -> Option<f64> {
    match v {
        Val::Int(i) => Some(*i as f64),
        Val::Float(f) => Some(*f),
        _ => None,
    }
}

pub fn truthy(v: &Val) -> bool {
    match v {
        Val::Int(i) => *i != 0,
        Val::Float(f) => *f != 0.0,
        Val::Bool(b) => *b,
        Val::Str(s) => !s.is_empty(),
        Val::List(l) => !l.is_empty(),
    }
}

fn floor_div(a: i64, b: i64) -> i64 {
    let q = a / b;
    if a % b != 0 && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn binary(op: Bin, a: Val, b: Val) -> R {
    use Val::*;
    match (op, &a, &b) {
        (Bin::Add, Str(x), Str(y)) => Ok(Str(format!("{x}{y}"))),
        (Bin::Add, List(x), List(y)) => Ok(List(x.iter().chain(y).cloned().collect())),
        (Bin::Add | Bin::Sub | Bin::Mul | Bin::FloorDiv | Bin::Mod | Bin::Pow, Int(x), Int(y)) => {
            let (x, y) = (*x, *y);
            let r = match op {
                Bin::Add => x.checked_add(y),
                Bin::Sub => x.checked_sub(y),
                Bin::Mul => x.checked_mul(y),
                Bin::FloorDiv | Bin::Mod if y == 0 => return Err(Fault::Runtime),
                Bin::FloorDiv => Some(floor_div(x, y)),
                Bin::Mod => Some(x - y * floor_div(x, y)),
                Bin::Pow => u32::try_from(y).ok().and_then(|e| x.checked_pow(e)),
                Bin::Div => unreachable!(),
            };
            r.map(Int).ok_or(Fault::Runtime)
        }
        (Bin::Div, _, _) => match (num(&a), num(&b)) {
            (Some(_), Some(y)) if y == 0.0 => Err(Fault::Runtime),
            (Some(x), Some(y)) => Ok(Float(x / y)),
            _ => Err(Fault::TypeMismatch),
        },
        (Bin::Add | Bin::Sub | Bin::Mul, _, _) => match (num(&a), num(&b)) {
            (Some(x), Some(y)) => Ok(Float(match op {
                Bin::Add => x + y,
                Bin::Sub => x - y,
                _ => x * y,
            })),
            _ => Err(Fault::TypeMismatch),
        },
        _ => Err(Fault::TypeMismatch),
    }
}

fn equal(a: &Val, b: &Val) -> Result<bool, Fault> {
    match (a, b) {
        (Val::Str(x), Val::Str(y)) => Ok(x == y),
        (Val::Bool(x), Val::Bool(y)) => Ok(x == y),
        (Val::List(x), Val::List(y)) => {
            if x.len() != y.len() {
                return Ok(false);
            }
            for (p, q) in x.iter().zip(y) {
                if !equal(p, q)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        _ => match (num(a), num(b)) {
            (Some(x), Some(y)) => Ok(x == y),
            _ => Err(Fault::TypeMismatch),
        },
    }
}

fn compare(op: Cmp, a: &Val, b: &Val) -> Result<bool, Fault> {
    match op {
        Cmp::Eq => equal(a, b),
        Cmp::Ne => equal(a, b).map(|e| !e),
        Cmp::In | Cmp::NotIn => {
            let found = match (a, b) {
                (Val::Str(x), Val::Str(y)) => y.contains(x.as_str()),
                (_, Val::List(items)) => {
                    let mut hit = false;
                    for i in items {
                        if equal(a, i)? {
                            hit = true;
                            break;
                        }
                    }
                    hit
                }
                _ => return Err(Fault::TypeMismatch),
            };
            Ok(found == (op == Cmp::In))
        }
        _ => {
            let ord = match (a, b) {
                (Val::Str(x), Val::Str(y)) => x.cmp(y),
                _ => match (num(a), num(b)) {
                    (Some(x), Some(y)) => x.partial_cmp(&y).ok_or(Fault::Runtime)?,
                    _ => return Err(Fault::TypeMismatch),
                },
            };
            Ok(match op {
                Cmp::Lt => ord.is_lt(),
                Cmp::Le => ord.is_le(),
                Cmp::Gt => ord.is_gt(),
                _ => ord.is_ge(),
            })
        }
    }
}

fn index_of(len: usize, i: i64) -> Result<usize, Fault> {
    let j = if i < 0 { i + len as i64 } else { i };
    if j < 0 || j >= len as i64 {
        return Err(Fault::Runtime);
    }
    Ok(j as usize)
}

fn clamp_bound(len: usize, b: Option<i64>, default: usize) -> usize {
    match b {
        None => default,
        Some(i) if i < 0 => (i + len as i64).max(0) as usize,
        Some(i) => (i as usize).min(len),
    }
}

pub fn eval(e: &Expr) -> R {
    match e {
        Expr::Int(i) => Ok(Val::Int(*i)),
        Expr::Float(f) => Ok(Val::Float(*f)),
        Expr::Bool(b) => Ok(Val::Bool(*b)),
        Expr::Str(s) => Ok(Val::Str(s.clone())),
        Expr::List(xs) => Ok(Val::List(xs.iter().map(eval).collect::<Result<_, _>>()?)),
        Expr::Bin(op, a, b) => {
            let x = eval(a)?;
            let y = eval(b)?;
            binary(*op, x, y)
        }
        Expr::Neg(a) => match eval(a)? {
            Val::Int(i) => i.checked_neg().map(Val::Int).ok_or(Fault::Runtime),
            Val::Float(f) => Ok(Val::Float(-f)),
            _ => Err(Fault::TypeMismatch),
        },
        Expr::Not(a) => Ok(Val::Bool(!truthy(&eval(a)?))),
        Expr::And(a, b) => {
            let x = eval(a)?;
            if truthy(&x) {
                eval(b)
            } else {
                Ok(x)
            }
        }
        Expr::Or(a, b) => {
            let x = eval(a)?;
            if truthy(&x) {
                Ok(x)
            } else {
                eval(b)
            }
        }
        Expr::Chain(first, rest) => {
            let mut left = eval(first)?;
            for (op, e) in rest {
                let right = eval(e)?;
                if !compare(*op, &left, &right)? {
                    return Ok(Val::Bool(false));
                }
                left = right;
            }
            Ok(Val::Bool(true))
        }
        Expr::Ternary(c, a, b) => {
            if truthy(&eval(c)?) {
                eval(a)
            } else {
                eval(b)
            }
        }
        Expr::Call(name, args) => {
            let vals: Vec<Val> = args.iter().map(eval).collect::<Result<_, _>>()?;
            call(name, &vals)
        }
        Expr::Index(a, i) => {
            let base = eval(a)?;
            let idx = match eval(i)? {
                Val::Int(i) => i,
                _ => return Err(Fault::TypeMismatch),
            };
            match base {
                Val::List(items) => Ok(items[index_of(items.len(), idx)?].clone()),
                Val::Str(s) => {
                    let chars: Vec<char> = s.chars().collect();
                    Ok(Val::Str(chars[index_of(chars.len(), idx)?].to_string()))
                }
                _ => Err(Fault::TypeMismatch),
            }
        }
        Expr::Slice(a, lo, hi) => match eval(a)? {
            Val::List(items) => {
                let s = clamp_bound(items.len(), *lo, 0);
                let t = clamp_bound(items.len(), *hi, items.len());
                Ok(Val::List(if s < t { items[s..t].to_vec() } else { Vec::new() }))
            }
            _ => Err(Fault::TypeMismatch),
        },
    }
}

fn call(name: &str, args: &[Val]) -> R {
    match (name, args) {
        ("len", [Val::Str(s)]) => Ok(Val::Int(s.chars().count() as i64)),
        ("len", [Val::List(l)]) => Ok(Val::Int(l.len() as i64)),
        ("abs", [Val::Int(i)]) => i.checked_abs().map(Val::Int).ok_or(Fault::Runtime),
        ("abs", [Val::Float(f)]) => Ok(Val::Float(f.abs())),
        ("str", [Val::Int(i)]) => Ok(Val::Str(i.to_string())),
        ("sum", [Val::List(l)]) => {
            let mut acc = Val::Int(0);
            for v in l {
                acc = binary(Bin::Add, acc, v.clone())?;
            }
            Ok(acc)
        }
        ("min" | "max", [Val::List(l)]) => {
            let mut it = l.iter();
            let mut best = it.next().ok_or(Fault::Runtime)?.clone();
            for v in it {
                let better = if name == "min" {
                    compare(Cmp::Lt, v, &best)?
                } else {
                    compare(Cmp::Gt, v, &best)?
                };
                if better {
                    best = v.clone();
                }
            }
            Ok(best)
        }
        _ => Err(Fault::TypeMismatch),
    }
}

/// Expected status of `assert <expr>`: `pass`, `fail` or an error kind.
pub fn expected_status(e: &Expr) -> &'static str {
    match eval(e) {
        Ok(v) if truthy(&v) => "pass",
        Ok(_) => "fail",
        Err(f) => f.kind(),
    }
}

// ---------------------------------------------------------------------------
// Rendering

fn float_lit(f: f64) -> String {
    if f.fract() == 0.0 {
        format!("{f:.1}")
    } else {
        format!("{f}")
    }
}

pub fn render(e: &Expr) -> String {
    match e {
        Expr::Int(i) if *i < 0 => format!("({i})"),
        Expr::Int(i) => i.to_string(),
        Expr::Float(f) if *f < 0.0 => format!("({})", float_lit(*f)),
        Expr::Float(f) => float_lit(*f),
        Expr::Bool(b) => if *b { "True" } else { "False" }.to_string(),
        Expr::Str(s) => format!("\"{s}\""),
        Expr::List(xs) => format!("[{}]", xs.iter().map(render).collect::<Vec<_>>().join(", ")),
        Expr::Bin(op, a, b) => {
            let sym = match op {
                Bin::Add => "+",
                Bin::Sub => "-",
                Bin::Mul => "*",
                Bin::Div => "/",
                Bin::FloorDiv => "//",
                Bin::Mod => "%",
                Bin::Pow => "**",
            };
            format!("({} {sym} {})", render(a), render(b))
        }
        Expr::Neg(a) => format!("(-{})", render(a)),
        Expr::Not(a) => format!("(not {})", render(a)),
        Expr::And(a, b) => format!("({} and {})", render(a), render(b)),
        Expr::Or(a, b) => format!("({} or {})", render(a), render(b)),
        Expr::Chain(first, rest) => {
            let mut s = format!("({}", render(first));
            for (op, e) in rest {
                let sym = match op {
                    Cmp::Eq => "==",
                    Cmp::Ne => "!=",
                    Cmp::Lt => "<",
                    Cmp::Le => "<=",
                    Cmp::Gt => ">",
                    Cmp::Ge => ">=",
                    Cmp::In => "in",
                    Cmp::NotIn => "not in",
                };
                s.push_str(&format!(" {sym} {}", render(e)));
            }
            s.push(')');
            s
        }
        Expr::Ternary(c, a, b) => format!("({} if {} else {})", render(a), render(c), render(b)),
        Expr::Call(name, args) => format!("{name}({})", args.iter().map(render).collect::<Vec<_>>().join(", ")),
        Expr::Index(a, i) => format!("{}[{}]", render(a), render(i)),
        Expr::Slice(a, lo, hi) => {
            let b = |x: &Option<i64>| x.map(|v| v.to_string()).unwrap_or_default();
            format!("{}[{}:{}]", render(a), b(lo), b(hi))
        }
    }
}

// ---------------------------------------------------------------------------
// Generation

const WORDS: &[&str] = &["", "a", "ab", "ba", "abc", "b"];

pub struct Gen {
    rng: ChaCha8Rng,
    /// Probability of putting an operand of the wrong kind in a typed slot.
    pub ill_typed: f64,
}

impl Gen {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Gen { rng, ill_typed: 0.06 }
    }

    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        xs[self.rng.random_range(0..xs.len())]
    }

    fn slot(&mut self, ty: Ty, depth: u32) -> Expr {
        if self.rng.random_bool(self.ill_typed) {
            let other = match ty {
                Ty::Str => Ty::Int,
                _ => Ty::Str,
            };
            return self.expr(other, depth);
        }
        self.expr(ty, depth)
    }

    fn leaf(&mut self, ty: Ty) -> Expr {
        match ty {
            Ty::Int => Expr::Int(self.rng.random_range(-9..=9)),
            Ty::Float => Expr::Float(self.rng.random_range(-8..=8) as f64 / 2.0),
            Ty::Bool => Expr::Bool(self.rng.random_bool(0.5)),
            Ty::Str => Expr::Str(self.pick(WORDS).to_string()),
            Ty::List => {
                let n = self.rng.random_range(0..=4);
                Expr::List((0..n).map(|_| Expr::Int(self.rng.random_range(-9..=9))).collect())
            }
        }
    }

    pub fn expr(&mut self, ty: Ty, depth: u32) -> Expr {
        if depth == 0 || self.rng.random_bool(0.25) {
            return self.leaf(ty);
        }
        let d = depth - 1;
        let b = |e: Expr| Box::new(e);
        match ty {
            Ty::Int => match self.rng.random_range(0..12) {
                0 => Expr::Bin(Bin::Add, b(self.slot(Ty::Int, d)), b(self.slot(Ty::Int, d))),
                1 => Expr::Bin(Bin::Sub, b(self.slot(Ty::Int, d)), b(self.slot(Ty::Int, d))),
                2 => Expr::Bin(Bin::Mul, b(self.expr(Ty::Int, d)), b(self.expr(Ty::Int, d))),
                3 => Expr::Bin(Bin::FloorDiv, b(self.slot(Ty::Int, d)), b(self.expr(Ty::Int, d))),
                4 => Expr::Bin(Bin::Mod, b(self.expr(Ty::Int, d)), b(self.expr(Ty::Int, d))),
                5 => Expr::Bin(Bin::Pow, b(self.expr(Ty::Int, d)), b(Expr::Int(self.rng.random_range(0..=3)))),
                6 => Expr::Neg(b(self.slot(Ty::Int, d))),
                7 => {
                    let arg = if self.rng.random_bool(0.5) { self.slot(Ty::Str, d) } else { self.expr(Ty::List, d) };
                    Expr::Call("len", vec![arg])
                }
                8 => {
                    let f = self.pick(&["abs", "sum", "min", "max"]);
                    let arg = if f == "abs" { self.slot(Ty::Int, d) } else { self.expr(Ty::List, d) };
                    Expr::Call(f, vec![arg])
                }
                9 => Expr::Index(b(self.expr(Ty::List, d)), b(self.slot(Ty::Int, d))),
                10 => Expr::Ternary(b(self.expr(Ty::Bool, d)), b(self.expr(Ty::Int, d)), b(self.expr(Ty::Int, d))),
                _ => {
                    if self.rng.random_bool(0.5) {
                        Expr::And(b(self.expr(Ty::Int, d)), b(self.expr(Ty::Int, d)))
                    } else {
                        Expr::Or(b(self.expr(Ty::Int, d)), b(self.expr(Ty::Int, d)))
                    }
                }
            },
            Ty::Float => match self.rng.random_range(0..4) {
                0 => Expr::Bin(Bin::Div, b(self.slot(Ty::Int, d)), b(self.expr(Ty::Int, d))),
                1 => Expr::Bin(Bin::Add, b(self.expr(Ty::Float, d)), b(self.slot(Ty::Int, d))),
                2 => Expr::Bin(Bin::Mul, b(self.expr(Ty::Float, d)), b(self.expr(Ty::Int, d))),
                _ => Expr::Neg(b(self.expr(Ty::Float, d))),
            },
            Ty::Str => match self.rng.random_range(0..4) {
                0 => Expr::Bin(Bin::Add, b(self.expr(Ty::Str, d)), b(self.slot(Ty::Str, d))),
                1 => Expr::Index(b(self.expr(Ty::Str, d)), b(self.expr(Ty::Int, d))),
                2 => Expr::Call("str", vec![self.expr(Ty::Int, d)]),
                _ => Expr::Ternary(b(self.expr(Ty::Bool, d)), b(self.expr(Ty::Str, d)), b(self.expr(Ty::Str, d))),
            },
            Ty::List => match self.rng.random_range(0..3) {
                0 => Expr::Bin(Bin::Add, b(self.expr(Ty::List, d)), b(self.expr(Ty::List, d))),
                1 => {
                    let mut bound = || self.rng.random_bool(0.7).then(|| self.rng.random_range(-5..=5));
                    let (lo, hi) = (bound(), bound());
                    Expr::Slice(b(self.expr(Ty::List, d)), lo, hi)
                }
                _ => {
                    let n = self.rng.random_range(1..=3);
                    Expr::List((0..n).map(|_| self.expr(Ty::Int, d)).collect())
                }
            },
            Ty::Bool => match self.rng.random_range(0..9) {
                0 | 1 => {
                    let kind = self.pick(&[Ty::Int, Ty::Int, Ty::Float, Ty::Str]);
                    let n = self.rng.random_range(1..=2);
                    let first = self.expr(kind, d);
                    let ops: &[Cmp] = if kind == Ty::Str {
                        &[Cmp::Eq, Cmp::Ne, Cmp::Lt, Cmp::Ge]
                    } else {
                        &[Cmp::Eq, Cmp::Ne, Cmp::Lt, Cmp::Le, Cmp::Gt, Cmp::Ge]
                    };
                    let rest = (0..n)
                        .map(|_| {
                            let op = self.pick(ops);
                            let other = if kind == Ty::Float { Ty::Int } else { kind };
                            (op, self.slot(other, d))
                        })
                        .collect();
                    Expr::Chain(b(first), rest)
                }
                2 => {
                    let op = self.pick(&[Cmp::In, Cmp::NotIn]);
                    if self.rng.random_bool(0.5) {
                        Expr::Chain(b(self.expr(Ty::Int, d)), vec![(op, self.expr(Ty::List, d))])
                    } else {
                        let hay = if self.rng.random_bool(self.ill_typed) { self.expr(Ty::Int, d) } else { self.expr(Ty::Str, d) };
                        Expr::Chain(b(self.expr(Ty::Str, d)), vec![(op, hay)])
                    }
                }
                3 => Expr::Chain(b(self.expr(Ty::List, d)), vec![(self.pick(&[Cmp::Eq, Cmp::Ne]), self.expr(Ty::List, d))]),
                4 => {
                    let ty = self.pick(&[Ty::Bool, Ty::Int, Ty::Str, Ty::List]);
                    Expr::Not(b(self.expr(ty, d)))
                }
                5 => Expr::And(b(self.expr(Ty::Bool, d)), b(self.expr(Ty::Bool, d))),
                6 => Expr::Or(b(self.expr(Ty::Bool, d)), b(self.expr(Ty::Bool, d))),
                7 => Expr::Ternary(b(self.expr(Ty::Bool, d)), b(self.expr(Ty::Bool, d)), b(self.expr(Ty::Bool, d))),
                _ => Expr::Chain(
                    b(Expr::Call("len", vec![self.expr(Ty::List, d)])),
                    vec![(Cmp::Gt, Expr::Int(self.rng.random_range(0..3)))],
                ),
            },
        }
    }

    /// A top-level expression of any kind; `assert` tests its truthiness.
    pub fn program(&mut self) -> Expr {
        let ty = self.pick(&[Ty::Bool, Ty::Bool, Ty::Bool, Ty::Int, Ty::Str, Ty::List, Ty::Float]);
        self.expr(ty, 4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_semantics_match_python() {
        assert_eq!(floor_div(-7, 2), -4);
        assert_eq!(floor_div(7, -2), -4);
        assert_eq!(binary(Bin::Mod, Val::Int(-7), Val::Int(2)), Ok(Val::Int(1)));
        assert_eq!(binary(Bin::Mod, Val::Int(7), Val::Int(-2)), Ok(Val::Int(-1)));
    }
}

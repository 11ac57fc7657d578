//! Whitelisted functions and methods of builtin value types.

use std::cmp::Ordering;
use std::rc::Rc;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta, Timelike};

use crate::ast::format_float;
use crate::error::DslError;
use crate::interp::{dict_insert, Interp, R};
use crate::value::{contains, dict_get, Builtin, MatchValue, Value};

/// Every callable name a program can reach without a binding.
pub const FUNCTION_WHITELIST: [&str; 32] = [
    "len",
    "any",
    "all",
    "min",
    "max",
    "sum",
    "sorted",
    "set",
    "zip",
    "enumerate",
    "range",
    "abs",
    "round",
    "next",
    "reversed",
    "filter",
    "map",
    "str",
    "int",
    "float",
    "bool",
    "list",
    "tuple",
    "dict",
    "re.match",
    "re.search",
    "re.fullmatch",
    "re.findall",
    "datetime.strptime",
    "datetime.fromisoformat",
    "datetime.date.fromisoformat",
    "datetime.timedelta",
];

struct Args {
    name: &'static str,
    pos: Vec<Value>,
    kw: Vec<(String, Value)>,
}

impl Args {
    fn new(name: &'static str, pos: Vec<Value>, kw: Vec<(String, Value)>) -> Self {
        Args { name, pos, kw }
    }

    fn arity(&self, min: usize, max: usize) -> R<()> {
        let n = self.pos.len();
        if n < min || n > max {
            let expected = if min == max { format!("{min}") } else { format!("{min} to {max}") };
            return Err(DslError::type_mismatch(format!(
                "{}() takes {expected} positional arguments but {n} were given",
                self.name
            )));
        }
        Ok(())
    }

    fn allow_kw(&self, allowed: &[&str]) -> R<()> {
        for (k, _) in &self.kw {
            if !allowed.contains(&k.as_str()) {
                return Err(DslError::type_mismatch(format!(
                    "{}() got an unexpected keyword argument `{k}`",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn kw(&self, name: &str) -> Option<&Value> {
        self.kw.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    /// Positional argument `i`, or keyword `name` as a fallback.
    fn get(&self, i: usize, name: &str) -> Option<&Value> {
        self.pos.get(i).or_else(|| self.kw(name))
    }

    fn int(&self, i: usize, name: &str) -> R<Option<i64>> {
        match self.get(i, name) {
            None | Some(Value::None) => Ok(None),
            Some(v) => v.as_int().map(Some).ok_or_else(|| {
                DslError::type_mismatch(format!(
                    "{}() argument `{name}` must be an integer, not {}",
                    self.name,
                    v.type_name()
                ))
            }),
        }
    }

    fn string(&self, i: usize, name: &str) -> R<Rc<str>> {
        match self.get(i, name) {
            Some(Value::Str(s)) => Ok(s.clone()),
            Some(v) => Err(DslError::type_mismatch(format!(
                "{}() argument `{name}` must be str, not {}",
                self.name,
                v.type_name()
            ))),
            None => Err(DslError::type_mismatch(format!("{}() missing argument `{name}`", self.name))),
        }
    }
}

pub(crate) fn make_set(items: Vec<Value>) -> R<Value> {
    let mut out: Vec<Value> = Vec::new();
    for v in items {
        if !v.is_hashable() {
            return Err(DslError::type_mismatch(format!("unhashable type: '{}'", v.type_name())));
        }
        if !contains(&out, &v)? {
            out.push(v);
        }
    }
    Ok(Value::Set(Rc::new(out)))
}

fn sort_values(items: &mut [(Value, Value)]) -> R<()> {
    let mut err: Option<DslError> = None;
    items.sort_by(|a, b| match a.0.compare(&b.0) {
        Ok(o) => o,
        Err(e) => {
            err.get_or_insert(e);
            Ordering::Equal
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn round_half_even(x: f64, digits: i64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    if digits >= 0 {
        // decimal formatting rounds the exact binary value half-to-even
        let d = digits.min(300) as usize;
        format!("{x:.d$}").parse().unwrap_or(x)
    } else {
        let p = 10f64.powi((-digits).min(308) as i32);
        (x / p).round_ties_even() * p
    }
}

fn float_to_int(f: f64) -> R<i64> {
    if !f.is_finite() {
        return Err(DslError::runtime(format!("cannot convert float {} to integer", format_float(f))));
    }
    let t = f.trunc();
    if t < -9.223_372_036_854_776e18 || t >= 9.223_372_036_854_776e18 {
        return Err(DslError::runtime("integer overflow"));
    }
    Ok(t as i64)
}

fn parse_datetime(text: &str, fmt: &str) -> R<NaiveDateTime> {
    NaiveDateTime::parse_from_str(text, fmt)
        .or_else(|_| NaiveDate::parse_from_str(text, fmt).map(|d| d.and_hms_opt(0, 0, 0).unwrap()))
        .map_err(|_| DslError::runtime(format!("time data {} does not match format {}", repr(text), repr(fmt))))
}

fn repr(s: &str) -> String {
    crate::value::repr_str(s)
}

fn from_iso_datetime(text: &str) -> R<NaiveDateTime> {
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(d) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(d);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap());
    }
    Err(DslError::runtime(format!("invalid isoformat string: {}", repr(text))))
}

pub(crate) fn match_group(m: &MatchValue, i: &Value) -> R<Value> {
    let idx = match i {
        Value::Str(name) => m
            .names
            .iter()
            .find(|(n, _)| **n == **name)
            .map(|(_, i)| *i)
            .ok_or_else(|| DslError::runtime(format!("no such group {}", repr(name))))?,
        v => match v.as_int() {
            Some(k) if k >= 0 && (k as usize) < m.groups.len() => k as usize,
            Some(_) => return Err(DslError::runtime("no such group")),
            None => return Err(DslError::type_mismatch("group index must be int or str")),
        },
    };
    Ok(m.groups[idx].as_deref().map(Value::str).unwrap_or(Value::None))
}

impl Interp<'_> {
    fn callable(&mut self, f: &Value, arg: Value) -> R<Value> {
        self.call_value(f, vec![arg], vec![])
    }

    fn keyed(&mut self, items: Vec<Value>, key: Option<&Value>) -> R<Vec<(Value, Value)>> {
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            let k = match key {
                Some(f) if !matches!(f, Value::None) => self.callable(f, v.clone())?,
                _ => v.clone(),
            };
            out.push((k, v));
        }
        Ok(out)
    }

    fn iterable_arg(&mut self, a: &Args, i: usize, name: &str) -> R<Vec<Value>> {
        match a.get(i, name) {
            Some(v) => {
                let items = self.iterate(v)?;
                self.charge(items.len() as u64)?;
                Ok(items)
            }
            None => Err(DslError::type_mismatch(format!("{}() missing argument `{name}`", a.name))),
        }
    }

    pub(crate) fn call_builtin(&mut self, b: Builtin, pos: Vec<Value>, kw: Vec<(String, Value)>) -> R<Value> {
        let a = Args::new(b.name(), pos, kw);
        self.charge(1)?;
        match b {
            Builtin::Len => {
                a.arity(1, 1)?;
                a.allow_kw(&[])?;
                let n = match &a.pos[0] {
                    Value::Str(s) => s.chars().count(),
                    Value::List(v) | Value::Tuple(v) | Value::Set(v) => v.len(),
                    Value::Dict(d) => d.len(),
                    other => {
                        return Err(DslError::type_mismatch(format!(
                            "object of type '{}' has no len()",
                            other.type_name()
                        )))
                    }
                };
                Ok(Value::Int(n as i64))
            }
            Builtin::Any | Builtin::All => {
                a.arity(1, 1)?;
                a.allow_kw(&[])?;
                let items = self.iterable_arg(&a, 0, "iterable")?;
                let want = b == Builtin::Any;
                Ok(Value::Bool(if want {
                    items.iter().any(Value::truthy)
                } else {
                    items.iter().all(Value::truthy)
                }))
            }
            Builtin::Min | Builtin::Max => {
                a.allow_kw(&["key", "default"])?;
                if a.pos.is_empty() {
                    return Err(DslError::type_mismatch(format!("{}() expected at least 1 argument", a.name)));
                }
                let items = if a.pos.len() == 1 {
                    self.iterable_arg(&a, 0, "iterable")?
                } else {
                    if a.kw("default").is_some() {
                        return Err(DslError::type_mismatch(format!(
                            "{}() cannot take `default` with multiple positional arguments",
                            a.name
                        )));
                    }
                    a.pos.clone()
                };
                if items.is_empty() {
                    return a
                        .kw("default")
                        .cloned()
                        .ok_or_else(|| DslError::runtime(format!("{}() arg is an empty sequence", a.name)));
                }
                let keyed = self.keyed(items, a.kw("key"))?;
                let mut best = 0;
                for i in 1..keyed.len() {
                    let ord = keyed[i].0.compare(&keyed[best].0)?;
                    let better = if b == Builtin::Min { ord == Ordering::Less } else { ord == Ordering::Greater };
                    if better {
                        best = i;
                    }
                }
                Ok(keyed[best].1.clone())
            }
            Builtin::Sum => {
                a.arity(1, 2)?;
                a.allow_kw(&["start"])?;
                let items = self.iterable_arg(&a, 0, "iterable")?;
                let mut acc = a.get(1, "start").cloned().unwrap_or(Value::Int(0));
                if matches!(acc, Value::Str(_)) {
                    return Err(DslError::type_mismatch("sum() can't sum strings; use ''.join(seq)"));
                }
                for v in items {
                    if matches!(v, Value::Str(_)) {
                        return Err(DslError::type_mismatch("unsupported operand types for +: sum of str"));
                    }
                    acc = self.binop(crate::ast::BinOp::Add, &acc, &v)?;
                }
                Ok(acc)
            }
            Builtin::Sorted => {
                a.arity(1, 1)?;
                a.allow_kw(&["key", "reverse"])?;
                let items = self.iterable_arg(&a, 0, "iterable")?;
                let mut keyed = self.keyed(items, a.kw("key"))?;
                let reverse = a.kw("reverse").map(Value::truthy).unwrap_or(false);
                if reverse {
                    // stable descending sort keeps equal items in input order
                    keyed.reverse();
                    sort_values(&mut keyed)?;
                    keyed.reverse();
                } else {
                    sort_values(&mut keyed)?;
                }
                Ok(Value::list(keyed.into_iter().map(|(_, v)| v).collect()))
            }
            Builtin::Set => {
                a.arity(0, 1)?;
                a.allow_kw(&[])?;
                if a.pos.is_empty() {
                    return Ok(Value::Set(Rc::new(vec![])));
                }
                let items = self.iterable_arg(&a, 0, "iterable")?;
                self.charge(items.len() as u64)?;
                make_set(items)
            }
            Builtin::Zip => {
                a.allow_kw(&[])?;
                let mut lists = Vec::new();
                for i in 0..a.pos.len() {
                    lists.push(self.iterable_arg(&a, i, "iterable")?);
                }
                let n = lists.iter().map(Vec::len).min().unwrap_or(0);
                Ok(Value::list(
                    (0..n).map(|i| Value::tuple(lists.iter().map(|l| l[i].clone()).collect())).collect(),
                ))
            }
            Builtin::Enumerate => {
                a.arity(1, 2)?;
                a.allow_kw(&["start"])?;
                let items = self.iterable_arg(&a, 0, "iterable")?;
                let start = a.int(1, "start")?.unwrap_or(0);
                let mut out = Vec::with_capacity(items.len());
                for (i, v) in items.into_iter().enumerate() {
                    let idx = start.checked_add(i as i64).ok_or_else(|| DslError::runtime("integer overflow"))?;
                    out.push(Value::tuple(vec![Value::Int(idx), v]));
                }
                Ok(Value::list(out))
            }
            Builtin::Range => {
                a.arity(1, 3)?;
                a.allow_kw(&[])?;
                let nums: Vec<i64> = (0..a.pos.len())
                    .map(|i| a.int(i, "n").map(|v| v.unwrap_or(0)))
                    .collect::<R<_>>()?;
                let (start, stop, step) = match nums.as_slice() {
                    [stop] => (0, *stop, 1),
                    [start, stop] => (*start, *stop, 1),
                    [start, stop, step] => (*start, *stop, *step),
                    _ => unreachable!(),
                };
                if step == 0 {
                    return Err(DslError::runtime("range() arg 3 must not be zero"));
                }
                let span = (stop as i128 - start as i128).max(i128::MIN);
                let count = if (step > 0 && span > 0) || (step < 0 && span < 0) {
                    ((span.abs() + step.unsigned_abs() as i128 - 1) / step.unsigned_abs() as i128) as u128
                } else {
                    0
                };
                self.charge(count.min(u64::MAX as u128) as u64)?;
                let mut out = Vec::with_capacity(count as usize);
                let mut v = start as i128;
                for _ in 0..count {
                    out.push(Value::Int(v as i64));
                    v += step as i128;
                }
                Ok(Value::list(out))
            }
            Builtin::Abs => {
                a.arity(1, 1)?;
                a.allow_kw(&[])?;
                match &a.pos[0] {
                    Value::Float(f) => Ok(Value::Float(f.abs())),
                    Value::Duration(d) => Ok(Value::Duration(d.abs())),
                    v => match v.as_int() {
                        Some(i) => i.checked_abs().map(Value::Int).ok_or_else(|| DslError::runtime("integer overflow")),
                        None => Err(DslError::type_mismatch(format!("bad operand type for abs(): '{}'", v.type_name()))),
                    },
                }
            }
            Builtin::Round => {
                a.arity(1, 2)?;
                a.allow_kw(&["ndigits"])?;
                let digits = a.int(1, "ndigits")?;
                match (&a.pos[0], digits) {
                    (Value::Float(f), None) => float_to_int(f.round_ties_even()).map(Value::Int),
                    (Value::Float(f), Some(d)) => Ok(Value::Float(round_half_even(*f, d))),
                    (v, d) => match v.as_int() {
                        Some(i) => match d {
                            Some(d) if d < 0 => {
                                let r = round_half_even(i as f64, d);
                                float_to_int(r).map(Value::Int)
                            }
                            _ => Ok(Value::Int(i)),
                        },
                        None => Err(DslError::type_mismatch(format!(
                            "type {} doesn't define __round__",
                            v.type_name()
                        ))),
                    },
                }
            }
            Builtin::Next => {
                a.arity(1, 2)?;
                a.allow_kw(&[])?;
                let items = self.iterate(&a.pos[0])?;
                match items.into_iter().next() {
                    Some(v) => Ok(v),
                    None => a
                        .pos
                        .get(1)
                        .cloned()
                        .ok_or_else(|| DslError::runtime("next() called on an exhausted iterator")),
                }
            }
            Builtin::Reversed => {
                a.arity(1, 1)?;
                a.allow_kw(&[])?;
                let mut items = self.iterable_arg(&a, 0, "sequence")?;
                items.reverse();
                Ok(Value::list(items))
            }
            Builtin::Filter => {
                a.arity(2, 2)?;
                a.allow_kw(&[])?;
                let items = self.iterable_arg(&a, 1, "iterable")?;
                let f = a.pos[0].clone();
                let mut out = Vec::new();
                for v in items {
                    let keep = match &f {
                        Value::None => v.truthy(),
                        f => self.callable(f, v.clone())?.truthy(),
                    };
                    if keep {
                        out.push(v);
                    }
                }
                Ok(Value::list(out))
            }
            Builtin::Map => {
                if a.pos.len() < 2 {
                    return Err(DslError::type_mismatch("map() must have at least two arguments"));
                }
                a.allow_kw(&[])?;
                let f = a.pos[0].clone();
                let mut lists = Vec::new();
                for i in 1..a.pos.len() {
                    lists.push(self.iterable_arg(&a, i, "iterable")?);
                }
                let n = lists.iter().map(Vec::len).min().unwrap_or(0);
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let args = lists.iter().map(|l| l[i].clone()).collect();
                    out.push(self.call_value(&f, args, vec![])?);
                }
                Ok(Value::list(out))
            }
            Builtin::Str => {
                a.arity(0, 1)?;
                a.allow_kw(&[])?;
                Ok(Value::str(a.pos.first().map(Value::to_str).unwrap_or_default()))
            }
            Builtin::Int => {
                a.arity(0, 2)?;
                a.allow_kw(&["base"])?;
                let base = a.int(1, "base")?;
                match (a.pos.first(), base) {
                    (None, _) => Ok(Value::Int(0)),
                    (Some(Value::Str(s)), base) => {
                        let base = base.unwrap_or(10);
                        if !(2..=36).contains(&base) {
                            return Err(DslError::runtime("int() base must be >= 2 and <= 36"));
                        }
                        let t = s.trim().replace('_', "");
                        i64::from_str_radix(&t, base as u32)
                            .map(Value::Int)
                            .map_err(|_| DslError::runtime(format!("invalid literal for int() with base {base}: {}", repr(s))))
                    }
                    (Some(_), Some(_)) => Err(DslError::type_mismatch("int() can't convert non-string with explicit base")),
                    (Some(Value::Float(f)), None) => float_to_int(*f).map(Value::Int),
                    (Some(v), None) => v.as_int().map(Value::Int).ok_or_else(|| {
                        DslError::type_mismatch(format!(
                            "int() argument must be a string or a number, not '{}'",
                            v.type_name()
                        ))
                    }),
                }
            }
            Builtin::Float => {
                a.arity(0, 1)?;
                a.allow_kw(&[])?;
                match a.pos.first() {
                    None => Ok(Value::Float(0.0)),
                    Some(Value::Str(s)) => {
                        let t = s.trim().to_ascii_lowercase();
                        let parsed = match t.as_str() {
                            "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
                            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
                            "nan" => Some(f64::NAN),
                            _ if t.chars().all(|c| c.is_ascii_digit() || "+-.e_".contains(c)) => {
                                t.replace('_', "").parse().ok()
                            }
                            _ => None,
                        };
                        parsed
                            .map(Value::Float)
                            .ok_or_else(|| DslError::runtime(format!("could not convert string to float: {}", repr(s))))
                    }
                    Some(v) => v.as_f64().map(Value::Float).ok_or_else(|| {
                        DslError::type_mismatch(format!(
                            "float() argument must be a string or a number, not '{}'",
                            v.type_name()
                        ))
                    }),
                }
            }
            Builtin::Bool => {
                a.arity(0, 1)?;
                a.allow_kw(&[])?;
                Ok(Value::Bool(a.pos.first().map(Value::truthy).unwrap_or(false)))
            }
            Builtin::List | Builtin::Tuple => {
                a.arity(0, 1)?;
                a.allow_kw(&[])?;
                let items = if a.pos.is_empty() { vec![] } else { self.iterable_arg(&a, 0, "iterable")? };
                Ok(if b == Builtin::List { Value::list(items) } else { Value::tuple(items) })
            }
            Builtin::Dict => {
                a.arity(0, 1)?;
                let mut out = Vec::new();
                if !a.pos.is_empty() {
                    let source = match &a.pos[0] {
                        Value::Dict(pairs) => pairs
                            .iter()
                            .map(|(k, v)| Value::tuple(vec![k.clone(), v.clone()]))
                            .collect(),
                        _ => self.iterable_arg(&a, 0, "iterable")?,
                    };
                    for item in source {
                        let kv = self.iterate(&item)?;
                        if kv.len() != 2 {
                            return Err(DslError::runtime("dictionary update sequence element has wrong length"));
                        }
                        dict_insert(&mut out, kv[0].clone(), kv[1].clone())?;
                    }
                }
                for (k, v) in &a.kw {
                    dict_insert(&mut out, Value::str(k.as_str()), v.clone())?;
                }
                Ok(Value::Dict(Rc::new(out)))
            }
            Builtin::ReMatch | Builtin::ReSearch | Builtin::ReFullmatch => {
                a.arity(2, 3)?;
                a.allow_kw(&["flags"])?;
                let pattern = a.string(0, "pattern")?;
                let text = a.string(1, "string")?;
                let flags = a.int(2, "flags")?.unwrap_or(0);
                self.charge(text.len() as u64 / 16)?;
                let anchored = match b {
                    Builtin::ReMatch => format!(r"\A(?:{pattern})"),
                    Builtin::ReFullmatch => format!(r"\A(?:{pattern})\z"),
                    _ => pattern.to_string(),
                };
                let re = self.regex(&anchored, flags)?;
                let Some(caps) = re.captures(&text) else {
                    return Ok(Value::None);
                };
                let whole = caps.get(0).unwrap();
                let names = re
                    .capture_names()
                    .enumerate()
                    .filter_map(|(i, n)| n.map(|n| (n.to_string(), i)))
                    .collect();
                Ok(Value::Match(Rc::new(MatchValue {
                    groups: (0..caps.len()).map(|i| caps.get(i).map(|m| m.as_str().to_string())).collect(),
                    names,
                    start: text[..whole.start()].chars().count(),
                    end: text[..whole.end()].chars().count(),
                })))
            }
            Builtin::ReFindall => {
                a.arity(2, 3)?;
                a.allow_kw(&["flags"])?;
                let pattern = a.string(0, "pattern")?;
                let text = a.string(1, "string")?;
                let flags = a.int(2, "flags")?.unwrap_or(0);
                self.charge(text.len() as u64 / 16)?;
                let re = self.regex(&pattern, flags)?;
                let groups = re.captures_len() - 1;
                let mut out = Vec::new();
                for caps in re.captures_iter(&text) {
                    self.charge(1)?;
                    let g = |i: usize| Value::str(caps.get(i).map(|m| m.as_str()).unwrap_or(""));
                    out.push(match groups {
                        0 => g(0),
                        1 => g(1),
                        n => Value::tuple((1..=n).map(g).collect()),
                    });
                }
                Ok(Value::list(out))
            }
            Builtin::DtStrptime => {
                a.arity(2, 2)?;
                a.allow_kw(&[])?;
                let text = a.string(0, "date_string")?;
                let fmt = a.string(1, "format")?;
                parse_datetime(&text, &fmt).map(Value::DateTime)
            }
            Builtin::DtFromIso => {
                a.arity(1, 1)?;
                a.allow_kw(&[])?;
                from_iso_datetime(&a.string(0, "date_string")?).map(Value::DateTime)
            }
            Builtin::DateFromIso => {
                a.arity(1, 1)?;
                a.allow_kw(&[])?;
                let text = a.string(0, "date_string")?;
                NaiveDate::parse_from_str(&text, "%Y-%m-%d")
                    .map(Value::Date)
                    .map_err(|_| DslError::runtime(format!("invalid isoformat string: {}", repr(&text))))
            }
            Builtin::Timedelta => {
                a.arity(0, 2)?;
                a.allow_kw(&["days", "seconds", "minutes", "hours", "weeks"])?;
                let part = |i: Option<usize>, name: &str, scale: f64| -> R<f64> {
                    let v = match i {
                        Some(i) => a.get(i, name),
                        None => a.kw(name),
                    };
                    match v {
                        None => Ok(0.0),
                        Some(v) => v.as_f64().map(|x| x * scale).ok_or_else(|| {
                            DslError::type_mismatch(format!("timedelta() `{name}` must be a number"))
                        }),
                    }
                };
                let secs = part(Some(0), "days", 86_400.0)?
                    + part(Some(1), "seconds", 1.0)?
                    + part(None, "minutes", 60.0)?
                    + part(None, "hours", 3600.0)?
                    + part(None, "weeks", 604_800.0)?;
                let ms = (secs * 1000.0).round();
                if !ms.is_finite() || ms.abs() > 8.0e15 {
                    return Err(DslError::runtime("timedelta out of range"));
                }
                Ok(Value::Duration(TimeDelta::milliseconds(ms as i64)))
            }
        }
    }

    pub(crate) fn call_value_method(
        &mut self,
        recv: &Value,
        name: &str,
        pos: Vec<Value>,
        kw: Vec<(String, Value)>,
    ) -> R<Value> {
        self.charge(1)?;
        let a = Args::new("method", pos, kw);
        a.allow_kw(match name {
            "split" => &["sep", "maxsplit"],
            "get" => &["default"],
            _ => &[],
        })?;
        match recv {
            Value::Str(s) => self.str_method(s, name, &a),
            Value::Dict(pairs) => match name {
                "keys" => {
                    a.arity(0, 0)?;
                    Ok(Value::list(pairs.iter().map(|(k, _)| k.clone()).collect()))
                }
                "values" => {
                    a.arity(0, 0)?;
                    Ok(Value::list(pairs.iter().map(|(_, v)| v.clone()).collect()))
                }
                "items" => {
                    a.arity(0, 0)?;
                    Ok(Value::list(
                        pairs.iter().map(|(k, v)| Value::tuple(vec![k.clone(), v.clone()])).collect(),
                    ))
                }
                "get" => {
                    a.arity(1, 2)?;
                    let key = &a.pos[0];
                    if !key.is_hashable() {
                        return Err(DslError::type_mismatch(format!("unhashable type: '{}'", key.type_name())));
                    }
                    Ok(dict_get(pairs, key)?.unwrap_or_else(|| a.get(1, "default").cloned().unwrap_or(Value::None)))
                }
                _ => Err(no_method(recv, name)),
            },
            Value::List(items) | Value::Tuple(items) => match name {
                "count" => {
                    a.arity(1, 1)?;
                    self.charge(items.len() as u64)?;
                    let mut n = 0;
                    for v in items.iter() {
                        if contains(std::slice::from_ref(v), &a.pos[0])? {
                            n += 1;
                        }
                    }
                    Ok(Value::Int(n))
                }
                "index" => {
                    a.arity(1, 1)?;
                    self.charge(items.len() as u64)?;
                    for (i, v) in items.iter().enumerate() {
                        if contains(std::slice::from_ref(v), &a.pos[0])? {
                            return Ok(Value::Int(i as i64));
                        }
                    }
                    Err(DslError::runtime(format!("{} is not in {}", a.pos[0].repr(), recv.type_name())))
                }
                _ => Err(no_method(recv, name)),
            },
            Value::Set(items) => {
                a.arity(1, 1)?;
                let other = self.iterate(&a.pos[0])?;
                self.charge((items.len() + other.len()) as u64)?;
                match name {
                    "union" => make_set(items.iter().cloned().chain(other).collect()),
                    "intersection" => {
                        let mut out = Vec::new();
                        for v in items.iter() {
                            if contains(&other, v)? {
                                out.push(v.clone());
                            }
                        }
                        Ok(Value::Set(Rc::new(out)))
                    }
                    "difference" => {
                        let mut out = Vec::new();
                        for v in items.iter() {
                            if !contains(&other, v)? {
                                out.push(v.clone());
                            }
                        }
                        Ok(Value::Set(Rc::new(out)))
                    }
                    "issubset" => {
                        for v in items.iter() {
                            if !contains(&other, v)? {
                                return Ok(Value::Bool(false));
                            }
                        }
                        Ok(Value::Bool(true))
                    }
                    "issuperset" => {
                        for v in other.iter() {
                            if !contains(items, v)? {
                                return Ok(Value::Bool(false));
                            }
                        }
                        Ok(Value::Bool(true))
                    }
                    _ => Err(no_method(recv, name)),
                }
            }
            Value::Match(m) => match name {
                "group" => {
                    if a.pos.is_empty() {
                        return match_group(m, &Value::Int(0));
                    }
                    if a.pos.len() == 1 {
                        return match_group(m, &a.pos[0]);
                    }
                    Ok(Value::tuple(a.pos.iter().map(|i| match_group(m, i)).collect::<R<_>>()?))
                }
                "groups" => {
                    a.arity(0, 1)?;
                    let default = a.pos.first().cloned().unwrap_or(Value::None);
                    Ok(Value::tuple(
                        m.groups[1..]
                            .iter()
                            .map(|g| g.as_deref().map(Value::str).unwrap_or_else(|| default.clone()))
                            .collect(),
                    ))
                }
                "start" => Ok(Value::Int(m.start as i64)),
                "end" => Ok(Value::Int(m.end as i64)),
                _ => Err(no_method(recv, name)),
            },
            Value::DateTime(d) => match name {
                "date" => Ok(Value::Date(d.date())),
                "isoformat" => Ok(Value::str(d.format("%Y-%m-%dT%H:%M:%S").to_string())),
                "weekday" => Ok(Value::Int(d.weekday().num_days_from_monday() as i64)),
                "strftime" => {
                    a.arity(1, 1)?;
                    Ok(Value::str(strftime(|f| d.format(f).to_string(), &a.string(0, "format")?)?))
                }
                _ => Err(no_method(recv, name)),
            },
            Value::Date(d) => match name {
                "isoformat" => Ok(Value::str(d.format("%Y-%m-%d").to_string())),
                "weekday" => Ok(Value::Int(d.weekday().num_days_from_monday() as i64)),
                "strftime" => {
                    a.arity(1, 1)?;
                    Ok(Value::str(strftime(|f| d.format(f).to_string(), &a.string(0, "format")?)?))
                }
                _ => Err(no_method(recv, name)),
            },
            Value::Duration(d) => match name {
                "total_seconds" => Ok(Value::Float(d.num_milliseconds() as f64 / 1000.0)),
                _ => Err(no_method(recv, name)),
            },
            _ => Err(no_method(recv, name)),
        }
    }

    fn str_method(&mut self, s: &str, name: &str, a: &Args) -> R<Value> {
        self.charge(s.len() as u64 / 64)?;
        let text = |v: &Value| -> R<Rc<str>> {
            match v {
                Value::Str(s) => Ok(s.clone()),
                other => Err(DslError::type_mismatch(format!("expected str, not {}", other.type_name()))),
            }
        };
        let affix = |v: &Value, f: &dyn Fn(&str) -> bool| -> R<bool> {
            match v {
                Value::Tuple(items) => {
                    for i in items.iter() {
                        if f(&text(i)?) {
                            return Ok(true);
                        }
                    }
                    Ok(false)
                }
                v => Ok(f(&text(v)?)),
            }
        };
        match name {
            "lower" => Ok(Value::str(s.to_lowercase())),
            "upper" => Ok(Value::str(s.to_uppercase())),
            "title" => {
                let mut out = String::new();
                let mut prev_alpha = false;
                for c in s.chars() {
                    if c.is_alphabetic() {
                        if prev_alpha {
                            out.extend(c.to_lowercase());
                        } else {
                            out.extend(c.to_uppercase());
                        }
                        prev_alpha = true;
                    } else {
                        out.push(c);
                        prev_alpha = false;
                    }
                }
                Ok(Value::str(out))
            }
            "strip" | "lstrip" | "rstrip" => {
                a.arity(0, 1)?;
                let chars: Option<Vec<char>> = match a.pos.first() {
                    None | Some(Value::None) => None,
                    Some(v) => Some(text(v)?.chars().collect()),
                };
                let pred = |c: char| match &chars {
                    Some(set) => set.contains(&c),
                    None => c.is_whitespace(),
                };
                Ok(Value::str(match name {
                    "strip" => s.trim_matches(pred),
                    "lstrip" => s.trim_start_matches(pred),
                    _ => s.trim_end_matches(pred),
                }))
            }
            "split" => {
                a.arity(0, 2)?;
                let sep = match a.get(0, "sep") {
                    None | Some(Value::None) => None,
                    Some(v) => Some(text(v)?),
                };
                let maxsplit = a.int(1, "maxsplit")?.unwrap_or(-1);
                let parts: Vec<Value> = match sep {
                    Some(sep) if sep.is_empty() => return Err(DslError::runtime("empty separator")),
                    Some(sep) if maxsplit >= 0 => {
                        s.splitn(maxsplit as usize + 1, &*sep).map(Value::str).collect()
                    }
                    Some(sep) => s.split(&*sep).map(Value::str).collect(),
                    None => {
                        let mut out = Vec::new();
                        let mut rest = s.trim_start();
                        while !rest.is_empty() {
                            if maxsplit >= 0 && out.len() as i64 == maxsplit {
                                out.push(Value::str(rest.trim_end()));
                                break;
                            }
                            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                            out.push(Value::str(&rest[..end]));
                            rest = rest[end..].trim_start();
                        }
                        out
                    }
                };
                Ok(Value::list(parts))
            }
            "splitlines" => Ok(Value::list(s.lines().map(Value::str).collect())),
            "startswith" => {
                a.arity(1, 1)?;
                Ok(Value::Bool(affix(&a.pos[0], &|p| s.starts_with(p))?))
            }
            "endswith" => {
                a.arity(1, 1)?;
                Ok(Value::Bool(affix(&a.pos[0], &|p| s.ends_with(p))?))
            }
            "replace" => {
                a.arity(2, 2)?;
                let from = text(&a.pos[0])?;
                let to = text(&a.pos[1])?;
                let n = if from.is_empty() { s.chars().count() + 1 } else { s.matches(&*from).count() };
                self.charge((n * to.len()) as u64 / 16)?;
                Ok(Value::str(s.replace(&*from, &to)))
            }
            "join" => {
                a.arity(1, 1)?;
                let items = self.iterate(&a.pos[0])?;
                self.charge(items.len() as u64)?;
                let parts: Vec<String> = items
                    .iter()
                    .map(|v| match v {
                        Value::Str(p) => Ok(p.to_string()),
                        other => Err(DslError::type_mismatch(format!(
                            "sequence item: expected str instance, {} found",
                            other.type_name()
                        ))),
                    })
                    .collect::<R<_>>()?;
                Ok(Value::str(parts.join(s)))
            }
            "count" => {
                a.arity(1, 1)?;
                let sub = text(&a.pos[0])?;
                let n = if sub.is_empty() { s.chars().count() + 1 } else { s.matches(&*sub).count() };
                Ok(Value::Int(n as i64))
            }
            "find" => {
                a.arity(1, 1)?;
                let sub = text(&a.pos[0])?;
                Ok(Value::Int(s.find(&*sub).map(|b| s[..b].chars().count() as i64).unwrap_or(-1)))
            }
            "isdigit" => Ok(Value::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))),
            "isalpha" => Ok(Value::Bool(!s.is_empty() && s.chars().all(char::is_alphabetic))),
            "isnumeric" => Ok(Value::Bool(!s.is_empty() && s.chars().all(char::is_numeric))),
            "isspace" => Ok(Value::Bool(!s.is_empty() && s.chars().all(char::is_whitespace))),
            _ => Err(no_method(&Value::str(s), name)),
        }
    }
}

fn strftime(render: impl Fn(&str) -> String, fmt: &str) -> R<String> {
    // chrono panics when displaying a malformed format, so validate first
    if chrono::format::StrftimeItems::new(fmt).any(|i| matches!(i, chrono::format::Item::Error)) {
        return Err(DslError::runtime(format!("invalid format string {}", repr(fmt))));
    }
    Ok(render(fmt))
}

fn no_method(recv: &Value, name: &str) -> DslError {
    DslError::forbidden(format!("{} has no method `{name}`", recv.type_name()))
}

const STR_METHODS: [&str; 18] = [
    "lower",
    "upper",
    "title",
    "strip",
    "lstrip",
    "rstrip",
    "split",
    "splitlines",
    "startswith",
    "endswith",
    "replace",
    "join",
    "count",
    "find",
    "isdigit",
    "isalpha",
    "isnumeric",
    "isspace",
];

pub(crate) fn has_value_method(v: &Value, name: &str) -> bool {
    let methods: &[&str] = match v {
        Value::Str(_) => &STR_METHODS,
        Value::Dict(_) => &["keys", "values", "items", "get"],
        Value::List(_) | Value::Tuple(_) => &["count", "index"],
        Value::Set(_) => &["union", "intersection", "difference", "issubset", "issuperset"],
        Value::Match(_) => &["group", "groups", "start", "end"],
        Value::DateTime(_) => &["date", "isoformat", "weekday", "strftime"],
        Value::Date(_) => &["isoformat", "weekday", "strftime"],
        Value::Duration(_) => &["total_seconds"],
        _ => &[],
    };
    methods.contains(&name)
}

pub(crate) fn value_attribute(v: &Value, name: &str) -> Option<Value> {
    let int = |i: u32| Some(Value::Int(i as i64));
    match (v, name) {
        (Value::DateTime(d), "year") => Some(Value::Int(d.year() as i64)),
        (Value::DateTime(d), "month") => int(d.month()),
        (Value::DateTime(d), "day") => int(d.day()),
        (Value::DateTime(d), "hour") => int(d.hour()),
        (Value::DateTime(d), "minute") => int(d.minute()),
        (Value::DateTime(d), "second") => int(d.second()),
        (Value::Date(d), "year") => Some(Value::Int(d.year() as i64)),
        (Value::Date(d), "month") => int(d.month()),
        (Value::Date(d), "day") => int(d.day()),
        (Value::Duration(d), "days") => Some(Value::Int(d.num_seconds().div_euclid(86_400))),
        (Value::Duration(d), "seconds") => Some(Value::Int(d.num_seconds().rem_euclid(86_400))),
        (Value::Float(f), "real") => Some(Value::Float(*f)),
        (Value::Int(i), "real") => Some(Value::Int(*i)),
        _ => None,
    }
}

/// Applies an f-string format spec: `[[fill]align][sign][0][width][,][.precision][type]`.
pub(crate) fn format_spec(v: &Value, spec: &str) -> R<String> {
    let bad = || DslError::runtime(format!("invalid format specifier {}", repr(spec)));
    let chars: Vec<char> = spec.chars().collect();
    let mut i = 0;
    let mut fill = ' ';
    let mut align: Option<char> = None;
    if chars.len() >= 2 && "<>^=".contains(chars[1]) {
        fill = chars[0];
        align = Some(chars[1]);
        i = 2;
    } else if !chars.is_empty() && "<>^=".contains(chars[0]) {
        align = Some(chars[0]);
        i = 1;
    }
    let mut sign = '-';
    if i < chars.len() && "+- ".contains(chars[i]) {
        sign = chars[i];
        i += 1;
    }
    if i < chars.len() && chars[i] == '0' {
        fill = '0';
        align = align.or(Some('='));
        i += 1;
    }
    let mut width = 0usize;
    while i < chars.len() && chars[i].is_ascii_digit() {
        width = width * 10 + chars[i].to_digit(10).unwrap() as usize;
        i += 1;
    }
    let mut grouping = false;
    if i < chars.len() && (chars[i] == ',' || chars[i] == '_') {
        grouping = true;
        i += 1;
    }
    let mut precision: Option<usize> = None;
    if i < chars.len() && chars[i] == '.' {
        i += 1;
        let mut p = 0;
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            p = p * 10 + chars[i].to_digit(10).unwrap() as usize;
            i += 1;
        }
        if i == start {
            return Err(bad());
        }
        precision = Some(p.min(100));
    }
    let ty = match &chars[i..] {
        [] => None,
        [c] => Some(*c),
        _ => return Err(bad()),
    };
    if width > 1000 {
        return Err(bad());
    }

    let group = |digits: &str| -> String {
        if !grouping {
            return digits.to_string();
        }
        let (int, frac) = match digits.find('.') {
            Some(p) => (&digits[..p], &digits[p..]),
            None => (digits, ""),
        };
        let mut out = String::new();
        for (k, c) in int.chars().enumerate() {
            if k > 0 && (int.len() - k) % 3 == 0 {
                out.push(',');
            }
            out.push(c);
        }
        out + frac
    };

    let (negative, body, numeric) = match (v, ty) {
        (Value::Str(s), None | Some('s')) => {
            let s: String = match precision {
                Some(p) => s.chars().take(p).collect(),
                None => s.to_string(),
            };
            (false, s, false)
        }
        (_, Some('s')) => (false, v.to_str(), false),
        (v, Some('d')) if v.as_int().is_some() => {
            let n = v.as_int().unwrap();
            (n < 0, group(&n.unsigned_abs().to_string()), true)
        }
        (v, ty) if v.is_number() => {
            let x = v.as_f64().unwrap();
            let neg = x.is_sign_negative() && x != 0.0 || x < 0.0;
            let ax = x.abs();
            let body = match ty {
                Some('f') | Some('F') => format!("{:.*}", precision.unwrap_or(6), ax),
                Some('%') => format!("{:.*}%", precision.unwrap_or(6), ax * 100.0),
                Some('e') | Some('E') => {
                    let s = sci(ax, precision.unwrap_or(6));
                    if ty == Some('E') { s.to_uppercase() } else { s }
                }
                Some('g') | Some('G') => general(ax, precision.unwrap_or(6)),
                None if precision.is_some() => general(ax, precision.unwrap()),
                None => match v {
                    Value::Float(_) => format_float(ax),
                    _ => v.as_int().unwrap().unsigned_abs().to_string(),
                },
                _ => return Err(bad()),
            };
            (neg, group(&body), true)
        }
        (v, None) => (false, v.to_str(), false),
        _ => return Err(bad()),
    };
    let sign_str = match (negative, sign) {
        (true, _) => "-",
        (false, '+') if numeric => "+",
        (false, ' ') if numeric => " ",
        _ => "",
    };
    let len = sign_str.chars().count() + body.chars().count();
    let pad = width.saturating_sub(len);
    let align = align.unwrap_or(if numeric { '>' } else { '<' });
    let fill_str = |n: usize| fill.to_string().repeat(n);
    Ok(match align {
        '<' => format!("{sign_str}{body}{}", fill_str(pad)),
        '^' => format!("{}{sign_str}{body}{}", fill_str(pad / 2), fill_str(pad - pad / 2)),
        '=' => format!("{sign_str}{}{body}", fill_str(pad)),
        _ => format!("{}{sign_str}{body}", fill_str(pad)),
    })
}

fn sci(x: f64, precision: usize) -> String {
    let s = format!("{:.*e}", precision, x);
    // Rust writes 1.5e2; the expected form is 1.5e+02
    match s.split_once('e') {
        Some((m, e)) => {
            let (sign, digits) = match e.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', e),
            };
            format!("{m}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

fn general(x: f64, precision: usize) -> String {
    let p = precision.max(1);
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i64;
    let strip = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    // recompute the exponent after rounding to p significant digits
    let sci_form = format!("{:.*e}", p - 1, x);
    let exp = sci_form
        .split_once('e')
        .and_then(|(_, e)| e.parse::<i64>().ok())
        .unwrap_or(exp);
    if exp >= -4 && exp < p as i64 {
        strip(format!("{:.*}", (p as i64 - 1 - exp).max(0) as usize, x))
    } else {
        let s = sci(x, p - 1);
        match s.split_once('e') {
            Some((m, e)) => format!("{}e{e}", strip(m.to_string())),
            None => s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_specs() {
        assert_eq!(format_spec(&Value::Float(3.14159), ".2f").unwrap(), "3.14");
        assert_eq!(format_spec(&Value::Int(1234567), ",").unwrap(), "1,234,567");
        assert_eq!(format_spec(&Value::Float(1234.5), ",.2f").unwrap(), "1,234.50");
        assert_eq!(format_spec(&Value::Int(42), "05d").unwrap(), "00042");
        assert_eq!(format_spec(&Value::Int(-42), "05d").unwrap(), "-0042");
        assert_eq!(format_spec(&Value::str("ab"), ">4").unwrap(), "  ab");
        assert_eq!(format_spec(&Value::str("ab"), "*^6").unwrap(), "**ab**");
        assert_eq!(format_spec(&Value::Float(0.25), ".0%").unwrap(), "25%");
        assert_eq!(format_spec(&Value::Float(1234.5), "e").unwrap(), "1.234500e+03");
        assert_eq!(format_spec(&Value::Float(0.0001234), "g").unwrap(), "0.0001234");
        assert_eq!(format_spec(&Value::Float(123456789.0), "g").unwrap(), "1.23457e+08");
        assert!(format_spec(&Value::Int(1), "q").is_err());
    }

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round_half_even(2.675, 2), 2.67);
        assert_eq!(round_half_even(0.125, 2), 0.12);
        assert_eq!(round_half_even(1250.0, -2), 1200.0);
        assert_eq!(2.5f64.round_ties_even(), 2.0);
    }
}

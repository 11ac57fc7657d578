//! Runtime values.

use std::cmp::Ordering;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use indexmap::IndexMap;

use crate::ast::{format_float, Expr};
use crate::error::DslError;
use crate::schema::{SchemaDecl, SymValue, SymbolInstance};

/// An environment-provided object (Session, State, Element).
pub trait HostObject: fmt::Debug {
    fn type_name(&self) -> &'static str;

    /// Returns `None` when the attribute does not exist.
    fn get_attr(&self, name: &str) -> Result<Option<Value>, DslError>;

    fn has_method(&self, name: &str) -> bool;

    fn call_method(&self, name: &str, args: &[Value], kwargs: &[(String, Value)]) -> Result<Value, DslError>;

    /// Two host values are equal iff their identities are.
    fn identity(&self) -> String;

    fn repr(&self) -> String {
        format!("<{} {}>", self.type_name(), self.identity())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Len,
    Any,
    All,
    Min,
    Max,
    Sum,
    Sorted,
    Set,
    Zip,
    Enumerate,
    Range,
    Abs,
    Round,
    Next,
    Reversed,
    Filter,
    Map,
    Str,
    Int,
    Float,
    Bool,
    List,
    Tuple,
    Dict,
    ReMatch,
    ReSearch,
    ReFullmatch,
    ReFindall,
    DtStrptime,
    DtFromIso,
    DateFromIso,
    Timedelta,
}

impl Builtin {
    pub const GLOBALS: [Builtin; 24] = [
        Builtin::Len,
        Builtin::Any,
        Builtin::All,
        Builtin::Min,
        Builtin::Max,
        Builtin::Sum,
        Builtin::Sorted,
        Builtin::Set,
        Builtin::Zip,
        Builtin::Enumerate,
        Builtin::Range,
        Builtin::Abs,
        Builtin::Round,
        Builtin::Next,
        Builtin::Reversed,
        Builtin::Filter,
        Builtin::Map,
        Builtin::Str,
        Builtin::Int,
        Builtin::Float,
        Builtin::Bool,
        Builtin::List,
        Builtin::Tuple,
        Builtin::Dict,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Len => "len",
            Builtin::Any => "any",
            Builtin::All => "all",
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Sum => "sum",
            Builtin::Sorted => "sorted",
            Builtin::Set => "set",
            Builtin::Zip => "zip",
            Builtin::Enumerate => "enumerate",
            Builtin::Range => "range",
            Builtin::Abs => "abs",
            Builtin::Round => "round",
            Builtin::Next => "next",
            Builtin::Reversed => "reversed",
            Builtin::Filter => "filter",
            Builtin::Map => "map",
            Builtin::Str => "str",
            Builtin::Int => "int",
            Builtin::Float => "float",
            Builtin::Bool => "bool",
            Builtin::List => "list",
            Builtin::Tuple => "tuple",
            Builtin::Dict => "dict",
            Builtin::ReMatch => "re.match",
            Builtin::ReSearch => "re.search",
            Builtin::ReFullmatch => "re.fullmatch",
            Builtin::ReFindall => "re.findall",
            Builtin::DtStrptime => "datetime.strptime",
            Builtin::DtFromIso => "datetime.fromisoformat",
            Builtin::DateFromIso => "date.fromisoformat",
            Builtin::Timedelta => "timedelta",
        }
    }

    pub fn global(name: &str) -> Option<Builtin> {
        Builtin::GLOBALS.iter().copied().find(|b| b.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Re,
    Datetime,
    Date,
}

impl Module {
    pub const ALL: [(&'static str, Module); 2] = [("re", Module::Re), ("datetime", Module::Datetime)];

    pub fn name(&self) -> &'static str {
        match self {
            Module::Re => "re",
            Module::Datetime => "datetime",
            Module::Date => "date",
        }
    }

    pub fn member(&self, attr: &str) -> Option<Value> {
        let b = match (self, attr) {
            (Module::Re, "match") => Builtin::ReMatch,
            (Module::Re, "search") => Builtin::ReSearch,
            (Module::Re, "fullmatch") => Builtin::ReFullmatch,
            (Module::Re, "findall") => Builtin::ReFindall,
            (Module::Re, "I" | "IGNORECASE") => return Some(Value::Int(2)),
            (Module::Re, "M" | "MULTILINE") => return Some(Value::Int(8)),
            (Module::Re, "S" | "DOTALL") => return Some(Value::Int(16)),
            (Module::Datetime, "strptime") => Builtin::DtStrptime,
            (Module::Datetime, "fromisoformat") => Builtin::DtFromIso,
            (Module::Datetime, "timedelta") => Builtin::Timedelta,
            (Module::Datetime, "datetime") => return Some(Value::Module(Module::Datetime)),
            (Module::Datetime, "date") => return Some(Value::Module(Module::Date)),
            (Module::Date, "fromisoformat") => Builtin::DateFromIso,
            _ => return None,
        };
        Some(Value::Builtin(b))
    }

    pub fn lookup(name: &str) -> Option<Module> {
        Module::ALL.iter().find(|(n, _)| *n == name).map(|(_, m)| *m)
    }
}

#[derive(Debug)]
pub struct LambdaValue {
    pub params: Vec<String>,
    pub body: Expr,
    pub captured: Vec<(String, Value)>,
}

#[derive(Debug)]
pub struct MatchValue {
    pub groups: Vec<Option<String>>,
    pub names: Vec<(String, usize)>,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug)]
pub struct SymbolValue {
    pub schema_name: String,
    pub fields: IndexMap<String, Value>,
}

#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Rc<str>),
    List(Rc<Vec<Value>>),
    Tuple(Rc<Vec<Value>>),
    Set(Rc<Vec<Value>>),
    Dict(Rc<Vec<(Value, Value)>>),
    Symbol(Rc<SymbolValue>),
    Schema(Arc<SchemaDecl>),
    Object(Rc<dyn HostObject>),
    Builtin(Builtin),
    Module(Module),
    /// A method bound to a builtin value, e.g. `"a".upper`.
    Method(Rc<Value>, Rc<str>),
    /// A method bound to a host object.
    HostMethod(Rc<dyn HostObject>, Rc<str>),
    Lambda(Rc<LambdaValue>),
    Match(Rc<MatchValue>),
    DateTime(NaiveDateTime),
    Date(NaiveDate),
    Duration(TimeDelta),
}

impl Value {
    pub fn str(s: impl Into<Rc<str>>) -> Value {
        Value::Str(s.into())
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(items))
    }

    pub fn tuple(items: Vec<Value>) -> Value {
        Value::Tuple(Rc::new(items))
    }

    pub fn object(obj: impl HostObject + 'static) -> Value {
        Value::Object(Rc::new(obj))
    }

    pub fn from_sym(v: &SymValue) -> Value {
        match v {
            SymValue::Null => Value::None,
            SymValue::Bool(b) => Value::Bool(*b),
            SymValue::Int(i) => Value::Int(*i),
            SymValue::Float(f) => Value::Float(*f),
            SymValue::Str(s) => Value::str(s.as_str()),
            SymValue::List(items) => Value::list(items.iter().map(Value::from_sym).collect()),
            SymValue::Object(inst) => Value::from_symbol(inst),
        }
    }

    pub fn from_symbol(inst: &SymbolInstance) -> Value {
        Value::Symbol(Rc::new(SymbolValue {
            schema_name: inst.schema_name.clone(),
            fields: inst.values.iter().map(|(k, v)| (k.clone(), Value::from_sym(v))).collect(),
        }))
    }

    /// Converts plain JSON data (bindings from fixtures) into a value.
    pub fn from_json(j: &serde_json::Value) -> Value {
        use serde_json::Value as J;
        match j {
            J::Null => Value::None,
            J::Bool(b) => Value::Bool(*b),
            J::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            J::String(s) => Value::str(s.as_str()),
            J::Array(items) => Value::list(items.iter().map(Value::from_json).collect()),
            J::Object(map) => Value::Dict(Rc::new(
                map.iter().map(|(k, v)| (Value::str(k.as_str()), Value::from_json(v))).collect(),
            )),
        }
    }

    /// Plain-data view of the value; `None` for functions, host objects and
    /// other values without a JSON form.
    pub fn to_json(&self) -> Option<serde_json::Value> {
        use serde_json::Value as J;
        Some(match self {
            Value::None => J::Null,
            Value::Bool(b) => J::Bool(*b),
            Value::Int(i) => J::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f).map(J::Number)?,
            Value::Str(s) => J::String(s.to_string()),
            Value::List(items) | Value::Tuple(items) | Value::Set(items) => {
                J::Array(items.iter().map(Value::to_json).collect::<Option<_>>()?)
            }
            Value::Dict(pairs) => {
                let mut map = serde_json::Map::new();
                for (k, v) in pairs.iter() {
                    match k {
                        Value::Str(k) => map.insert(k.to_string(), v.to_json()?),
                        _ => return None,
                    };
                }
                J::Object(map)
            }
            Value::Symbol(sym) => {
                let mut map = serde_json::Map::new();
                for (k, v) in &sym.fields {
                    map.insert(k.clone(), v.to_json()?);
                }
                J::Object(map)
            }
            _ => return None,
        })
    }

    pub fn type_name(&self) -> String {
        match self {
            Value::None => "NoneType".into(),
            Value::Bool(_) => "bool".into(),
            Value::Int(_) => "int".into(),
            Value::Float(_) => "float".into(),
            Value::Str(_) => "str".into(),
            Value::List(_) => "list".into(),
            Value::Tuple(_) => "tuple".into(),
            Value::Set(_) => "set".into(),
            Value::Dict(_) => "dict".into(),
            Value::Symbol(s) => s.schema_name.clone(),
            Value::Schema(_) => "schema".into(),
            Value::Object(o) => o.type_name().into(),
            Value::Builtin(_) | Value::Method(..) | Value::HostMethod(..) => "builtin_function".into(),
            Value::Module(_) => "module".into(),
            Value::Lambda(_) => "function".into(),
            Value::Match(_) => "re.Match".into(),
            Value::DateTime(_) => "datetime".into(),
            Value::Date(_) => "date".into(),
            Value::Duration(_) => "timedelta".into(),
        }
    }

    pub fn is_number(&self) -> bool {
        matches!(self, Value::Bool(_) | Value::Int(_) | Value::Float(_))
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::None => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Float(f) => *f != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::List(v) | Value::Tuple(v) | Value::Set(v) => !v.is_empty(),
            Value::Dict(d) => !d.is_empty(),
            Value::Duration(d) => !d.is_zero(),
            _ => true,
        }
    }

    /// Numeric view; bools count as 0/1.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Bool(b) => Some(*b as i64 as f64),
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Bool(b) => Some(*b as i64),
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn is_hashable(&self) -> bool {
        match self {
            Value::List(_) | Value::Set(_) | Value::Dict(_) => false,
            Value::Tuple(items) => items.iter().all(Value::is_hashable),
            _ => true,
        }
    }

    /// Equality: numbers compare by value, None compares with anything,
    /// number vs string is a type mismatch, other cross-kind pairs are
    /// unequal.
    pub fn equals(&self, other: &Value) -> Result<bool, DslError> {
        use Value::*;
        Ok(match (self, other) {
            (None, None) => true,
            (None, _) | (_, None) => false,
            (a, b) if a.is_number() && b.is_number() => match (a.as_int(), b.as_int()) {
                (Some(x), Some(y)) => x == y,
                _ => a.as_f64() == b.as_f64(),
            },
            (Str(a), Str(b)) => a == b,
            (a, Str(_)) | (Str(_), a) if a.is_number() => {
                return Err(DslError::type_mismatch(format!(
                    "cannot compare {} with {} for equality",
                    self.type_name(),
                    other.type_name()
                )))
            }
            (List(a), List(b)) | (Tuple(a), Tuple(b)) => {
                if a.len() != b.len() {
                    return Ok(false);
                }
                for (x, y) in a.iter().zip(b.iter()) {
                    if !x.equals(y)? {
                        return Ok(false);
                    }
                }
                true
            }
            (Set(a), Set(b)) => {
                if a.len() != b.len() {
                    return Ok(false);
                }
                for x in a.iter() {
                    if !contains(b, x)? {
                        return Ok(false);
                    }
                }
                true
            }
            (Dict(a), Dict(b)) => {
                if a.len() != b.len() {
                    return Ok(false);
                }
                for (k, v) in a.iter() {
                    match dict_get(b, k)? {
                        Some(w) if v.equals(&w)? => {}
                        _ => return Ok(false),
                    }
                }
                true
            }
            (Symbol(a), Symbol(b)) => {
                if a.schema_name != b.schema_name || a.fields.len() != b.fields.len() {
                    return Ok(false);
                }
                for (k, v) in &a.fields {
                    match b.fields.get(k) {
                        Some(w) if v.equals(w)? => {}
                        _ => return Ok(false),
                    }
                }
                true
            }
            (Object(a), Object(b)) => a.type_name() == b.type_name() && a.identity() == b.identity(),
            (Schema(a), Schema(b)) => a.name == b.name,
            (Builtin(a), Builtin(b)) => a == b,
            (Module(a), Module(b)) => a == b,
            (Lambda(a), Lambda(b)) => Rc::ptr_eq(a, b),
            (Match(a), Match(b)) => Rc::ptr_eq(a, b),
            (DateTime(a), DateTime(b)) => a == b,
            (Date(a), Date(b)) => a == b,
            (Duration(a), Duration(b)) => a == b,
            _ => false,
        })
    }

    /// Identity test used by `is`: singletons and numbers by value,
    /// containers and objects by reference.
    pub fn same(&self, other: &Value) -> bool {
        use Value::*;
        match (self, other) {
            (None, None) => true,
            (Bool(a), Bool(b)) => a == b,
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a == b,
            (Str(a), Str(b)) => a == b,
            (List(a), List(b)) | (Tuple(a), Tuple(b)) | (Set(a), Set(b)) => Rc::ptr_eq(a, b),
            (Dict(a), Dict(b)) => Rc::ptr_eq(a, b),
            (Symbol(a), Symbol(b)) => Rc::ptr_eq(a, b),
            (Object(a), Object(b)) => a.type_name() == b.type_name() && a.identity() == b.identity(),
            (Builtin(a), Builtin(b)) => a == b,
            (Module(a), Module(b)) => a == b,
            (Schema(a), Schema(b)) => Arc::ptr_eq(a, b),
            (Lambda(a), Lambda(b)) => Rc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Ordering for `<`-style comparisons, `sorted`, `min` and `max`.
    pub fn compare(&self, other: &Value) -> Result<Ordering, DslError> {
        use Value::*;
        let mismatch = || {
            DslError::type_mismatch(format!(
                "'<' not supported between {} and {}",
                self.type_name(),
                other.type_name()
            ))
        };
        match (self, other) {
            (a, b) if a.is_number() && b.is_number() => match (a.as_int(), b.as_int()) {
                (Some(x), Some(y)) => Ok(x.cmp(&y)),
                _ => a
                    .as_f64()
                    .unwrap()
                    .partial_cmp(&b.as_f64().unwrap())
                    .ok_or_else(|| DslError::runtime("comparison with nan")),
            },
            (Str(a), Str(b)) => Ok(a.cmp(b)),
            (List(a), List(b)) | (Tuple(a), Tuple(b)) => {
                for (x, y) in a.iter().zip(b.iter()) {
                    if !x.equals(y)? {
                        return x.compare(y);
                    }
                }
                Ok(a.len().cmp(&b.len()))
            }
            (DateTime(a), DateTime(b)) => Ok(a.cmp(b)),
            (Date(a), Date(b)) => Ok(a.cmp(b)),
            (Duration(a), Duration(b)) => Ok(a.cmp(b)),
            _ => Err(mismatch()),
        }
    }

    /// `str()` rendering.
    pub fn to_str(&self) -> String {
        match self {
            Value::Str(s) => s.to_string(),
            other => other.repr(),
        }
    }

    /// `repr()` rendering, Python style.
    pub fn repr(&self) -> String {
        match self {
            Value::None => "None".into(),
            Value::Bool(true) => "True".into(),
            Value::Bool(false) => "False".into(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format_float(*f),
            Value::Str(s) => repr_str(s),
            Value::List(items) => format!("[{}]", join_repr(items)),
            Value::Tuple(items) if items.len() == 1 => format!("({},)", items[0].repr()),
            Value::Tuple(items) => format!("({})", join_repr(items)),
            Value::Set(items) if items.is_empty() => "set()".into(),
            Value::Set(items) => format!("{{{}}}", join_repr(items)),
            Value::Dict(pairs) => {
                let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{}: {}", k.repr(), v.repr())).collect();
                format!("{{{}}}", body.join(", "))
            }
            Value::Symbol(s) => {
                let body: Vec<String> = s.fields.iter().map(|(k, v)| format!("{k}={}", v.repr())).collect();
                format!("{}({})", s.schema_name, body.join(", "))
            }
            Value::Schema(s) => format!("<schema {}>", s.name),
            Value::Object(o) => o.repr(),
            Value::Builtin(b) => format!("<built-in function {}>", b.name()),
            Value::Module(m) => format!("<module '{}'>", m.name()),
            Value::Method(recv, name) => format!("<method {}.{name}>", recv.type_name()),
            Value::HostMethod(o, name) => format!("<method {}.{name}>", o.type_name()),
            Value::Lambda(_) => "<lambda>".into(),
            Value::Match(m) => format!(
                "<re.Match object; span=({}, {}), match={}>",
                m.start,
                m.end,
                repr_str(m.groups[0].as_deref().unwrap_or(""))
            ),
            Value::DateTime(d) => d.format("%Y-%m-%d %H:%M:%S").to_string(),
            Value::Date(d) => d.format("%Y-%m-%d").to_string(),
            Value::Duration(d) => format_duration(d),
        }
    }
}

fn join_repr(items: &[Value]) -> String {
    items.iter().map(Value::repr).collect::<Vec<_>>().join(", ")
}

pub fn repr_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

fn format_duration(d: &TimeDelta) -> String {
    let total = d.num_seconds();
    let days = total.div_euclid(86_400);
    let rest = total.rem_euclid(86_400);
    let hms = format!("{}:{:02}:{:02}", rest / 3600, (rest % 3600) / 60, rest % 60);
    match days {
        0 => hms,
        1 | -1 => format!("{days} day, {hms}"),
        _ => format!("{days} days, {hms}"),
    }
}

/// Membership by equality; cross-kind mismatches count as "not equal".
pub fn contains(items: &[Value], needle: &Value) -> Result<bool, DslError> {
    for v in items {
        match v.equals(needle) {
            Ok(true) => return Ok(true),
            Ok(false) => {}
            Err(e) if e.kind == crate::error::DslErrorKind::TypeMismatch => {}
            Err(e) => return Err(e),
        }
    }
    Ok(false)
}

pub fn dict_get(pairs: &[(Value, Value)], key: &Value) -> Result<Option<Value>, DslError> {
    for (k, v) in pairs {
        if k.is_number() == key.is_number() && k.equals(key)? {
            return Ok(Some(v.clone()));
        }
    }
    Ok(None)
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::DslErrorKind;

    #[test]
    fn numeric_equality_across_kinds() {
        assert!(Value::Int(2).equals(&Value::Float(2.0)).unwrap());
        assert!(Value::Bool(true).equals(&Value::Int(1)).unwrap());
        assert!(!Value::Int(2).equals(&Value::None).unwrap());
    }

    #[test]
    fn number_string_equality_is_mismatch() {
        let e = Value::Int(2).equals(&Value::str("2")).unwrap_err();
        assert_eq!(e.kind, DslErrorKind::TypeMismatch);
    }

    #[test]
    fn python_style_repr() {
        assert_eq!(Value::Float(2.0).repr(), "2.0");
        assert_eq!(Value::str("it's").repr(), "\"it's\"");
        assert_eq!(Value::tuple(vec![Value::Int(1)]).repr(), "(1,)");
        assert_eq!(Value::list(vec![Value::str("a"), Value::None]).repr(), "['a', None]");
        assert_eq!(Value::Duration(TimeDelta::days(2)).repr(), "2 days, 0:00:00");
    }

    #[test]
    fn ordering_rejects_mixed_kinds() {
        assert_eq!(Value::Int(1).compare(&Value::Float(1.5)).unwrap(), Ordering::Less);
        assert!(Value::Int(1).compare(&Value::str("a")).is_err());
    }
}

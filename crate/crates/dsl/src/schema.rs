//! Declarative symbol schemas.
//!
//! A schema block looks like
//!
//! ```text
//! schema Product "A product row" {
//!     title: string required;
//!     price: number required ge=0;
//!     quantity: integer optional gt=0 description="units in cart";
//! }
//! schema Cart { items: list[Product] }
//! ```
//!
//! Kinds are `string`, `integer`, `number`, `boolean`, `list[K]`,
//! `optional[K]` and the name of another registered schema. Fields are
//! required unless marked `optional` (or declared with an `optional[..]`
//! kind or a `default=`). Constraints: `ge gt le lt` on numeric kinds,
//! `min_len max_len pattern` on string and list kinds.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, RwLock};

use indexmap::IndexMap;
use regex::Regex;
use serde_json::{Map as JsonMap, Number, Value as Json};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema parse error at line {line}: {reason}")]
pub struct SchemaParseError {
    pub line: usize,
    pub reason: String,
}

/// First violated constraint found while validating a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("field `{field}` violates {constraint} (observed {observed})")]
pub struct ValidationError {
    /// Dotted path of the failing field, e.g. `items[1].price`.
    pub field: String,
    /// Constraint in source form, e.g. `ge=0`, `required`, `type=number`.
    pub constraint: String,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("schema `{0}` is already registered")]
    Duplicate(String),
    #[error("schema `{schema}` references unknown schema `{missing}`")]
    UnknownReference { schema: String, missing: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    String,
    Integer,
    Number,
    Boolean,
    List(Box<FieldKind>),
    Object(String),
    Optional(Box<FieldKind>),
}

impl FieldKind {
    fn base(&self) -> &FieldKind {
        match self {
            FieldKind::Optional(inner) => inner.base(),
            other => other,
        }
    }

    fn is_numeric(&self) -> bool {
        matches!(self.base(), FieldKind::Integer | FieldKind::Number)
    }

    fn is_sized(&self) -> bool {
        matches!(self.base(), FieldKind::String | FieldKind::List(_))
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            FieldKind::Object(name) => out.push(name),
            FieldKind::List(inner) | FieldKind::Optional(inner) => inner.collect_refs(out),
            _ => {}
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::String => f.write_str("string"),
            FieldKind::Integer => f.write_str("integer"),
            FieldKind::Number => f.write_str("number"),
            FieldKind::Boolean => f.write_str("boolean"),
            FieldKind::List(inner) => write!(f, "list[{inner}]"),
            FieldKind::Object(name) => f.write_str(name),
            FieldKind::Optional(inner) => write!(f, "optional[{inner}]"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    pub ge: Option<f64>,
    pub gt: Option<f64>,
    pub le: Option<f64>,
    pub lt: Option<f64>,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub pattern: Option<String>,
}

impl Constraints {
    fn has_numeric(&self) -> bool {
        self.ge.is_some() || self.gt.is_some() || self.le.is_some() || self.lt.is_some()
    }

    fn has_sized(&self) -> bool {
        self.min_len.is_some() || self.max_len.is_some() || self.pattern.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub constraints: Constraints,
    pub required: bool,
    pub default: Option<Json>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaDecl {
    pub name: String,
    pub fields: Vec<FieldSpec>,
    pub description: String,
}

impl SchemaDecl {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Names of other schemas this one refers to.
    pub fn references(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for field in &self.fields {
            field.kind.collect_refs(&mut out);
        }
        out
    }

    /// Plain-text description used in extraction prompts.
    pub fn describe(&self) -> String {
        let mut out = format!("{self}");
        if !self.description.is_empty() {
            out = format!("# {}\n{out}", self.description);
        }
        out
    }
}

fn fmt_bound(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for SchemaDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "schema {}", self.name)?;
        if !self.description.is_empty() {
            write!(f, " {}", quote(&self.description))?;
        }
        f.write_str(" {")?;
        for field in &self.fields {
            write!(f, "\n    {}: {}", field.name, field.kind)?;
            f.write_str(if field.required { " required" } else { " optional" })?;
            let c = &field.constraints;
            for (key, val) in [("ge", c.ge), ("gt", c.gt), ("le", c.le), ("lt", c.lt)] {
                if let Some(v) = val {
                    write!(f, " {key}={}", fmt_bound(v))?;
                }
            }
            if let Some(v) = c.min_len {
                write!(f, " min_len={v}")?;
            }
            if let Some(v) = c.max_len {
                write!(f, " max_len={v}")?;
            }
            if let Some(p) = &c.pattern {
                write!(f, " pattern={}", quote(p))?;
            }
            if let Some(d) = &field.default {
                write!(f, " default={d}")?;
            }
            if !field.description.is_empty() {
                write!(f, " description={}", quote(&field.description))?;
            }
            f.write_str(";")?;
        }
        f.write_str("\n}")
    }
}

// ---------------------------------------------------------------------------
// Schema source parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64, String),
    Punct(char),
}

fn tokenize(source: &str) -> Result<Vec<(Tok, usize)>, SchemaParseError> {
    let mut out = Vec::new();
    let mut chars = source.chars().peekable();
    let mut line = 1;
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '"' | '\'' => {
                let quote_char = c;
                chars.next();
                let start_line = line;
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => {
                            return Err(SchemaParseError {
                                line: start_line,
                                reason: "unterminated string".into(),
                            })
                        }
                        Some('\\') => match chars.next() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some(other) => s.push(other),
                            None => {
                                return Err(SchemaParseError {
                                    line: start_line,
                                    reason: "unterminated string".into(),
                                })
                            }
                        },
                        Some(ch) if ch == quote_char => break,
                        Some(ch) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch)
                        }
                    }
                }
                out.push((Tok::Str(s), start_line));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut s = String::new();
                s.push(c);
                chars.next();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '.' || d == '+' || d == '-' {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let v: f64 = s.parse().map_err(|_| SchemaParseError {
                    line,
                    reason: format!("invalid number `{s}`"),
                })?;
                out.push((Tok::Num(v, s), line));
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(s), line));
            }
            '{' | '}' | ';' | ':' | '=' | '[' | ']' | ',' => {
                out.push((Tok::Punct(c), line));
                chars.next();
            }
            other => {
                return Err(SchemaParseError {
                    line,
                    reason: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

struct SchemaParser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    last_line: usize,
}

impl SchemaParser {
    fn line(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.last_line)
    }

    fn err<T>(&self, reason: impl Into<String>) -> Result<T, SchemaParseError> {
        Err(SchemaParseError {
            line: self.line(),
            reason: reason.into(),
        })
    }

    fn err_prev<T>(&self, reason: impl Into<String>) -> Result<T, SchemaParseError> {
        Err(SchemaParseError {
            line: self.last_line,
            reason: reason.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if let Some((_, line)) = &t {
            self.last_line = *line;
        }
        self.pos += 1;
        t.map(|t| t.0)
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), SchemaParseError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SchemaParseError> {
        match self.peek() {
            Some(Tok::Ident(_)) => match self.next() {
                Some(Tok::Ident(s)) => Ok(s),
                _ => unreachable!(),
            },
            _ => self.err(format!("expected {what}")),
        }
    }

    fn schema(&mut self) -> Result<SchemaDecl, SchemaParseError> {
        let kw = self.ident("`schema`")?;
        if kw != "schema" {
            return self.err(format!("expected `schema`, found `{kw}`"));
        }
        let name = self.ident("schema name")?;
        let mut description = String::new();
        if let Some(Tok::Str(_)) = self.peek() {
            if let Some(Tok::Str(s)) = self.next() {
                description = s;
            }
        }
        self.expect_punct('{')?;
        let mut fields: Vec<FieldSpec> = Vec::new();
        loop {
            if self.eat_punct('}') {
                break;
            }
            if self.eat_punct(';') {
                continue;
            }
            let field_line = self.line();
            let field = self.field()?;
            if fields.iter().any(|f| f.name == field.name) {
                return Err(SchemaParseError {
                    line: field_line,
                    reason: format!("duplicate field `{}`", field.name),
                });
            }
            fields.push(field);
            if self.eat_punct('}') {
                break;
            }
            self.expect_punct(';')?;
        }
        Ok(SchemaDecl {
            name,
            fields,
            description,
        })
    }

    fn kind(&mut self) -> Result<FieldKind, SchemaParseError> {
        let name = self.ident("field kind")?;
        Ok(match name.as_str() {
            "string" | "str" => FieldKind::String,
            "integer" | "int" => FieldKind::Integer,
            "number" | "float" => FieldKind::Number,
            "boolean" | "bool" => FieldKind::Boolean,
            "list" | "optional" => {
                self.expect_punct('[')?;
                let inner = self.kind()?;
                self.expect_punct(']')?;
                if name == "list" {
                    FieldKind::List(Box::new(inner))
                } else {
                    FieldKind::Optional(Box::new(inner))
                }
            }
            other if other.chars().next().is_some_and(|c| c.is_uppercase()) => {
                FieldKind::Object(other.to_string())
            }
            other => return self.err(format!("unknown kind `{other}`")),
        })
    }

    fn literal(&mut self) -> Result<Json, SchemaParseError> {
        match self.next() {
            Some(Tok::Str(s)) => Ok(Json::String(s)),
            Some(Tok::Num(v, text)) => {
                if let Ok(i) = text.parse::<i64>() {
                    Ok(Json::from(i))
                } else {
                    Number::from_f64(v)
                        .map(Json::Number)
                        .ok_or_else(|| SchemaParseError {
                            line: self.last_line,
                            reason: "non-finite number".into(),
                        })
                }
            }
            Some(Tok::Ident(s)) => match s.as_str() {
                "true" | "True" => Ok(Json::Bool(true)),
                "false" | "False" => Ok(Json::Bool(false)),
                "null" | "None" | "none" => Ok(Json::Null),
                _ => self.err_prev(format!("unexpected `{s}` in literal")),
            },
            Some(Tok::Punct('[')) => {
                let mut items = Vec::new();
                if !self.eat_punct(']') {
                    loop {
                        items.push(self.literal()?);
                        if self.eat_punct(']') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                Ok(Json::Array(items))
            }
            _ => self.err_prev("expected a literal value"),
        }
    }

    fn number(&mut self, key: &str) -> Result<f64, SchemaParseError> {
        match self.next() {
            Some(Tok::Num(v, _)) => Ok(v),
            _ => self.err_prev(format!("`{key}` needs a number")),
        }
    }

    fn count(&mut self, key: &str) -> Result<usize, SchemaParseError> {
        match self.next() {
            Some(Tok::Num(v, _)) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
            _ => self.err_prev(format!("`{key}` needs a non-negative integer")),
        }
    }

    fn field(&mut self) -> Result<FieldSpec, SchemaParseError> {
        let name = self.ident("field name")?;
        self.expect_punct(':')?;
        let kind = self.kind()?;
        let mut required: Option<bool> = None;
        let mut constraints = Constraints::default();
        let mut default = None;
        let mut description = String::new();
        while let Some(Tok::Ident(word)) = self.peek().cloned() {
            self.pos += 1;
            match word.as_str() {
                "required" => required = Some(true),
                "optional" => required = Some(false),
                key => {
                    self.expect_punct('=')?;
                    match key {
                        "ge" => constraints.ge = Some(self.number(key)?),
                        "gt" => constraints.gt = Some(self.number(key)?),
                        "le" => constraints.le = Some(self.number(key)?),
                        "lt" => constraints.lt = Some(self.number(key)?),
                        "min_len" => constraints.min_len = Some(self.count(key)?),
                        "max_len" => constraints.max_len = Some(self.count(key)?),
                        "pattern" => match self.next() {
                            Some(Tok::Str(p)) => {
                                if let Err(e) = Regex::new(&p) {
                                    return self.err(format!("invalid pattern: {e}"));
                                }
                                constraints.pattern = Some(p)
                            }
                            _ => return self.err("`pattern` needs a string"),
                        },
                        "default" => default = Some(self.literal()?),
                        "description" => match self.next() {
                            Some(Tok::Str(d)) => description = d,
                            _ => return self.err("`description` needs a string"),
                        },
                        other => return self.err(format!("unknown modifier `{other}`")),
                    }
                }
            }
        }
        if constraints.has_numeric() && !kind.is_numeric() {
            return self.err(format!(
                "numeric constraint on field `{name}` of kind {kind}"
            ));
        }
        if constraints.has_sized() && !kind.is_sized() {
            return self.err(format!(
                "length/pattern constraint on field `{name}` of kind {kind}"
            ));
        }
        let required = match required {
            Some(true) if default.is_some() => {
                return self.err(format!("required field `{name}` cannot have a default"))
            }
            Some(r) => r,
            None => default.is_none() && !matches!(kind, FieldKind::Optional(_)),
        };
        Ok(FieldSpec {
            name,
            kind,
            constraints,
            required,
            default,
            description,
        })
    }
}

/// Parses every schema block in `source`.
pub fn parse_schemas(source: &str) -> Result<Vec<SchemaDecl>, SchemaParseError> {
    let toks = tokenize(source)?;
    let mut parser = SchemaParser {
        toks,
        pos: 0,
        last_line: 1,
    };
    let mut out: Vec<SchemaDecl> = Vec::new();
    while parser.peek().is_some() {
        let line = parser.line();
        let decl = parser.schema()?;
        if out.iter().any(|d| d.name == decl.name) {
            return Err(SchemaParseError {
                line,
                reason: format!("duplicate schema `{}`", decl.name),
            });
        }
        out.push(decl);
    }
    Ok(out)
}

/// Parses exactly one schema block.
pub fn parse_schema_source(source: &str) -> Result<SchemaDecl, SchemaParseError> {
    let mut all = parse_schemas(source)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        0 => Err(SchemaParseError {
            line: 1,
            reason: "no schema block found".into(),
        }),
        _ => Err(SchemaParseError {
            line: 1,
            reason: "expected a single schema block".into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Validated values

/// A validated field value.
#[derive(Debug, Clone, PartialEq)]
pub enum SymValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<SymValue>),
    Object(SymbolInstance),
}

impl SymValue {
    pub fn to_json(&self) -> Json {
        match self {
            SymValue::Null => Json::Null,
            SymValue::Bool(b) => Json::Bool(*b),
            SymValue::Int(i) => Json::from(*i),
            SymValue::Float(f) => Number::from_f64(*f).map(Json::Number).unwrap_or(Json::Null),
            SymValue::Str(s) => Json::String(s.clone()),
            SymValue::List(items) => Json::Array(items.iter().map(SymValue::to_json).collect()),
            SymValue::Object(inst) => inst.to_json(),
        }
    }
}

/// A schema instance whose values passed validation. Every declared field
/// has an entry; absent optional fields hold `Null`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolInstance {
    pub schema_name: String,
    pub values: IndexMap<String, SymValue>,
}

impl SymbolInstance {
    pub fn get(&self, field: &str) -> Option<&SymValue> {
        self.values.get(field)
    }

    pub fn to_json(&self) -> Json {
        let mut map = JsonMap::new();
        for (k, v) in &self.values {
            map.insert(k.clone(), v.to_json());
        }
        Json::Object(map)
    }
}

// ---------------------------------------------------------------------------
// Registry

/// Named schemas available to one evaluation context.
#[derive(Debug, Default)]
pub struct SchemaRegistry {
    schemas: RwLock<IndexMap<String, Arc<SchemaDecl>>>,
}

impl Clone for SchemaRegistry {
    fn clone(&self) -> Self {
        SchemaRegistry {
            schemas: RwLock::new(self.read().clone()),
        }
    }
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, IndexMap<String, Arc<SchemaDecl>>> {
        self.schemas.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a schema. Referenced schemas must already be registered,
    /// which also rules out recursive declarations.
    pub fn register(&self, decl: SchemaDecl) -> Result<Arc<SchemaDecl>, RegistryError> {
        let mut map = self.schemas.write().unwrap_or_else(|e| e.into_inner());
        if map.contains_key(&decl.name) {
            return Err(RegistryError::Duplicate(decl.name));
        }
        for r in decl.references() {
            if !map.contains_key(r) {
                return Err(RegistryError::UnknownReference {
                    schema: decl.name.clone(),
                    missing: r.to_string(),
                });
            }
        }
        let decl = Arc::new(decl);
        map.insert(decl.name.clone(), decl.clone());
        Ok(decl)
    }

    /// Registers a batch in dependency order, replacing any same-named
    /// entries already present.
    pub fn register_all_replacing(
        &self,
        decls: impl IntoIterator<Item = SchemaDecl>,
    ) -> Result<(), RegistryError> {
        let mut pending: Vec<SchemaDecl> = decls.into_iter().collect();
        let mut seen = HashSet::new();
        for d in &pending {
            if !seen.insert(d.name.clone()) {
                return Err(RegistryError::Duplicate(d.name.clone()));
            }
        }
        {
            let mut map = self.schemas.write().unwrap_or_else(|e| e.into_inner());
            for d in &pending {
                map.shift_remove(&d.name);
            }
        }
        while !pending.is_empty() {
            let ready = {
                let map = self.read();
                pending
                    .iter()
                    .position(|d| d.references().iter().all(|r| map.contains_key(*r)))
            };
            match ready {
                Some(i) => {
                    let d = pending.remove(i);
                    self.register(d)?;
                }
                None => {
                    let d = &pending[0];
                    let map = self.read();
                    let missing = d
                        .references()
                        .into_iter()
                        .find(|r| !map.contains_key(*r))
                        .unwrap_or_default()
                        .to_string();
                    return Err(RegistryError::UnknownReference {
                        schema: d.name.clone(),
                        missing,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<SchemaDecl>> {
        self.read().get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.read().contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.read().keys().cloned().collect()
    }

    /// Validates `candidate` against the named schema.
    pub fn validate(&self, schema: &SchemaDecl, candidate: &Json) -> Result<SymbolInstance, ValidationError> {
        validate_object(self, schema, candidate, "")
    }
}

/// Validates a candidate against a schema with no nested object references.
pub fn validate(schema: &SchemaDecl, candidate: &Json) -> Result<SymbolInstance, ValidationError> {
    validate_object(&SchemaRegistry::new(), schema, candidate, "")
}

fn observed(v: &Json) -> String {
    let s = v.to_string();
    if s.chars().count() > 60 {
        let cut: String = s.chars().take(57).collect();
        format!("{cut}...")
    } else {
        s
    }
}

fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn validate_object(
    registry: &SchemaRegistry,
    schema: &SchemaDecl,
    candidate: &Json,
    path: &str,
) -> Result<SymbolInstance, ValidationError> {
    let obj = match candidate {
        Json::Object(map) => map,
        other => {
            return Err(ValidationError {
                field: if path.is_empty() { schema.name.clone() } else { path.to_string() },
                constraint: format!("type={}", schema.name),
                observed: observed(other),
            })
        }
    };
    let mut values = IndexMap::new();
    for field in &schema.fields {
        let fpath = join_path(path, &field.name);
        let supplied = obj.get(&field.name).filter(|v| !v.is_null());
        let value = match supplied {
            Some(v) => validate_value(registry, field, &field.kind, v, &fpath)?,
            None => {
                let nullable = matches!(field.kind, FieldKind::Optional(_));
                if field.required && !nullable {
                    return Err(ValidationError {
                        field: fpath,
                        constraint: "required".into(),
                        observed: obj.get(&field.name).map(observed).unwrap_or_else(|| "missing".into()),
                    });
                }
                match &field.default {
                    Some(d) if !d.is_null() => validate_value(registry, field, &field.kind, d, &fpath)?,
                    _ => SymValue::Null,
                }
            }
        };
        values.insert(field.name.clone(), value);
    }
    Ok(SymbolInstance {
        schema_name: schema.name.clone(),
        values,
    })
}

/// Parses page-style numeric text such as `$1,299.00` or `-5`.
pub fn coerce_numeric_text(text: &str) -> Option<f64> {
    let mut s: String = text
        .trim()
        .chars()
        .filter(|c| !matches!(c, '$' | '€' | '£' | '¥' | '₹') && !c.is_whitespace())
        .collect();
    if s.is_empty() {
        return None;
    }
    if s.contains(',') {
        // Only accept commas as thousands separators: d{1,3}(,ddd)+ before any '.'
        let (int_part, frac) = match s.split_once('.') {
            Some((i, f)) => (i.to_string(), Some(f.to_string())),
            None => (s.clone(), None),
        };
        let digits = int_part.trim_start_matches(['-', '+']);
        let groups: Vec<&str> = digits.split(',').collect();
        let ok = !groups[0].is_empty()
            && groups[0].len() <= 3
            && groups[1..].iter().all(|g| g.len() == 3)
            && groups.iter().all(|g| g.chars().all(|c| c.is_ascii_digit()));
        if !ok {
            return None;
        }
        s = int_part.replace(',', "");
        if let Some(f) = frac {
            s.push('.');
            s.push_str(&f);
        }
    }
    if !s
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
    {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn type_error(kind: &FieldKind, v: &Json, path: &str) -> ValidationError {
    ValidationError {
        field: path.to_string(),
        constraint: format!("type={kind}"),
        observed: observed(v),
    }
}

fn check_numeric(field: &FieldSpec, value: f64, raw: &Json, path: &str) -> Result<(), ValidationError> {
    let c = &field.constraints;
    let checks: [(&str, Option<f64>, fn(f64, f64) -> bool); 4] = [
        ("ge", c.ge, |v, b| v >= b),
        ("gt", c.gt, |v, b| v > b),
        ("le", c.le, |v, b| v <= b),
        ("lt", c.lt, |v, b| v < b),
    ];
    for (name, bound, ok) in checks {
        if let Some(b) = bound {
            if !ok(value, b) {
                return Err(ValidationError {
                    field: path.to_string(),
                    constraint: format!("{name}={}", fmt_bound(b)),
                    observed: observed(raw),
                });
            }
        }
    }
    Ok(())
}

fn check_len(field: &FieldSpec, len: usize, raw: &Json, path: &str) -> Result<(), ValidationError> {
    let c = &field.constraints;
    if let Some(min) = c.min_len {
        if len < min {
            return Err(ValidationError {
                field: path.to_string(),
                constraint: format!("min_len={min}"),
                observed: observed(raw),
            });
        }
    }
    if let Some(max) = c.max_len {
        if len > max {
            return Err(ValidationError {
                field: path.to_string(),
                constraint: format!("max_len={max}"),
                observed: observed(raw),
            });
        }
    }
    Ok(())
}

fn validate_value(
    registry: &SchemaRegistry,
    field: &FieldSpec,
    kind: &FieldKind,
    v: &Json,
    path: &str,
) -> Result<SymValue, ValidationError> {
    match kind {
        FieldKind::Optional(inner) => {
            if v.is_null() {
                Ok(SymValue::Null)
            } else {
                validate_value(registry, field, inner, v, path)
            }
        }
        FieldKind::String => match v {
            Json::String(s) => {
                check_len(field, s.chars().count(), v, path)?;
                if let Some(p) = &field.constraints.pattern {
                    let re = Regex::new(p).map_err(|_| type_error(kind, v, path))?;
                    if !re.is_match(s) {
                        return Err(ValidationError {
                            field: path.to_string(),
                            constraint: format!("pattern={}", quote(p)),
                            observed: observed(v),
                        });
                    }
                }
                Ok(SymValue::Str(s.clone()))
            }
            _ => Err(type_error(kind, v, path)),
        },
        FieldKind::Boolean => match v {
            Json::Bool(b) => Ok(SymValue::Bool(*b)),
            _ => Err(type_error(kind, v, path)),
        },
        FieldKind::Integer => {
            let n = match v {
                Json::Number(n) => n
                    .as_i64()
                    .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0 && f.abs() < 9e15).map(|f| f as i64)),
                Json::String(s) => coerce_numeric_text(s)
                    .filter(|f| f.fract() == 0.0 && f.abs() < 9e15)
                    .map(|f| f as i64),
                _ => None,
            }
            .ok_or_else(|| type_error(kind, v, path))?;
            check_numeric(field, n as f64, v, path)?;
            Ok(SymValue::Int(n))
        }
        FieldKind::Number => {
            let n = match v {
                Json::Number(n) => n.as_f64(),
                Json::String(s) => coerce_numeric_text(s),
                _ => None,
            }
            .ok_or_else(|| type_error(kind, v, path))?;
            check_numeric(field, n, v, path)?;
            Ok(SymValue::Float(n))
        }
        FieldKind::List(inner) => match v {
            Json::Array(items) => {
                check_len(field, items.len(), v, path)?;
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    let ipath = format!("{path}[{i}]");
                    if item.is_null() && !matches!(**inner, FieldKind::Optional(_)) {
                        return Err(type_error(inner, item, &ipath));
                    }
                    out.push(validate_value(registry, &plain_field(field), inner, item, &ipath)?);
                }
                Ok(SymValue::List(out))
            }
            _ => Err(type_error(kind, v, path)),
        },
        FieldKind::Object(name) => {
            let schema = registry.get(name).ok_or_else(|| ValidationError {
                field: path.to_string(),
                constraint: format!("type={name}"),
                observed: "unregistered schema".into(),
            })?;
            Ok(SymValue::Object(validate_object(registry, &schema, v, path)?))
        }
    }
}

/// Element-level validation of a list does not inherit the list's own
/// length constraints.
fn plain_field(field: &FieldSpec) -> FieldSpec {
    FieldSpec {
        name: field.name.clone(),
        kind: field.kind.clone(),
        constraints: Constraints::default(),
        required: true,
        default: None,
        description: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const PRODUCT: &str =
        "schema Product { title: string required; price: number required ge=0; quantity: integer optional gt=0 }";

    fn shop_registry() -> SchemaRegistry {
        let reg = SchemaRegistry::new();
        reg.register(parse_schema_source(PRODUCT).unwrap()).unwrap();
        reg.register(parse_schema_source("schema Cart { items: list[Product] required }").unwrap())
            .unwrap();
        reg
    }

    #[test]
    fn parses_product_schema() {
        let s = parse_schema_source(PRODUCT).unwrap();
        assert_eq!(s.name, "Product");
        assert_eq!(s.fields.len(), 3);
        assert!(s.fields[0].required);
        assert_eq!(s.fields[1].constraints.ge, Some(0.0));
        assert!(!s.fields[2].required);
        assert_eq!(s.fields[2].constraints.gt, Some(0.0));
    }

    #[test]
    fn rejects_duplicate_field() {
        let err = parse_schema_source("schema X { a: string; a: integer }").unwrap_err();
        assert!(err.reason.contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_numeric_constraint_on_string() {
        let err = parse_schema_source("schema Y { n: string ge=0 }").unwrap_err();
        assert!(err.reason.contains("numeric constraint"), "{err}");
    }

    #[test]
    fn rejects_unknown_kind_and_required_default() {
        assert!(parse_schema_source("schema Z { a: money }").is_err());
        let err = parse_schema_source("schema Z { a: integer required default=1 }").unwrap_err();
        assert!(err.reason.contains("default"));
        assert!(parse_schema_source("schema Z { a: list[string] min_len=1; b: integer max_len=2 }").is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_schema_source("schema P {\n a: string;\n b: integer ge=x\n}").unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn display_reparses_to_same_decl() {
        let src = "schema P \"d\" { a: optional[integer] ge=1 le=5 description=\"x\"; b: list[string] min_len=1 pattern=\"^a\"; c: boolean default=true }";
        let decl = parse_schema_source(src).unwrap();
        let again = parse_schema_source(&decl.to_string()).unwrap();
        assert_eq!(decl, again);
    }

    #[test]
    fn validates_product_without_quantity() {
        let s = parse_schema_source(PRODUCT).unwrap();
        let inst = validate(&s, &json!({"title": "camera", "price": 129.0})).unwrap();
        assert_eq!(inst.get("quantity"), Some(&SymValue::Null));
        assert_eq!(inst.get("price"), Some(&SymValue::Float(129.0)));
    }

    #[test]
    fn negative_price_violates_ge() {
        let s = parse_schema_source(PRODUCT).unwrap();
        let err = validate(&s, &json!({"title": "camera", "price": -1})).unwrap_err();
        assert_eq!(err.field, "price");
        assert_eq!(err.constraint, "ge=0");
        assert_eq!(err.observed, "-1");
    }

    #[test]
    fn reports_earliest_declared_field() {
        let s = parse_schema_source(PRODUCT).unwrap();
        let err = validate(&s, &json!({"quantity": 0, "price": -1})).unwrap_err();
        assert_eq!(err.field, "title");
        let err = validate(&s, &json!({"title": "t", "quantity": 0, "price": -1})).unwrap_err();
        assert_eq!(err.field, "price");
    }

    #[test]
    fn nested_cart_items_validate_individually() {
        let reg = shop_registry();
        let cart = reg.get("Cart").unwrap();
        let product = reg.get("Product").unwrap();
        let items = json!([{"title":"a","price":2.0},{"title":"b","price":3.0}]);
        let inst = reg.validate(&cart, &json!({ "items": items })).unwrap();
        let SymValue::List(list) = inst.get("items").unwrap() else { panic!() };
        assert_eq!(list.len(), 2);
        for (got, raw) in list.iter().zip(items.as_array().unwrap()) {
            let manual = validate(&product, raw).unwrap();
            assert_eq!(got, &SymValue::Object(manual));
        }
        let err = reg
            .validate(&cart, &json!({"items": [{"title": "a", "price": 1}, {"title": "b", "price": -3}]}))
            .unwrap_err();
        assert_eq!(err.field, "items[1].price");
    }

    #[test]
    fn coerces_currency_strings() {
        let s = parse_schema_source(PRODUCT).unwrap();
        let inst = validate(&s, &json!({"title": "t", "price": "$1,299.50", "quantity": "5"})).unwrap();
        assert_eq!(inst.get("price"), Some(&SymValue::Float(1299.5)));
        assert_eq!(inst.get("quantity"), Some(&SymValue::Int(5)));
        assert!(validate(&s, &json!({"title": "t", "price": "1,5"})).is_err());
        assert!(validate(&s, &json!({"title": "t", "price": 1, "quantity": "2.5"})).is_err());
    }

    #[test]
    fn defaults_fill_only_absent_fields() {
        let s = parse_schema_source("schema D { a: integer default=3; b: string optional }").unwrap();
        let inst = validate(&s, &json!({})).unwrap();
        assert_eq!(inst.get("a"), Some(&SymValue::Int(3)));
        let inst = validate(&s, &json!({"a": 9})).unwrap();
        assert_eq!(inst.get("a"), Some(&SymValue::Int(9)));
    }

    #[test]
    fn extra_fields_are_ignored() {
        let s = parse_schema_source(PRODUCT).unwrap();
        let inst = validate(&s, &json!({"title": "t", "price": 1, "sku": "x"})).unwrap();
        assert!(inst.get("sku").is_none());
    }

    #[test]
    fn registry_rejects_duplicates_and_dangling_refs() {
        let reg = SchemaRegistry::new();
        assert!(matches!(
            reg.register(parse_schema_source("schema Cart { items: list[Product] }").unwrap()),
            Err(RegistryError::UnknownReference { .. })
        ));
        reg.register(parse_schema_source(PRODUCT).unwrap()).unwrap();
        assert!(matches!(
            reg.register(parse_schema_source(PRODUCT).unwrap()),
            Err(RegistryError::Duplicate(_))
        ));
        // batch registration resolves order
        let reg = SchemaRegistry::new();
        let decls = parse_schemas(&format!("schema Cart {{ items: list[Product] }}\n{PRODUCT}")).unwrap();
        reg.register_all_replacing(decls).unwrap();
        assert_eq!(reg.names(), vec!["Product", "Cart"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn product_candidate() -> impl Strategy<Value = Json> {
            (
                prop::option::of("[a-z]{0,6}"),
                prop::option::of(-5.0f64..50.0),
                prop::option::of(-2i64..5),
            )
                .prop_map(|(t, p, q)| {
                    let mut m = JsonMap::new();
                    if let Some(t) = t {
                        m.insert("title".into(), Json::String(t));
                    }
                    if let Some(p) = p {
                        m.insert("price".into(), json!(p));
                    }
                    if let Some(q) = q {
                        m.insert("quantity".into(), json!(q));
                    }
                    Json::Object(m)
                })
        }

        proptest! {
            #[test]
            fn validation_is_idempotent(c in product_candidate()) {
                let s = parse_schema_source(PRODUCT).unwrap();
                if let Ok(first) = validate(&s, &c) {
                    let second = validate(&s, &first.to_json()).unwrap();
                    prop_assert_eq!(first, second);
                }
            }

            #[test]
            fn supplied_values_survive_defaults(a in -100i64..100) {
                let s = parse_schema_source("schema D { a: integer default=3 }").unwrap();
                let inst = validate(&s, &json!({"a": a})).unwrap();
                prop_assert_eq!(inst.get("a"), Some(&SymValue::Int(a)));
            }
        }
    }
}

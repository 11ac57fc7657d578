use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Source location: 1-based line and column, end column exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
    pub end_line: usize,
    pub end_col: usize,
}

impl Span {
    pub fn new(line: usize, col: usize, end_line: usize, end_col: usize) -> Self {
        Span {
            line,
            col,
            end_line,
            end_col,
        }
    }

    pub fn to(self, other: Span) -> Span {
        Span {
            line: self.line,
            col: self.col,
            end_line: other.end_line,
            end_col: other.end_col,
        }
    }

    /// Slices the spanned text out of `source`.
    pub fn slice<'a>(&self, source: &'a str) -> String {
        let lines: Vec<&str> = source.lines().collect();
        if self.line == 0 || self.line > lines.len() {
            return String::new();
        }
        let char_range = |line: &str, from: usize, to: Option<usize>| -> String {
            let chars: Vec<char> = line.chars().collect();
            let start = from.saturating_sub(1).min(chars.len());
            let end = to.map(|t| t.saturating_sub(1).min(chars.len())).unwrap_or(chars.len());
            chars[start..end.max(start)].iter().collect()
        };
        if self.line == self.end_line {
            return char_range(lines[self.line - 1], self.col, Some(self.end_col));
        }
        let mut out = char_range(lines[self.line - 1], self.col, None);
        for l in self.line + 1..self.end_line.min(lines.len() + 1) {
            out.push('\n');
            out.push_str(lines[l - 1]);
        }
        if self.end_line <= lines.len() {
            out.push('\n');
            out.push_str(&char_range(lines[self.end_line - 1], 1, Some(self.end_col)));
        }
        out
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == self.end_line {
            write!(f, "{}:{}-{}", self.line, self.col, self.end_col)
        } else {
            write!(f, "{}:{}-{}:{}", self.line, self.col, self.end_line, self.end_col)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DslErrorKind {
    ParseError,
    UnknownName,
    UnknownAttribute,
    ForbiddenCall,
    TypeMismatch,
    RuntimeFault,
    BudgetExceeded,
}

impl DslErrorKind {
    pub const ALL: [DslErrorKind; 7] = [
        DslErrorKind::ParseError,
        DslErrorKind::UnknownName,
        DslErrorKind::UnknownAttribute,
        DslErrorKind::ForbiddenCall,
        DslErrorKind::TypeMismatch,
        DslErrorKind::RuntimeFault,
        DslErrorKind::BudgetExceeded,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DslErrorKind::ParseError => "parse_error",
            DslErrorKind::UnknownName => "unknown_name",
            DslErrorKind::UnknownAttribute => "unknown_attribute",
            DslErrorKind::ForbiddenCall => "forbidden_call",
            DslErrorKind::TypeMismatch => "type_mismatch",
            DslErrorKind::RuntimeFault => "runtime_fault",
            DslErrorKind::BudgetExceeded => "budget_exceeded",
        }
    }
}

impl fmt::Display for DslErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}: {message}{}", span.map(|s| format!(" at {s}")).unwrap_or_default())]
pub struct DslError {
    pub kind: DslErrorKind,
    pub message: String,
    pub span: Option<Span>,
}

impl DslError {
    pub fn new(kind: DslErrorKind, message: impl Into<String>) -> Self {
        DslError {
            kind,
            message: message.into(),
            span: None,
        }
    }

    pub fn at(mut self, span: Span) -> Self {
        if self.span.is_none() {
            self.span = Some(span);
        }
        self
    }

    pub fn parse(message: impl Into<String>, span: Span) -> Self {
        DslError::new(DslErrorKind::ParseError, message).at(span)
    }

    pub fn type_mismatch(message: impl Into<String>) -> Self {
        DslError::new(DslErrorKind::TypeMismatch, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        DslError::new(DslErrorKind::RuntimeFault, message)
    }

    pub fn unknown_attribute(type_name: &str, attr: &str) -> Self {
        DslError::new(
            DslErrorKind::UnknownAttribute,
            format!("{type_name} has no attribute `{attr}`"),
        )
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        DslError::new(DslErrorKind::ForbiddenCall, message)
    }
}

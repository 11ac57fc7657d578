use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DslError, DslErrorKind, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Error,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::Fail => "fail",
            VerdictStatus::Error => "error",
        })
    }
}

/// Outcome of evaluating one program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub message: String,
    pub failing_span: Option<Span>,
    pub error_kind: Option<DslErrorKind>,
}

impl Verdict {
    pub fn pass() -> Self {
        Verdict {
            status: VerdictStatus::Pass,
            message: String::new(),
            failing_span: None,
            error_kind: None,
        }
    }

    pub fn fail(message: impl Into<String>, span: Span) -> Self {
        Verdict {
            status: VerdictStatus::Fail,
            message: message.into(),
            failing_span: Some(span),
            error_kind: None,
        }
    }

    pub fn error(err: &DslError) -> Self {
        Verdict {
            status: VerdictStatus::Error,
            message: err.message.clone(),
            failing_span: err.span,
            error_kind: Some(err.kind),
        }
    }

    pub fn is_pass(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.status)?;
        if let Some(k) = self.error_kind {
            write!(f, " ({k})")?;
        }
        if !self.message.is_empty() {
            write!(f, ": {}", self.message)?;
        }
        if let Some(s) = self.failing_span {
            write!(f, " at {s}")?;
        }
        Ok(())
    }
}

/// Coarse grouping of non-passing verdicts used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureFamily {
    SymbolMisuse,
    DslMisuse,
    RuntimeFault,
    AssertionFail,
}

impl FailureFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureFamily::SymbolMisuse => "symbol_misuse",
            FailureFamily::DslMisuse => "dsl_misuse",
            FailureFamily::RuntimeFault => "runtime_fault",
            FailureFamily::AssertionFail => "assertion_fail",
        }
    }

    pub fn of_kind(kind: DslErrorKind) -> FailureFamily {
        match kind {
            DslErrorKind::UnknownName => FailureFamily::SymbolMisuse,
            DslErrorKind::UnknownAttribute | DslErrorKind::ForbiddenCall | DslErrorKind::ParseError => {
                FailureFamily::DslMisuse
            }
            DslErrorKind::TypeMismatch | DslErrorKind::RuntimeFault | DslErrorKind::BudgetExceeded => {
                FailureFamily::RuntimeFault
            }
        }
    }
}

impl fmt::Display for FailureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a non-passing verdict to its failure family; `None` for a pass.
pub fn classify_failure(verdict: &Verdict) -> Option<FailureFamily> {
    match verdict.status {
        VerdictStatus::Pass => None,
        VerdictStatus::Fail => Some(FailureFamily::AssertionFail),
        VerdictStatus::Error => Some(
            verdict
                .error_kind
                .map(FailureFamily::of_kind)
                .unwrap_or(FailureFamily::RuntimeFault),
        ),
    }
}

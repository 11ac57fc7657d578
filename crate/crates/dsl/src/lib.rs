//! Assertion language for GUI test oracles.
//!
//! Programs are a small Python-like language: `assert` statements, local
//! bindings, `if`/`for`/`while`, comprehensions, lambdas and a closed set of
//! whitelisted functions. They are evaluated by a sandboxed tree-walking
//! interpreter with a step budget; nothing outside the supplied bindings is
//! reachable.
//!
//! ```
//! use std::sync::Arc;
//! use vigil_dsl::{evaluate, parse, EvalEnvironment, SchemaRegistry, Value, VerdictStatus};
//!
//! let program = parse("assert sum(x * 2 for x in xs) == 12, 'bad total'").unwrap();
//! let mut env = EvalEnvironment::new(Value::None, Value::None, Arc::new(SchemaRegistry::new()));
//! env.bind("xs", Value::list(vec![Value::Int(1), Value::Int(2), Value::Int(3)]));
//! assert_eq!(evaluate(&program, &env).status, VerdictStatus::Pass);
//! ```

pub mod ast;
mod builtins;
pub mod check;
pub mod error;
mod interp;
pub mod lexer;
pub mod model;
pub mod parser;
pub mod program;
pub mod schema;
pub mod value;
pub mod verdict;

pub use builtins::FUNCTION_WHITELIST;
pub use check::{check_program, CheckContext};
pub use error::{DslError, DslErrorKind, Span};
pub use interp::{is_forbidden_name, FORBIDDEN_NAMES};
pub use model::{HostKind, Ty};
pub use program::{
    evaluate, evaluate_counted, evaluate_expression, evaluate_source, parse, render_template, AssertionProgram, EvalEnvironment, Evaluation,
    DEFAULT_STEP_BUDGET,
};
pub use schema::{
    coerce_numeric_text, parse_schema_source, parse_schemas, FieldKind, FieldSpec, RegistryError, SchemaDecl,
    SchemaParseError, SchemaRegistry, SymValue, SymbolInstance, ValidationError,
};
pub use value::{HostObject, Value};
pub use verdict::{classify_failure, FailureFamily, Verdict, VerdictStatus};

/// Language reference handed to oracle inference prompts.
pub const DSL_REFERENCE: &str = include_str!("../DSL.md");

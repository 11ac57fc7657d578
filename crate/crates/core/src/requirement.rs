//! Requirement parsing into (condition, action, expectation) steps.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::gateway::{json_payload, GatewayError, ModelGateway, Prompt, RoleTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Plain,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub raw_text: String,
    pub source_kind: SourceKind,
}

impl Requirement {
    pub fn plain(text: impl Into<String>) -> Self {
        Requirement {
            raw_text: text.into(),
            source_kind: SourceKind::Plain,
        }
    }

    pub fn structured(text: impl Into<String>) -> Self {
        Requirement {
            raw_text: text.into(),
            source_kind: SourceKind::Structured,
        }
    }

    /// `.yaml`/`.yml` files are structured step lists; anything else is plain text.
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let structured = matches!(path.extension().and_then(|e| e.to_str()), Some("yaml" | "yml"));
        Ok(if structured {
            Requirement::structured(text)
        } else {
            Requirement::plain(text)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPart {
    Condition,
    Action,
    Expectation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestStep {
    /// 1-based.
    pub index: usize,
    pub condition: String,
    pub action: String,
    pub expectation: String,
    /// Parts that were inferred or filled in rather than stated.
    pub inferred: BTreeSet<StepPart>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRequirement {
    pub steps: Vec<TestStep>,
    pub provenance: Vec<String>,
}

#[derive(Debug, Error)]
pub enum RequirementError {
    #[error("requirement text is empty")]
    Empty,
    #[error("structured requirement is malformed: {0}")]
    Structured(String),
    #[error("requirement parse failed after repair; raw output: {raw}")]
    Unparseable { raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RawStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expectation: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct StructuredDoc {
    steps: Vec<RawStep>,
}

fn normalize(steps: Vec<RawStep>) -> Result<Vec<TestStep>, String> {
    steps
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let action = s.action.map(|a| a.trim().to_string()).unwrap_or_default();
            if action.is_empty() {
                return Err(format!("step {} has no action", i + 1));
            }
            let mut inferred = BTreeSet::new();
            let mut part = |v: Option<String>, p: StepPart| {
                let v = v.map(|x| x.trim().to_string()).unwrap_or_default();
                if v.is_empty() {
                    inferred.insert(p);
                }
                v
            };
            let condition = part(s.condition, StepPart::Condition);
            let expectation = part(s.expectation, StepPart::Expectation);
            Ok(TestStep {
                index: i + 1,
                condition,
                action,
                expectation,
                inferred,
            })
        })
        .collect()
}

fn parse_structured(text: &str) -> Result<Vec<TestStep>, RequirementError> {
    let doc: StructuredDoc = serde_yaml::from_str(text).map_err(|e| RequirementError::Structured(e.to_string()))?;
    normalize(doc.steps).map_err(RequirementError::Structured)
}

fn steps_from_response(raw: &str) -> Result<Vec<TestStep>, String> {
    let json: Json = serde_json::from_str(json_payload(raw)).map_err(|e| format!("not valid JSON: {e}"))?;
    let list = match json {
        Json::Array(items) => items,
        Json::Object(mut map) => match map.remove("steps") {
            Some(Json::Array(items)) => items,
            _ => return Err("expected a JSON array of steps".into()),
        },
        _ => return Err("expected a JSON array of steps".into()),
    };
    let steps: Vec<RawStep> = list
        .into_iter()
        .map(|v| serde_json::from_value(v).map_err(|e| format!("step is not an object of strings: {e}")))
        .collect::<Result<_, _>>()?;
    normalize(steps)
}

fn parse_prompt(text: &str) -> Prompt {
    Prompt::new(
        RoleTag::ParseRequirement,
        vec![
            "Split the test requirement into ordered steps. Reply with a JSON array whose items are \
             objects with string fields `condition` (state required before the action), `action` \
             (one user action) and `expectation` (observable result). Infer missing conditions or \
             expectations when they are implied; use an empty string otherwise."
                .to_string(),
            format!("requirement:\n{}", text.trim()),
        ],
    )
}

/// Parses a requirement; structured input never calls the gateway.
pub fn parse_requirement(
    req: &Requirement,
    gateway: &dyn ModelGateway,
    run_id: &str,
) -> Result<ParsedRequirement, RequirementError> {
    if req.raw_text.trim().is_empty() {
        return Err(RequirementError::Empty);
    }
    if req.source_kind == SourceKind::Structured {
        let steps = parse_structured(&req.raw_text)?;
        return Ok(ParsedRequirement {
            provenance: vec![format!("structured input: {} steps", steps.len())],
            steps,
        });
    }
    let prompt = parse_prompt(&req.raw_text).tagged(run_id, None);
    let first = gateway.complete(&prompt)?;
    let mut provenance = Vec::new();
    let steps = match steps_from_response(&first) {
        Ok(steps) => steps,
        Err(problem) => {
            provenance.push(format!("repair re-prompt issued: {problem}"));
            let mut repair = prompt.clone();
            repair.parts.push(format!(
                "Your previous reply could not be used ({problem}). Previous reply:\n{first}\nReply again with only the JSON array."
            ));
            let second = gateway.complete(&repair)?;
            steps_from_response(&second).map_err(|_| RequirementError::Unparseable { raw: second })?
        }
    };
    provenance.push(format!("gateway steps accepted as returned: {}", steps.len()));
    for s in &steps {
        if !s.inferred.is_empty() {
            let parts: Vec<&str> = s
                .inferred
                .iter()
                .map(|p| match p {
                    StepPart::Condition => "condition",
                    StepPart::Action => "action",
                    StepPart::Expectation => "expectation",
                })
                .collect();
            provenance.push(format!("step {}: empty {}", s.index, parts.join(", ")));
        }
    }
    Ok(ParsedRequirement { steps, provenance })
}

/// Serializes steps back into the structured format, omitting empty inferred parts.
pub fn to_structured(steps: &[TestStep]) -> String {
    let keep = |s: &TestStep, v: &str, p: StepPart| {
        if v.is_empty() && s.inferred.contains(&p) {
            None
        } else {
            Some(v.to_string())
        }
    };
    let doc = StructuredDoc {
        steps: steps
            .iter()
            .map(|s| RawStep {
                condition: keep(s, &s.condition, StepPart::Condition),
                action: Some(s.action.clone()),
                expectation: keep(s, &s.expectation, StepPart::Expectation),
            })
            .collect(),
    };
    serde_yaml::to_string(&doc).expect("step list serializes")
}

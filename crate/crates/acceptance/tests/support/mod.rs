#![allow(dead_code)]

pub mod reference;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use regex::Regex;
use serde::Deserialize;
use serde_json::{json, Map, Value as Json};

use vigil_core::gateway::{GatewayError, ModelGateway, Prompt, RoleTag, ScriptedGateway};
use vigil_core::page::RawPage;
use vigil_core::trace::{bindings, PageReidentifier, Session, SymbolContext};
use vigil_dsl::{evaluate, parse, parse_schemas, EvalEnvironment, SchemaRegistry, Verdict};

pub fn acceptance_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn desk_dir() -> PathBuf {
    acceptance_dir().join("../core/fixtures/desk")
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> T {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Corpora

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub status: String,
    #[serde(default)]
    pub error_kind: Option<String>,
    #[serde(default)]
    pub message: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct CorpusCase {
    pub name: String,
    pub covers: Vec<String>,
    pub trace: Vec<String>,
    pub program: String,
    pub expected: Expected,
}

#[derive(Debug, Deserialize)]
pub struct Conformance {
    pub pages: BTreeMap<String, RawPage>,
    pub schemas: String,
    pub extractions: Map<String, Json>,
    pub cases: Vec<CorpusCase>,
}

#[derive(Debug, Deserialize)]
pub struct AdversarialCase {
    pub name: String,
    pub program: String,
    #[serde(default)]
    pub allowed: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct Adversarial {
    pub runtime: Vec<AdversarialCase>,
    pub parse_rejected: Vec<AdversarialCase>,
}

/// Answers extraction prompts from a fixed instruction table.
pub struct FixedExtractions(pub Map<String, Json>);

impl ModelGateway for FixedExtractions {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let text = prompt.text();
        let instruction = text
            .lines()
            .find_map(|l| l.strip_prefix("instruction: "))
            .ok_or_else(|| GatewayError::Unavailable("no instruction line".into()))?;
        self.0
            .get(instruction)
            .map(|v| v.to_string())
            .ok_or_else(|| GatewayError::Unavailable(format!("no extraction for `{instruction}`")))
    }
}

impl Conformance {
    pub fn load() -> Conformance {
        read_json(&acceptance_dir().join("corpus/conformance.json"))
    }

    pub fn registry(&self) -> Arc<SchemaRegistry> {
        let registry = SchemaRegistry::new();
        registry
            .register_all_replacing(parse_schemas(&self.schemas).expect("corpus schemas"))
            .expect("register corpus schemas");
        Arc::new(registry)
    }

    pub fn session(&self, trace: &[String]) -> Session {
        let reid = PageReidentifier::offline();
        let mut s = Session::new();
        for name in trace {
            let page = self.pages.get(name).unwrap_or_else(|| panic!("unknown corpus page {name}"));
            s.append_state(page, &reid).expect("corpus page");
        }
        s
    }

    /// Evaluates `source` over the named trace; parse failures come back as error verdicts.
    pub fn run(&self, trace: &[String], source: &str) -> Verdict {
        let program = match parse(source) {
            Ok(p) => p,
            Err(e) => return Verdict::error(&e),
        };
        let registry = self.registry();
        let session = self.session(trace);
        let gateway = Arc::new(FixedExtractions(self.extractions.clone()));
        let ctx = SymbolContext::new(gateway, registry.clone()).for_step("corpus", None);
        let (s, st) = bindings(session.history(), &ctx);
        evaluate(&program, &EvalEnvironment::new(s, st, registry))
    }
}

pub fn status_str(v: &Verdict) -> String {
    match &v.error_kind {
        Some(k) => serde_json::to_value(k).unwrap().as_str().unwrap().to_string(),
        None => v.status.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Gateways for live runs

/// Reads `[id] role "text"` lines of a rendered layout into an id → text map.
pub fn layout_texts(layout: &str) -> BTreeMap<String, String> {
    let line = Regex::new(r#"^\s*\[([^\]]+)\] \S+ ("(?:[^"\\]|\\.)*")"#).unwrap();
    layout
        .lines()
        .filter_map(|l| {
            let c = line.captures(l)?;
            let text: String = serde_json::from_str(&c[2]).ok()?;
            Some((c[1].to_string(), text))
        })
        .collect()
}

fn money(text: &str) -> Option<f64> {
    text.trim().trim_start_matches('$').parse().ok()
}

/// Answers `Get cart summary` and `Get product detail` by reading the scope layout, as a faithful
/// model would; every other role goes to the wrapped script.
pub struct LayoutReader {
    pub script: ScriptedGateway,
}

impl LayoutReader {
    fn extract(text: &str) -> Result<String, GatewayError> {
        let scope = text.split("\nscope: ").nth(1).ok_or_else(|| GatewayError::Unavailable("no scope".into()))?;
        let texts = layout_texts(scope);
        if text.contains("\ninstruction: Get cart summary\n") {
            let mut items = Vec::new();
            for i in 0.. {
                let Some(title) = texts.get(&format!("item-{i}-title")) else { break };
                let price = texts.get(&format!("item-{i}-price")).and_then(|p| money(p));
                let qty = texts
                    .get(&format!("item-{i}-qty"))
                    .and_then(|q| q.trim_start_matches("Qty").trim().parse::<i64>().ok());
                items.push(json!({"title": title, "price": price, "quantity": qty}));
            }
            return Ok(json!({ "items": items }).to_string());
        }
        if text.contains("\ninstruction: Get product detail\n") {
            let title = texts.get("product-title").cloned().unwrap_or_default();
            let price = texts.get("product-price").and_then(|p| money(p));
            // The product is added one unit at a time.
            return Ok(json!({"title": title, "price": price, "quantity": 1}).to_string());
        }
        Err(GatewayError::Unavailable("unsupported extraction".into()))
    }
}

impl ModelGateway for LayoutReader {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        if prompt.role == RoleTag::ExtractSymbol {
            return LayoutReader::extract(&prompt.text());
        }
        self.script.complete(prompt)
    }
}

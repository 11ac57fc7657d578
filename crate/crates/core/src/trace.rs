//! Execution trace: states, sessions, page reidentification and the
//! Session/State/Element objects exposed to assertion programs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;
use vigil_dsl::{DslError, HostObject, SchemaDecl, SchemaRegistry, SymbolInstance, ValidationError, Value};

use crate::gateway::{json_payload, GatewayError, ModelGateway, NullGateway, Prompt, RoleTag};
use crate::page::{BBox, PageError, RawElement, RawPage};

pub const THETA_LAYOUT: f64 = 0.5;
pub const THETA_STRICT: f64 = 0.95;
pub const THETA_FIND: f64 = 0.1;
pub const DEFAULT_TOP_K: usize = 5;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementNode {
    pub id: String,
    pub role: String,
    pub text: String,
    pub bbox: BBox,
    pub interactable: bool,
    pub attributes: BTreeMap<String, String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

/// Textual rendering of a state handed to prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateText {
    pub page_id: String,
    pub summary: String,
    pub layout: String,
}

/// One observed state of the application; immutable once appended.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub step_index: usize,
    pub page_id: String,
    pub summary: String,
    pub url: String,
    pub title: String,
    pub width: i64,
    pub height: i64,
    /// Flattened element tree in pre-order; index 0 is the root.
    pub nodes: Vec<ElementNode>,
    pub screenshot: Option<String>,
    /// Set when reidentification fell back to fingerprint-only matching.
    pub degraded: bool,
    pub fingerprint: String,
    text: StateText,
}

fn flatten(root: &RawElement) -> Vec<ElementNode> {
    fn go(e: &RawElement, parent: Option<usize>, depth: usize, out: &mut Vec<ElementNode>) -> usize {
        let idx = out.len();
        out.push(ElementNode {
            id: e.id.clone(),
            role: e.role.clone(),
            text: e.text.clone(),
            bbox: e.bbox,
            interactable: e.interactable,
            attributes: e.attributes.clone(),
            parent,
            children: Vec::new(),
            depth,
        });
        for c in &e.children {
            let ci = go(c, Some(idx), depth + 1, out);
            out[idx].children.push(ci);
        }
        idx
    }
    let mut out = Vec::new();
    go(root, None, 0, &mut out);
    out
}

fn node_fingerprint(nodes: &[ElementNode]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for n in nodes {
        let b = n.bbox;
        hasher.update(format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{},{},{},{}\u{1e}",
            n.depth, n.role, n.text, b.xmin, b.ymin, b.xmax, b.ymax
        ));
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn render_node(out: &mut String, n: &ElementNode, indent: usize) {
    let b = n.bbox;
    let _ = write!(
        out,
        "{}[{}] {} {} @{},{},{},{}",
        "  ".repeat(indent),
        n.id,
        n.role,
        quote(&n.text),
        b.xmin,
        b.ymin,
        b.xmax,
        b.ymax
    );
    if n.interactable {
        out.push_str(" *");
    }
    for (k, v) in &n.attributes {
        let _ = write!(out, " {k}={}", quote(v));
    }
    out.push('\n');
}

fn default_summary(title: &str, url: &str) -> String {
    if title.is_empty() {
        url.to_string()
    } else {
        format!("{title} ({url})")
    }
}

impl State {
    fn build(raw: &RawPage, step_index: usize, page_id: String) -> State {
        let nodes = flatten(&raw.root);
        let mut s = State {
            step_index,
            page_id,
            summary: default_summary(&raw.title, &raw.url),
            url: raw.url.clone(),
            title: raw.title.clone(),
            width: raw.width,
            height: raw.height,
            fingerprint: node_fingerprint(&nodes),
            nodes,
            screenshot: raw.screenshot.clone(),
            degraded: false,
            text: StateText {
                page_id: String::new(),
                summary: String::new(),
                layout: String::new(),
            },
        };
        s.text = s.render();
        s
    }

    /// A state not yet attached to any session, with an empty page id.
    pub fn detached(raw: &RawPage) -> Result<State, PageError> {
        raw.validate()?;
        Ok(State::build(raw, 0, String::new()))
    }

    fn render(&self) -> StateText {
        let mut layout = String::new();
        for n in &self.nodes {
            render_node(&mut layout, n, n.depth);
        }
        StateText {
            page_id: self.page_id.clone(),
            summary: self.summary.clone(),
            layout,
        }
    }

    pub fn text(&self) -> &StateText {
        &self.text
    }

    pub fn root(&self) -> &ElementNode {
        &self.nodes[0]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn element(&self, id: &str) -> Option<&ElementNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Layout of the subtree rooted at `idx`, indented relative to that node.
    pub fn subtree_layout(&self, idx: usize) -> String {
        fn go(s: &State, i: usize, base: usize, out: &mut String) {
            let n = &s.nodes[i];
            render_node(out, n, n.depth - base);
            for &c in &n.children {
                go(s, c, base, out);
            }
        }
        let mut out = String::new();
        go(self, idx, self.nodes[idx].depth, &mut out);
        out
    }

    /// Header plus layout, as it appears inside string(τ).
    pub fn describe(&self) -> String {
        format!(
            "state {} page_id={} route={}\nsummary: {}\n{}",
            self.step_index, self.page_id, self.url, self.summary, self.text.layout
        )
    }

    /// Ranks elements against a description; see [`find_scores`].
    pub fn find(&self, description: &str, top_k: usize) -> Vec<usize> {
        find_scores(self, description, top_k.max(1), THETA_FIND)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    }

    /// Rebuilds the raw page this state was observed from.
    pub fn to_raw(&self) -> RawPage {
        fn go(s: &State, i: usize) -> RawElement {
            let n = &s.nodes[i];
            RawElement {
                id: n.id.clone(),
                role: n.role.clone(),
                text: n.text.clone(),
                bbox: n.bbox,
                interactable: n.interactable,
                attributes: n.attributes.clone(),
                children: n.children.iter().map(|&c| go(s, c)).collect(),
            }
        }
        RawPage {
            url: self.url.clone(),
            title: self.title.clone(),
            width: self.width,
            height: self.height,
            root: go(self, 0),
            screenshot: self.screenshot.clone(),
        }
    }

    fn to_json(&self) -> Json {
        let elements: Vec<Json> = self
            .nodes
            .iter()
            .map(|n| {
                let b = n.bbox;
                json!({
                    "id": n.id,
                    "role": n.role,
                    "text": n.text,
                    "bbox": [b.xmin, b.ymin, b.xmax, b.ymax],
                    "interactable": n.interactable,
                    "attributes": n.attributes,
                    "parent_id": n.parent.map(|p| self.nodes[p].id.clone()),
                })
            })
            .collect();
        let mut obj = json!({
            "step_index": self.step_index,
            "page_id": self.page_id,
            "summary": self.summary,
            "url": self.url,
            "title": self.title,
            "width": self.width,
            "height": self.height,
            "layout": self.text.layout,
            "elements": elements,
        });
        if self.degraded {
            obj["degraded"] = Json::Bool(true);
        }
        obj
    }
}

/// Match score of every element above `theta`, best first, ties by id.
///
/// The score is the larger of two Jaccard overlaps between the description's
/// tokens and (a) the element text tokens, (b) text, role and attribute-value
/// tokens together.
pub fn find_scores(state: &State, description: &str, top_k: usize, theta: f64) -> Vec<(usize, f64)> {
    let query: BTreeSet<String> = tokenize(description).into_iter().collect();
    if query.is_empty() {
        return Vec::new();
    }
    let jaccard = |other: &BTreeSet<String>| -> f64 {
        let inter = query.intersection(other).count();
        let union = query.union(other).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    };
    let mut scored: Vec<(usize, f64)> = state
        .nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            let text: BTreeSet<String> = tokenize(&n.text).into_iter().collect();
            let mut all = text.clone();
            all.extend(tokenize(&n.role));
            for v in n.attributes.values() {
                all.extend(tokenize(v));
            }
            let score = jaccard(&text).max(jaccard(&all));
            (score > theta).then_some((i, score))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| state.nodes[a.0].id.cmp(&state.nodes[b.0].id))
    });
    scored.truncate(top_k);
    scored
}

/// Cosine similarity over bags of (role, token) pairs.
pub fn layout_similarity(a: &State, b: &State) -> f64 {
    fn bag(s: &State) -> HashMap<(String, String), f64> {
        let mut m = HashMap::new();
        for n in &s.nodes {
            let toks = tokenize(&n.text);
            if toks.is_empty() {
                *m.entry((n.role.clone(), String::new())).or_insert(0.0) += 1.0;
            }
            for t in toks {
                *m.entry((n.role.clone(), t)).or_insert(0.0) += 1.0;
            }
        }
        m
    }
    let (x, y) = (bag(a), bag(b));
    let dot: f64 = x.iter().filter_map(|(k, v)| y.get(k).map(|w| v * w)).sum();
    let nx: f64 = x.values().map(|v| v * v).sum::<f64>().sqrt();
    let ny: f64 = y.values().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        (dot / (nx * ny)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReidentifyConfig {
    pub theta_layout: f64,
    pub theta_strict: f64,
}

impl Default for ReidentifyConfig {
    fn default() -> Self {
        ReidentifyConfig {
            theta_layout: THETA_LAYOUT,
            theta_strict: THETA_STRICT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReidentifyDecision {
    /// Matched prior page id, or `None` when a fresh id must be minted.
    pub matched: Option<String>,
    pub score: f64,
    /// The prior page whose state was submitted to the gateway.
    pub consulted: Option<String>,
    pub degraded: bool,
}

/// Assigns logical page ids to newly observed states.
#[derive(Clone)]
pub struct PageReidentifier {
    pub gateway: Arc<dyn ModelGateway>,
    pub config: ReidentifyConfig,
    pub run_id: String,
}

impl PageReidentifier {
    pub fn new(gateway: Arc<dyn ModelGateway>) -> Self {
        PageReidentifier {
            gateway,
            config: ReidentifyConfig::default(),
            run_id: String::new(),
        }
    }

    /// Fingerprint-only reidentification (every consultation is degraded).
    pub fn offline() -> Self {
        PageReidentifier::new(Arc::new(NullGateway))
    }

    pub fn with_run_id(mut self, run_id: &str) -> Self {
        self.run_id = run_id.to_string();
        self
    }

    pub fn prompt(&self, candidate: &State, prior: &State) -> Prompt {
        Prompt::new(
            RoleTag::ReidentifyPage,
            vec![
                "Do these two observations show the same logical page of the application? \
                 Content may differ after user actions. Answer `same` or `different`."
                    .to_string(),
                format!(
                    "candidate route: {}\ncandidate title: {}\n{}",
                    candidate.url, candidate.title, candidate.text.layout
                ),
                format!(
                    "prior page_id: {}\nprior route: {}\nprior title: {}\n{}",
                    prior.page_id, prior.url, prior.title, prior.text.layout
                ),
            ],
        )
        .tagged(&self.run_id, Some(candidate.step_index))
    }

    pub fn reidentify(&self, candidate: &State, history: &[Arc<State>]) -> ReidentifyDecision {
        let mut latest: BTreeMap<&str, &State> = BTreeMap::new();
        for s in history {
            latest.insert(s.page_id.as_str(), s);
        }
        let mut best: Option<(&State, f64)> = None;
        for s in latest.values() {
            let score = layout_similarity(candidate, s);
            let better = match best {
                None => true,
                Some((b, bs)) => score > bs || (score == bs && s.step_index > b.step_index),
            };
            if better {
                best = Some((s, score));
            }
        }
        let Some((prior, score)) = best else {
            return ReidentifyDecision {
                matched: None,
                score: 0.0,
                consulted: None,
                degraded: false,
            };
        };
        if score < self.config.theta_layout {
            return ReidentifyDecision {
                matched: None,
                score,
                consulted: None,
                degraded: false,
            };
        }
        let answer = self
            .gateway
            .complete(&self.prompt(candidate, prior))
            .ok()
            .and_then(|r| parse_same_different(&r));
        let (same, degraded) = match answer {
            Some(same) => (same, false),
            None => (score >= self.config.theta_strict, true),
        };
        ReidentifyDecision {
            matched: same.then(|| prior.page_id.clone()),
            score,
            consulted: Some(prior.page_id.clone()),
            degraded,
        }
    }
}

fn parse_same_different(response: &str) -> Option<bool> {
    let r = response.trim().trim_start_matches(['`', '"', '\'']).to_lowercase();
    if r.starts_with("same") || r.starts_with("yes") {
        Some(true)
    } else if r.starts_with("different") || r.starts_with("no") {
        Some(false)
    } else {
        None
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed page: {0}")]
    Page(#[from] PageError),
    #[error("malformed trace document: {0}")]
    Format(String),
}

/// The execution trace of one run.
#[derive(Debug, Clone, Default)]
pub struct Session {
    history: Vec<Arc<State>>,
    next_page: usize,
}

impl Session {
    pub fn new() -> Self {
        Session::default()
    }

    pub fn history(&self) -> &[Arc<State>] {
        &self.history
    }

    pub fn state(&self) -> Option<&Arc<State>> {
        self.history.last()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn append_state(&mut self, raw: &RawPage, reidentifier: &PageReidentifier) -> Result<Arc<State>, TraceError> {
        raw.validate()?;
        let mut state = State::build(raw, self.history.len(), String::new());
        let decision = reidentifier.reidentify(&state, &self.history);
        state.page_id = match decision.matched {
            Some(id) => id,
            None => {
                let id = format!("p{}", self.next_page);
                self.next_page += 1;
                id
            }
        };
        state.degraded = decision.degraded;
        state.text = state.render();
        let state = Arc::new(state);
        self.history.push(state.clone());
        Ok(state)
    }

    /// The first `len` states, as the trace looked at that point.
    pub fn prefix(&self, len: usize) -> Session {
        let history: Vec<Arc<State>> = self.history.iter().take(len).cloned().collect();
        let next_page = history
            .iter()
            .filter_map(|s| s.page_id.strip_prefix('p').and_then(|n| n.parse::<usize>().ok()))
            .map(|n| n + 1)
            .max()
            .unwrap_or(0);
        Session { history, next_page }
    }

    /// string(τ): every state's description in order.
    pub fn trace_text(&self) -> String {
        self.history.iter().map(|s| s.describe()).collect::<Vec<_>>().join("\n")
    }

    pub fn to_json(&self) -> Json {
        json!({ "states": self.history.iter().map(|s| s.to_json()).collect::<Vec<_>>() })
    }

    pub fn from_json(doc: &Json) -> Result<Session, TraceError> {
        let bad = |m: &str| TraceError::Format(m.to_string());
        let states = doc["states"].as_array().ok_or_else(|| bad("missing `states` array"))?;
        let mut session = Session::new();
        let mut ids = BTreeSet::new();
        for (i, s) in states.iter().enumerate() {
            let str_field = |k: &str| s[k].as_str().map(str::to_string).ok_or_else(|| bad(&format!("state {i}: missing `{k}`")));
            let elements = s["elements"].as_array().ok_or_else(|| bad("missing `elements`"))?;
            let mut nodes: Vec<ElementNode> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            for e in elements {
                let id = e["id"].as_str().ok_or_else(|| bad("element without id"))?.to_string();
                let b: Vec<i64> = e["bbox"]
                    .as_array()
                    .map(|a| a.iter().filter_map(Json::as_i64).collect())
                    .unwrap_or_default();
                if b.len() != 4 {
                    return Err(bad(&format!("element {id}: bbox needs 4 integers")));
                }
                let parent = match e["parent_id"].as_str() {
                    Some(p) => Some(*index.get(p).ok_or_else(|| bad(&format!("element {id}: parent {p} precedes it nowhere")))?),
                    None => None,
                };
                let depth = parent.map_or(0, |p| nodes[p].depth + 1);
                let attributes = e["attributes"]
                    .as_object()
                    .map(|m| m.iter().map(|(k, v)| (k.clone(), v.as_str().unwrap_or_default().to_string())).collect())
                    .unwrap_or_default();
                let idx = nodes.len();
                if let Some(p) = parent {
                    nodes[p].children.push(idx);
                }
                index.insert(id.clone(), idx);
                nodes.push(ElementNode {
                    id,
                    role: e["role"].as_str().unwrap_or_default().to_string(),
                    text: e["text"].as_str().unwrap_or_default().to_string(),
                    bbox: BBox::new(b[0], b[1], b[2], b[3]),
                    interactable: e["interactable"].as_bool().unwrap_or(false),
                    attributes,
                    parent,
                    children: Vec::new(),
                    depth,
                });
            }
            if nodes.is_empty() {
                return Err(bad(&format!("state {i} has no elements")));
            }
            let page_id = str_field("page_id")?;
            ids.insert(page_id.clone());
            let mut state = State {
                step_index: s["step_index"].as_u64().ok_or_else(|| bad("missing step_index"))? as usize,
                page_id,
                summary: str_field("summary")?,
                url: str_field("url")?,
                title: str_field("title")?,
                width: s["width"].as_i64().unwrap_or(0),
                height: s["height"].as_i64().unwrap_or(0),
                fingerprint: node_fingerprint(&nodes),
                nodes,
                screenshot: None,
                degraded: s["degraded"].as_bool().unwrap_or(false),
                text: StateText {
                    page_id: String::new(),
                    summary: String::new(),
                    layout: String::new(),
                },
            };
            state.text = state.render();
            session.history.push(Arc::new(state));
        }
        session.next_page = ids.len();
        Ok(session)
    }
}

// ---------------------------------------------------------------------------
// Symbol extraction

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractionError {
    #[error("extraction for {schema} failed: {source}")]
    Gateway {
        schema: String,
        #[source]
        source: GatewayError,
    },
    #[error("extraction for {schema} returned malformed JSON: {raw}")]
    Malformed { schema: String, raw: String },
    #[error("extraction for {schema} is invalid: {error} (raw response: {raw})")]
    Invalid {
        schema: String,
        raw: String,
        error: ValidationError,
    },
}

type ExtractKey = (usize, String, String, String);

/// What assertion programs need to run `extract` against a trace.
#[derive(Clone)]
pub struct SymbolContext {
    pub gateway: Arc<dyn ModelGateway>,
    pub registry: Arc<SchemaRegistry>,
    pub run_id: String,
    pub step: Option<usize>,
    cache: Arc<Mutex<HashMap<ExtractKey, Result<SymbolInstance, ExtractionError>>>>,
}

impl SymbolContext {
    pub fn new(gateway: Arc<dyn ModelGateway>, registry: Arc<SchemaRegistry>) -> Self {
        SymbolContext {
            gateway,
            registry,
            run_id: String::new(),
            step: None,
            cache: Arc::default(),
        }
    }

    /// A context with no model; every extraction fails.
    pub fn offline(registry: Arc<SchemaRegistry>) -> Self {
        SymbolContext::new(Arc::new(NullGateway), registry)
    }

    pub fn for_step(&self, run_id: &str, step: Option<usize>) -> Self {
        SymbolContext {
            run_id: run_id.to_string(),
            step,
            ..self.clone()
        }
    }

    fn schema_text(&self, schema: &SchemaDecl) -> String {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut stack = vec![schema.name.clone()];
        while let Some(name) = stack.pop() {
            if !seen.insert(name.clone()) {
                continue;
            }
            let decl = if name == schema.name {
                Some(Arc::new(schema.clone()))
            } else {
                self.registry.get(&name)
            };
            if let Some(d) = decl {
                stack.extend(d.references().into_iter().map(String::from));
                order.push(d.describe());
            }
        }
        order.join("\n")
    }

    pub fn extract_prompt(&self, state: &State, scope: Option<usize>, instruction: &str, schema: &SchemaDecl) -> Prompt {
        let (label, layout) = match scope {
            None => (format!("state {} page_id={}", state.step_index, state.page_id), state.text.layout.clone()),
            Some(i) => (
                format!("element {} of state {} page_id={}", state.nodes[i].id, state.step_index, state.page_id),
                state.subtree_layout(i),
            ),
        };
        Prompt::new(
            RoleTag::ExtractSymbol,
            vec![
                format!("Extract one {} value from the scope below. Reply with a JSON object only.", schema.name),
                format!("instruction: {instruction}"),
                format!("schema:\n{}", self.schema_text(schema)),
                format!("scope: {label}\n{layout}"),
            ],
        )
        .tagged(&self.run_id, self.step)
    }

    /// Extracts and validates a symbol; results are cached per (state, scope, instruction, schema).
    pub fn extract(
        &self,
        state: &State,
        scope: Option<usize>,
        instruction: &str,
        schema: &SchemaDecl,
    ) -> Result<SymbolInstance, ExtractionError> {
        let scope_id = scope.map(|i| state.nodes[i].id.clone()).unwrap_or_default();
        let key = (state.step_index, scope_id, instruction.to_string(), schema.to_string());
        if let Some(hit) = self.cache.lock().expect("extract cache lock").get(&key) {
            return hit.clone();
        }
        let result = self.extract_uncached(state, scope, instruction, schema);
        self.cache.lock().expect("extract cache lock").insert(key, result.clone());
        result
    }

    fn extract_uncached(
        &self,
        state: &State,
        scope: Option<usize>,
        instruction: &str,
        schema: &SchemaDecl,
    ) -> Result<SymbolInstance, ExtractionError> {
        let name = schema.name.clone();
        let raw = self
            .gateway
            .complete(&self.extract_prompt(state, scope, instruction, schema))
            .map_err(|source| ExtractionError::Gateway {
                schema: name.clone(),
                source,
            })?;
        let candidate: Json = serde_json::from_str(json_payload(&raw)).map_err(|_| ExtractionError::Malformed {
            schema: name.clone(),
            raw: raw.clone(),
        })?;
        self.registry
            .validate(schema, &candidate)
            .map_err(|error| ExtractionError::Invalid { schema: name, raw, error })
    }

    pub fn calls_cached(&self) -> usize {
        self.cache.lock().expect("extract cache lock").len()
    }
}

// ---------------------------------------------------------------------------
// Host objects

#[derive(Clone)]
pub struct SessionObj {
    history: Vec<Arc<State>>,
    ctx: SymbolContext,
}

impl std::fmt::Debug for SessionObj {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SessionObj({} states)", self.history.len())
    }
}

#[derive(Clone)]
pub struct StateObj {
    state: Arc<State>,
    ctx: SymbolContext,
}

impl std::fmt::Debug for StateObj {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "StateObj(state#{})", self.state.step_index)
    }
}

#[derive(Clone)]
pub struct ElementObj {
    state: Arc<State>,
    idx: usize,
    ctx: SymbolContext,
}

impl std::fmt::Debug for ElementObj {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ElementObj(state#{}/{})", self.state.step_index, self.state.nodes[self.idx].id)
    }
}

/// `session` and `state` bindings for evaluating a program at the end of `history`.
pub fn bindings(history: &[Arc<State>], ctx: &SymbolContext) -> (Value, Value) {
    let session = Value::object(SessionObj {
        history: history.to_vec(),
        ctx: ctx.clone(),
    });
    let state = history.last().map_or(Value::None, |s| state_value(s, ctx));
    (session, state)
}

fn state_value(state: &Arc<State>, ctx: &SymbolContext) -> Value {
    Value::object(StateObj {
        state: state.clone(),
        ctx: ctx.clone(),
    })
}

fn element_value(state: &Arc<State>, idx: usize, ctx: &SymbolContext) -> Value {
    Value::object(ElementObj {
        state: state.clone(),
        idx,
        ctx: ctx.clone(),
    })
}

fn no_method(type_name: &str, name: &str) -> DslError {
    DslError::forbidden(format!("{type_name} has no method `{name}`"))
}

fn extract_call(
    ctx: &SymbolContext,
    state: &State,
    scope: Option<usize>,
    args: &[Value],
    kwargs: &[(String, Value)],
) -> Result<Value, DslError> {
    let mut instruction: Option<String> = None;
    let mut schema: Option<Arc<SchemaDecl>> = None;
    let as_schema = |v: &Value| match v {
        Value::Schema(s) => Ok(s.clone()),
        other => Err(DslError::type_mismatch(format!(
            "extract expects a schema, got {}",
            other.type_name()
        ))),
    };
    let as_text = |v: &Value| match v {
        Value::Str(s) => Ok(s.to_string()),
        other => Err(DslError::type_mismatch(format!(
            "extract instruction must be str, got {}",
            other.type_name()
        ))),
    };
    match args {
        [] => {}
        [Value::Schema(s)] => schema = Some(s.clone()),
        [i] => instruction = Some(as_text(i)?),
        [i, s] => {
            instruction = Some(as_text(i)?);
            schema = Some(as_schema(s)?);
        }
        _ => return Err(DslError::type_mismatch("extract takes at most 2 positional arguments")),
    }
    for (k, v) in kwargs {
        match k.as_str() {
            "schema" if schema.is_none() => schema = Some(as_schema(v)?),
            "instruction" if instruction.is_none() => instruction = Some(as_text(v)?),
            _ => return Err(DslError::type_mismatch(format!("extract got an unexpected argument `{k}`"))),
        }
    }
    let schema = schema.ok_or_else(|| DslError::type_mismatch("extract requires a schema"))?;
    let instruction = instruction.unwrap_or_else(|| format!("Get {}", schema.name));
    ctx.extract(state, scope, &instruction, &schema)
        .map(|inst| Value::from_symbol(&inst))
        .map_err(|e| DslError::runtime(e.to_string()))
}

impl HostObject for SessionObj {
    fn type_name(&self) -> &'static str {
        "Session"
    }

    fn get_attr(&self, name: &str) -> Result<Option<Value>, DslError> {
        Ok(match name {
            "history" => Some(Value::list(self.history.iter().map(|s| state_value(s, &self.ctx)).collect())),
            "state" => Some(self.history.last().map_or(Value::None, |s| state_value(s, &self.ctx))),
            _ => None,
        })
    }

    fn has_method(&self, _name: &str) -> bool {
        false
    }

    fn call_method(&self, name: &str, _args: &[Value], _kwargs: &[(String, Value)]) -> Result<Value, DslError> {
        Err(no_method("Session", name))
    }

    fn identity(&self) -> String {
        "session".into()
    }
}

impl HostObject for StateObj {
    fn type_name(&self) -> &'static str {
        "State"
    }

    fn get_attr(&self, name: &str) -> Result<Option<Value>, DslError> {
        let s = &self.state;
        Ok(match name {
            "page_id" => Some(Value::str(s.page_id.as_str())),
            "url" => Some(Value::str(s.url.as_str())),
            "title" => Some(Value::str(s.title.as_str())),
            "summary" => Some(Value::str(s.summary.as_str())),
            "step_index" => Some(Value::Int(s.step_index as i64)),
            "elements" => Some(Value::list((0..s.nodes.len()).map(|i| element_value(s, i, &self.ctx)).collect())),
            _ => None,
        })
    }

    fn has_method(&self, name: &str) -> bool {
        matches!(name, "find" | "extract")
    }

    fn call_method(&self, name: &str, args: &[Value], kwargs: &[(String, Value)]) -> Result<Value, DslError> {
        match name {
            "find" => {
                let description = match args.first() {
                    Some(Value::Str(s)) => s.to_string(),
                    Some(other) => {
                        return Err(DslError::type_mismatch(format!(
                            "find expects a str description, got {}",
                            other.type_name()
                        )))
                    }
                    None => return Err(DslError::type_mismatch("find requires a description")),
                };
                let top_k = match (args.get(1), kwargs.iter().find(|(k, _)| k == "top_k")) {
                    (Some(v), None) | (None, Some((_, v))) => match v {
                        Value::Int(k) if *k >= 1 => *k as usize,
                        Value::Int(_) => return Err(DslError::runtime("top_k must be at least 1")),
                        other => {
                            return Err(DslError::type_mismatch(format!(
                                "top_k must be int, got {}",
                                other.type_name()
                            )))
                        }
                    },
                    (None, None) => DEFAULT_TOP_K,
                    (Some(_), Some(_)) => return Err(DslError::type_mismatch("top_k given twice")),
                };
                if args.len() > 2 || kwargs.iter().any(|(k, _)| k != "top_k") {
                    return Err(DslError::type_mismatch("find takes (description, top_k)"));
                }
                Ok(Value::list(
                    self.state
                        .find(&description, top_k)
                        .into_iter()
                        .map(|i| element_value(&self.state, i, &self.ctx))
                        .collect(),
                ))
            }
            "extract" => extract_call(&self.ctx, &self.state, None, args, kwargs),
            _ => Err(no_method("State", name)),
        }
    }

    fn identity(&self) -> String {
        format!("state#{}", self.state.step_index)
    }
}

impl HostObject for ElementObj {
    fn type_name(&self) -> &'static str {
        "Element"
    }

    fn get_attr(&self, name: &str) -> Result<Option<Value>, DslError> {
        let n = &self.state.nodes[self.idx];
        Ok(match name {
            "id" => Some(Value::str(n.id.as_str())),
            "text" => Some(Value::str(n.text.as_str())),
            "role" => Some(Value::str(n.role.as_str())),
            "xmin" => Some(Value::Int(n.bbox.xmin)),
            "ymin" => Some(Value::Int(n.bbox.ymin)),
            "xmax" => Some(Value::Int(n.bbox.xmax)),
            "ymax" => Some(Value::Int(n.bbox.ymax)),
            "interactable" => Some(Value::Bool(n.interactable)),
            "attributes" => Some(Value::Dict(std::rc::Rc::new(
                n.attributes
                    .iter()
                    .map(|(k, v)| (Value::str(k.as_str()), Value::str(v.as_str())))
                    .collect(),
            ))),
            "parent" => Some(n.parent.map_or(Value::None, |p| element_value(&self.state, p, &self.ctx))),
            "children" => Some(Value::list(
                n.children.iter().map(|&c| element_value(&self.state, c, &self.ctx)).collect(),
            )),
            _ => None,
        })
    }

    fn has_method(&self, name: &str) -> bool {
        name == "extract"
    }

    fn call_method(&self, name: &str, args: &[Value], kwargs: &[(String, Value)]) -> Result<Value, DslError> {
        match name {
            "extract" => extract_call(&self.ctx, &self.state, Some(self.idx), args, kwargs),
            _ => Err(no_method("Element", name)),
        }
    }

    fn identity(&self) -> String {
        format!("state#{}/{}", self.state.step_index, self.state.nodes[self.idx].id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Script, ScriptRule, ScriptedGateway};
    use vigil_dsl::{evaluate_source, parse_schemas, EvalEnvironment, VerdictStatus};

    fn el(id: &str, role: &str, text: &str, y: i64) -> RawElement {
        RawElement::new(id, role, text, BBox::new(10, y, 200, y + 20))
    }

    fn page(url: &str, children: Vec<RawElement>) -> RawPage {
        RawPage {
            url: url.into(),
            title: url.trim_start_matches('/').into(),
            width: 800,
            height: 600,
            root: RawElement::new("root", "page", "", BBox::new(0, 0, 800, 600)).with_children(children),
            screenshot: None,
        }
    }

    fn home() -> RawPage {
        page(
            "/home",
            vec![
                el("nav", "link", "Cart", 0).interactable(),
                el("search", "input", "", 30).interactable().with_attr("placeholder", "Search products"),
                el("go", "button", "Search", 60).interactable(),
            ],
        )
    }

    fn cart(rows: &[&str]) -> RawPage {
        let mut children = vec![el("h", "heading", "Your cart", 0)];
        for (i, r) in rows.iter().enumerate() {
            children.push(el(&format!("row{i}"), "row", r, 30 + 30 * i as i64));
        }
        children.push(el("cont", "button", "Continue Shopping", 500).interactable());
        page("/cart", children)
    }

    fn scripted(rules: Vec<ScriptRule>) -> Arc<dyn ModelGateway> {
        Arc::new(
            ScriptedGateway::new(Script {
                rules,
                ..Script::default()
            })
            .unwrap(),
        )
    }

    fn route_rules() -> Vec<ScriptRule> {
        let mk = |regex: &str, answer: &str| ScriptRule {
            name: answer.into(),
            role: RoleTag::ReidentifyPage,
            glob: None,
            regex: Some(regex.into()),
            responses: vec![answer.into()],
            repeat: true,
            expand: false,
        };
        vec![
            mk(r"(?s)candidate route: (\S+)\n.*prior route: \1\n", "same"),
            mk(r"(?s)candidate route: (\S+)\n.*prior route: (?!\1\n)", "different"),
        ]
    }

    #[test]
    fn first_state_gets_fresh_id_and_identical_page_matches() {
        let r = PageReidentifier::new(scripted(route_rules()));
        let mut s = Session::new();
        let a = s.append_state(&home(), &r).unwrap();
        assert_eq!((a.step_index, a.page_id.as_str()), (0, "p0"));
        let b = s.append_state(&home(), &r).unwrap();
        assert_eq!((b.step_index, b.page_id.as_str()), (1, "p0"));
    }

    #[test]
    fn cart_with_new_row_keeps_its_page_id() {
        let r = PageReidentifier::new(scripted(route_rules()));
        let mut s = Session::new();
        s.append_state(&cart(&[]), &r).unwrap();
        s.append_state(&home(), &r).unwrap();
        let c = s.append_state(&cart(&["Camera $129.00"]), &r).unwrap();
        assert_eq!(c.page_id, "p0");
        assert!(!c.degraded);
    }

    #[test]
    fn aba_pattern() {
        let r = PageReidentifier::new(scripted(route_rules()));
        let mut s = Session::new();
        for p in [home(), cart(&[]), home()] {
            s.append_state(&p, &r).unwrap();
        }
        let ids: Vec<&str> = s.history().iter().map(|x| x.page_id.as_str()).collect();
        assert_eq!(ids, ["p0", "p1", "p0"]);
    }

    #[test]
    fn gateway_failure_degrades_to_strict_threshold() {
        let r = PageReidentifier::offline();
        let mut s = Session::new();
        s.append_state(&home(), &r).unwrap();
        let same = s.append_state(&home(), &r).unwrap();
        assert_eq!(same.page_id, "p0");
        assert!(same.degraded);
        let mut tweaked = home();
        tweaked.root.children[2].text = "Find now".into();
        let other = s.append_state(&tweaked, &r).unwrap();
        assert_eq!(other.page_id, "p1");
        assert!(other.degraded);
    }

    #[test]
    fn only_best_candidate_above_threshold_is_consulted() {
        let rec = Arc::new(crate::gateway::RecordingGateway::new(scripted(route_rules())));
        let r = PageReidentifier::new(rec.clone());
        let mut s = Session::new();
        s.append_state(&cart(&["a", "b"]), &r).unwrap();
        s.append_state(&home(), &r).unwrap();
        let calls_before = rec.call_count();
        s.append_state(&cart(&["a", "b", "c"]), &r).unwrap();
        let t = rec.full_transcript();
        assert_eq!(t.entries.len(), calls_before + 1);
        assert!(t.entries.last().unwrap().prompt.contains("prior page_id: p0"));
    }

    #[test]
    fn layout_lists_interactables_once_with_indentation() {
        let mut p = home();
        p.root.children[0].children = vec![RawElement::new("badge", "text", "2", BBox::new(150, 0, 160, 10))];
        let st = State::detached(&p).unwrap();
        let layout = &st.text().layout;
        assert_eq!(layout.matches("[go] button").count(), 1);
        assert!(layout.contains("\n    [badge] text \"2\""), "{layout}");
        assert_eq!(st.text(), State::detached(&p).unwrap().text());
    }

    #[test]
    fn find_ranks_and_filters() {
        let st = State::detached(&home()).unwrap();
        let hits = st.find("Search", 2);
        assert_eq!(st.nodes[hits[0]].id, "go");
        assert!(st.find("checkout total", 5).is_empty());
        let placeholder = st.find("search products input", 1);
        assert_eq!(st.nodes[placeholder[0]].id, "search");
    }

    #[test]
    fn trace_json_round_trips() {
        let r = PageReidentifier::new(scripted(route_rules()));
        let mut s = Session::new();
        s.append_state(&home(), &r).unwrap();
        s.append_state(&cart(&["Camera $1"]), &r).unwrap();
        let j = s.to_json();
        let back = Session::from_json(&j).unwrap();
        assert_eq!(back.to_json(), j);
        assert_eq!(back.history()[1].fingerprint, s.history()[1].fingerprint);
        assert_eq!(back.history()[0].to_raw(), home());
    }

    #[test]
    fn dsl_sees_trace_and_extract_is_cached() {
        let registry = Arc::new(SchemaRegistry::new());
        for d in parse_schemas(
            "schema Product { title: string required; price: number required ge=0; quantity: integer optional gt=0 }\n\
             schema Cart { items: list[Product] required }",
        )
        .unwrap()
        {
            registry.register(d).unwrap();
        }
        let gw = Arc::new(crate::gateway::RecordingGateway::new(scripted(vec![ScriptRule {
            name: String::new(),
            role: RoleTag::ExtractSymbol,
            glob: Some("*Cart*".into()),
            regex: None,
            responses: vec!["```json\n{\"items\": []}\n```".into()],
            repeat: false,
            expand: false,
        }])));
        let ctx = SymbolContext::new(gw.clone(), registry.clone());
        let mut s = Session::new();
        s.append_state(&cart(&[]), &PageReidentifier::offline()).unwrap();
        let (session, state) = bindings(s.history(), &ctx);
        let env = EvalEnvironment::new(session, state, registry);
        let program = "c = state.extract('Get cart summary', schema=Cart)\n\
                       d = state.extract('Get cart summary', Cart)\n\
                       assert len(c.items) == 0 and len(d.items) == 0\n\
                       assert session.state.page_id == session.history[0].page_id\n\
                       assert state.find('Continue Shopping')[0].interactable";
        let v = evaluate_source(program, &env);
        assert_eq!(v.status, VerdictStatus::Pass, "{v}");
        assert_eq!(gw.call_count(), 1);
        let v = evaluate_source("assert session.extract('x', Cart)", &env);
        assert_eq!(v.error_kind, Some(vigil_dsl::DslErrorKind::ForbiddenCall));
    }

    #[test]
    fn invalid_extraction_names_constraint() {
        let registry = Arc::new(SchemaRegistry::new());
        for d in parse_schemas("schema Product { title: string required; price: number required ge=0 }").unwrap() {
            registry.register(d).unwrap();
        }
        let gw = scripted(vec![ScriptRule {
            name: String::new(),
            role: RoleTag::ExtractSymbol,
            glob: None,
            regex: None,
            responses: vec![r#"{"title":"camera","price":-1}"#.into()],
            repeat: false,
            expand: false,
        }]);
        let ctx = SymbolContext::new(gw, registry.clone());
        let st = State::detached(&home()).unwrap();
        let err = ctx.extract(&st, None, "product", &registry.get("Product").unwrap()).unwrap_err();
        match err {
            ExtractionError::Invalid { error, raw, .. } => {
                assert_eq!(error.field, "price");
                assert_eq!(error.constraint, "ge=0");
                assert!(raw.contains("-1"));
            }
            other => panic!("{other:?}"),
        }
    }
}

//! Declarative in-process web applications implementing [`Driver`], with
//! fault injection.
//!
//! An app definition is JSON: `pages` hold element-tree templates whose text,
//! attributes and box coordinates may interpolate store data, and
//! `transitions` map (page, action) pairs to ordered effects. Template text
//! uses f-string syntax (`"Subtotal: ${subtotal:.2f}"`); conditions and values
//! are assertion-language expressions over the stores.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;
use vigil_dsl::{evaluate_expression, render_template, EvalEnvironment, SchemaRegistry, Value};

use crate::action::{ActionType, Driver, DriverFault, ExecutableAction};
use crate::page::{BBox, RawElement, RawPage};

pub const MINISHOP: &str = include_str!("../fixtures/desk/apps/minishop.json");
pub const MINIDOCS: &str = include_str!("../fixtures/desk/apps/minidocs.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coord {
    Fixed(i64),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repeat {
    pub over: String,
    #[serde(rename = "as")]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementTemplate {
    pub id: String,
    pub role: String,
    #[serde(default)]
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [Coord; 4],
    #[serde(default)]
    pub interactable: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<Repeat>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ElementTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageTemplate {
    pub route: String,
    pub title: String,
    /// Named expressions evaluated in order before rendering.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub bindings: serde_json::Map<String, Json>,
    pub root: ElementTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMatcher {
    #[serde(rename = "type")]
    pub action_type: ActionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Regex over the typed text or pressed key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Effect {
    Navigate {
        navigate: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        when: Option<String>,
    },
    Set {
        set: String,
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        when: Option<String>,
    },
    Push {
        push: String,
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        when: Option<String>,
    },
    Remove {
        remove: String,
        index: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        when: Option<String>,
    },
    SetElement {
        set_element: String,
        property: String,
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        when: Option<String>,
    },
}

impl Effect {
    fn condition(&self) -> Option<&str> {
        match self {
            Effect::Navigate { when, .. }
            | Effect::Set { when, .. }
            | Effect::Push { when, .. }
            | Effect::Remove { when, .. }
            | Effect::SetElement { when, .. } => when.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRule {
    /// Source page name, or `*` for any page.
    pub page: String,
    pub on: ActionMatcher,
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppDefinition {
    pub name: String,
    pub width: i64,
    pub height: i64,
    pub start_page: String,
    #[serde(default)]
    pub stores: BTreeMap<String, Json>,
    pub pages: BTreeMap<String, PageTemplate>,
    #[serde(default)]
    pub transitions: Vec<TransitionRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugCategory {
    MissingElement,
    DataInconsistency,
    NoopAction,
    NavigationFailure,
}

impl BugCategory {
    pub const ALL: [BugCategory; 4] = [
        BugCategory::MissingElement,
        BugCategory::DataInconsistency,
        BugCategory::NoopAction,
        BugCategory::NavigationFailure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BugCategory::MissingElement => "missing_element",
            BugCategory::DataInconsistency => "data_inconsistency",
            BugCategory::NoopAction => "noop_action",
            BugCategory::NavigationFailure => "navigation_failure",
        }
    }
}

/// When a bug fires; every present field must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BugTrigger {
    /// Page the transition lands on (before any redirect).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
    /// Page the action was performed on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionMatcher>,
    /// 1-based count of actions performed since reset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BugPayload {
    /// missing_element: delete matched elements.
    Delete { selector: String },
    /// data_inconsistency: value expression written to a store path for rendering only.
    Overwrite { path: String, value: String },
    /// noop_action: swallow matching actions.
    Swallow { swallow: ActionMatcher },
    /// navigation_failure: land on this page instead.
    Redirect { redirect: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugSpec {
    pub category: BugCategory,
    #[serde(default)]
    pub trigger: BugTrigger,
    pub payload: BugPayload,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {at}: {message}")]
    Invalid { path: String, at: String, message: String },
}

fn collect_template_ids(t: &ElementTemplate, out: &mut Vec<String>) {
    out.push(t.id.clone());
    for c in &t.children {
        collect_template_ids(c, out);
    }
}

impl AppDefinition {
    pub fn parse(text: &str, path: &str) -> Result<AppDefinition, LoadError> {
        let def: AppDefinition = serde_json::from_str(text).map_err(|e| LoadError::Syntax {
            path: path.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        def.check(path)?;
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<AppDefinition, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        AppDefinition::parse(&text, &path.display().to_string())
    }

    fn check(&self, path: &str) -> Result<(), LoadError> {
        let invalid = |at: String, message: String| LoadError::Invalid {
            path: path.to_string(),
            at,
            message,
        };
        if !self.pages.contains_key(&self.start_page) {
            return Err(invalid("start_page".into(), format!("unknown page `{}`", self.start_page)));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.page != "*" && !self.pages.contains_key(&t.page) {
                return Err(invalid(format!("transitions[{i}].page"), format!("unknown page `{}`", t.page)));
            }
            for (j, e) in t.effects.iter().enumerate() {
                if let Effect::Navigate { navigate, .. } = e {
                    if !self.pages.contains_key(navigate) {
                        return Err(invalid(
                            format!("transitions[{i}].effects[{j}].navigate"),
                            format!("unknown page `{navigate}`"),
                        ));
                    }
                }
                if let Effect::Set { set: p, .. } | Effect::Push { push: p, .. } | Effect::Remove { remove: p, .. } = e {
                    let store = p.split('.').next().unwrap_or("");
                    if !self.stores.contains_key(store) {
                        return Err(invalid(format!("transitions[{i}].effects[{j}]"), format!("unknown store `{store}`")));
                    }
                }
            }
        }
        for (name, page) in &self.pages {
            let mut ids = Vec::new();
            collect_template_ids(&page.root, &mut ids);
            let mut seen = std::collections::HashSet::new();
            for id in ids {
                if !id.contains('{') && !seen.insert(id.clone()) {
                    return Err(invalid(format!("pages.{name}"), format!("duplicate element id `{id}`")));
                }
            }
        }
        Ok(())
    }

    /// Pairs of transitions whose matchers coincide; the later one can never fire.
    pub fn lint(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, a) in self.transitions.iter().enumerate() {
            for (j, b) in self.transitions.iter().enumerate().skip(i + 1) {
                let same_page = a.page == b.page || a.page == "*";
                if same_page && a.on == b.on {
                    out.push(format!("transitions[{j}] is shadowed by transitions[{i}]"));
                }
            }
        }
        out
    }
}

/// Loads a bundled app by name (`minishop`, `minidocs`) or a definition file path.
pub fn load_app(reference: &str) -> Result<SimApp, LoadError> {
    let def = match reference {
        "minishop" => AppDefinition::parse(MINISHOP, "minishop")?,
        "minidocs" => AppDefinition::parse(MINIDOCS, "minidocs")?,
        path => AppDefinition::load(Path::new(path))?,
    };
    Ok(SimApp::new(def))
}

// ---------------------------------------------------------------------------
// Runtime

#[derive(Debug, Clone, PartialEq)]
struct Override {
    page: String,
    selector: String,
    property: String,
    value: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Runtime {
    page: String,
    stores: BTreeMap<String, Json>,
    overrides: Vec<Override>,
}

/// A running simulated application.
#[derive(Debug, Clone)]
pub struct SimApp {
    def: Arc<AppDefinition>,
    bug: Option<BugSpec>,
    rt: Runtime,
    steps: usize,
    current: Option<RawPage>,
    warnings: Vec<String>,
}

type Fault = DriverFault;

fn fault(msg: impl Into<String>) -> Fault {
    DriverFault(msg.into())
}

fn glob_match(pattern: &str, text: &str) -> bool {
    fn go(p: &[char], t: &[char]) -> bool {
        match (p.first(), t.first()) {
            (None, None) => true,
            (Some('*'), _) => go(&p[1..], t) || (!t.is_empty() && go(p, &t[1..])),
            (Some('?'), Some(_)) => go(&p[1..], &t[1..]),
            (Some(a), Some(b)) if a == b => go(&p[1..], &t[1..]),
            _ => false,
        }
    }
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    go(&p, &t)
}

/// `#id-glob`, `text:Exact text` (case-insensitive), or `role:button`.
pub fn selector_matches(selector: &str, e: &RawElement) -> bool {
    if let Some(g) = selector.strip_prefix('#') {
        glob_match(g, &e.id)
    } else if let Some(t) = selector.strip_prefix("text:") {
        e.text.trim().eq_ignore_ascii_case(t.trim())
    } else if let Some(r) = selector.strip_prefix("role:") {
        e.role == r
    } else {
        e.id == selector
    }
}

fn matcher_matches(m: &ActionMatcher, action: &ExecutableAction, target: Option<&RawElement>) -> bool {
    if m.action_type != action.action_type {
        return false;
    }
    if let Some(sel) = &m.target {
        match target {
            Some(e) if selector_matches(sel, e) => {}
            _ => return false,
        }
    }
    if let Some(pat) = &m.param {
        let param = action.param("text").or(action.param("key")).unwrap_or("");
        match regex::Regex::new(pat) {
            Ok(r) if r.is_match(param) => {}
            _ => return false,
        }
    }
    true
}

fn json_path_mut<'a>(root: &'a mut BTreeMap<String, Json>, path: &str) -> Result<&'a mut Json, Fault> {
    let mut parts = path.split('.');
    let store = parts.next().unwrap_or("");
    let mut cur = root.get_mut(store).ok_or_else(|| fault(format!("unknown store `{store}`")))?;
    for p in parts {
        cur = match cur {
            Json::Object(m) => m.entry(p.to_string()).or_insert(Json::Null),
            Json::Array(a) => {
                let i: usize = p.parse().map_err(|_| fault(format!("bad index `{p}` in `{path}`")))?;
                a.get_mut(i).ok_or_else(|| fault(format!("index {i} out of range in `{path}`")))?
            }
            _ => return Err(fault(format!("`{path}` does not name a container"))),
        };
    }
    Ok(cur)
}

fn target_binding(e: &RawElement) -> Value {
    let mut pairs: Vec<(Value, Value)> = e
        .attributes
        .iter()
        .map(|(k, v)| (Value::str(k.as_str()), Value::str(v.as_str())))
        .collect();
    for (k, v) in [("id", &e.id), ("text", &e.text), ("role", &e.role)] {
        pairs.push((Value::str(k), Value::str(v.as_str())));
    }
    Value::Dict(std::rc::Rc::new(pairs))
}

struct Scope {
    env: EvalEnvironment,
}

impl Scope {
    fn new(stores: &BTreeMap<String, Json>) -> Scope {
        let mut env = EvalEnvironment::new(Value::None, Value::None, Arc::new(SchemaRegistry::new()));
        for (k, v) in stores {
            env.bind(k.clone(), Value::from_json(v));
        }
        Scope { env }
    }

    fn eval(&self, expr: &str) -> Result<Value, Fault> {
        evaluate_expression(expr, &self.env).map_err(|e| fault(format!("expression `{expr}`: {}", e.message)))
    }

    fn truthy(&self, expr: &str) -> Result<bool, Fault> {
        Ok(self.eval(expr)?.truthy())
    }

    fn text(&self, template: &str) -> Result<String, Fault> {
        if !template.contains('{') {
            return Ok(template.to_string());
        }
        render_template(template, &self.env).map_err(|e| fault(format!("template `{template}`: {}", e.message)))
    }

    fn coord(&self, c: &Coord) -> Result<i64, Fault> {
        match c {
            Coord::Fixed(v) => Ok(*v),
            Coord::Expr(e) => self
                .eval(e)?
                .as_f64()
                .map(|f| f.round() as i64)
                .ok_or_else(|| fault(format!("box coordinate `{e}` is not a number"))),
        }
    }

    fn to_json(&self, expr: &str) -> Result<Json, Fault> {
        self.eval(expr)?
            .to_json()
            .ok_or_else(|| fault(format!("value of `{expr}` is not plain data")))
    }
}

fn render_element(t: &ElementTemplate, scope: &mut Scope, out: &mut Vec<RawElement>) -> Result<(), Fault> {
    if let Some(rep) = &t.repeat {
        let items = match scope.eval(&rep.over)? {
            Value::List(v) | Value::Tuple(v) => v.as_ref().clone(),
            other => return Err(fault(format!("repeat over `{}` gave {}", rep.over, other.type_name()))),
        };
        let saved = (scope.env.bindings.get(&rep.name).cloned(), scope.env.bindings.get("index").cloned());
        for (i, item) in items.into_iter().enumerate() {
            scope.env.bind(rep.name.clone(), item);
            scope.env.bind("index", Value::Int(i as i64));
            let single = ElementTemplate {
                repeat: None,
                ..t.clone()
            };
            render_element(&single, scope, out)?;
        }
        for (name, v) in [(rep.name.as_str(), saved.0), ("index", saved.1)] {
            match v {
                Some(v) => {
                    scope.env.bind(name.to_string(), v);
                }
                None => {
                    scope.env.bindings.remove(name);
                }
            }
        }
        return Ok(());
    }
    if let Some(w) = &t.when {
        if !scope.truthy(w)? {
            return Ok(());
        }
    }
    let [a, b, c, d] = &t.bbox;
    let mut children = Vec::new();
    for ch in &t.children {
        render_element(ch, scope, &mut children)?;
    }
    let mut attributes = BTreeMap::new();
    for (k, v) in &t.attributes {
        attributes.insert(k.clone(), scope.text(v)?);
    }
    out.push(RawElement {
        id: scope.text(&t.id)?,
        role: t.role.clone(),
        text: scope.text(&t.text)?,
        bbox: BBox::new(scope.coord(a)?, scope.coord(b)?, scope.coord(c)?, scope.coord(d)?),
        interactable: t.interactable,
        attributes,
        children,
    });
    Ok(())
}

fn remove_matching(e: &mut RawElement, selector: &str) -> usize {
    let before = e.children.len();
    e.children.retain(|c| !selector_matches(selector, c));
    let mut n = before - e.children.len();
    for c in &mut e.children {
        n += remove_matching(c, selector);
    }
    n
}

fn apply_override(e: &mut RawElement, o: &Override) {
    if selector_matches(&o.selector, e) {
        match o.property.as_str() {
            "text" => e.text = o.value.clone(),
            "role" => e.role = o.value.clone(),
            "interactable" => e.interactable = o.value == "true" || o.value == "True",
            p => {
                let key = p.strip_prefix("attr.").unwrap_or(p);
                e.attributes.insert(key.to_string(), o.value.clone());
            }
        }
    }
    for c in &mut e.children {
        apply_override(c, o);
    }
}

impl SimApp {
    pub fn new(def: AppDefinition) -> SimApp {
        let rt = Runtime {
            page: def.start_page.clone(),
            stores: def.stores.clone(),
            overrides: Vec::new(),
        };
        let warnings = def.lint();
        SimApp {
            def: Arc::new(def),
            bug: None,
            rt,
            steps: 0,
            current: None,
            warnings,
        }
    }

    /// Wraps the transition function with a bug applied whenever its trigger holds.
    pub fn inject(mut self, bug: BugSpec) -> SimApp {
        self.bug = Some(bug);
        self
    }

    pub fn bug(&self) -> Option<&BugSpec> {
        self.bug.as_ref()
    }

    pub fn definition(&self) -> &AppDefinition {
        &self.def
    }

    pub fn current_page_name(&self) -> &str {
        &self.rt.page
    }

    pub fn stores(&self) -> &BTreeMap<String, Json> {
        &self.rt.stores
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn render(&self, rt: &Runtime, overwrite: Option<(&str, &str)>) -> Result<RawPage, Fault> {
        let mut stores = rt.stores.clone();
        if let Some((path, expr)) = overwrite {
            let value = Scope::new(&stores).to_json(expr)?;
            *json_path_mut(&mut stores, path)? = value;
        }
        let tpl = &self.def.pages[&rt.page];
        let mut scope = Scope::new(&stores);
        for (name, expr) in &tpl.bindings {
            let expr = expr
                .as_str()
                .ok_or_else(|| fault(format!("binding `{name}` of page `{}` is not an expression", rt.page)))?;
            let v = scope.eval(expr)?;
            scope.env.bind(name.clone(), v);
        }
        let mut roots = Vec::new();
        render_element(&tpl.root, &mut scope, &mut roots)?;
        let mut root = roots
            .pop()
            .ok_or_else(|| fault(format!("page `{}` rendered no root element", rt.page)))?;
        for o in rt.overrides.iter().filter(|o| o.page == rt.page) {
            apply_override(&mut root, o);
        }
        let page = RawPage {
            url: tpl.route.clone(),
            title: scope.text(&tpl.title)?,
            width: self.def.width,
            height: self.def.height,
            root,
            screenshot: None,
        };
        page.validate().map_err(|e| fault(format!("page `{}` renders badly: {e}", rt.page)))?;
        Ok(page)
    }

    fn transition(&self, rt: &mut Runtime, action: &ExecutableAction, target: Option<&RawElement>) -> Result<(), Fault> {
        let Some(rule) = self
            .def
            .transitions
            .iter()
            .find(|t| (t.page == "*" || t.page == rt.page) && matcher_matches(&t.on, action, target))
        else {
            return Ok(());
        };
        for eff in &rule.effects {
            let mut scope = Scope::new(&rt.stores);
            let input = action.param("text").or(action.param("key")).unwrap_or("");
            scope.env.bind("input", Value::str(input));
            scope.env.bind("target", target.map_or(Value::None, target_binding));
            if let Some(w) = eff.condition() {
                if !scope.truthy(w)? {
                    continue;
                }
            }
            match eff {
                Effect::Navigate { navigate, .. } => rt.page = navigate.clone(),
                Effect::Set { set, value, .. } => {
                    let v = scope.to_json(value)?;
                    *json_path_mut(&mut rt.stores, set)? = v;
                }
                Effect::Push { push, value, .. } => {
                    let v = scope.to_json(value)?;
                    match json_path_mut(&mut rt.stores, push)? {
                        Json::Array(a) => a.push(v),
                        _ => return Err(fault(format!("`{push}` is not a list"))),
                    }
                }
                Effect::Remove { remove, index, .. } => {
                    let i = scope
                        .eval(index)?
                        .as_int()
                        .ok_or_else(|| fault(format!("remove index `{index}` is not an int")))?;
                    match json_path_mut(&mut rt.stores, remove)? {
                        Json::Array(a) if i >= 0 && (i as usize) < a.len() => {
                            a.remove(i as usize);
                        }
                        Json::Array(_) => return Err(fault(format!("remove index {i} out of range for `{remove}`"))),
                        _ => return Err(fault(format!("`{remove}` is not a list"))),
                    }
                }
                Effect::SetElement {
                    set_element,
                    property,
                    value,
                    ..
                } => {
                    let v = scope.text(value)?;
                    rt.overrides.push(Override {
                        page: rt.page.clone(),
                        selector: set_element.clone(),
                        property: property.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    fn triggered(&self, bug: &BugSpec, from: &str, to: &str, action: &ExecutableAction, target: Option<&RawElement>) -> bool {
        let t = &bug.trigger;
        t.page.as_deref().is_none_or(|p| p == to)
            && t.from.as_deref().is_none_or(|p| p == from)
            && t.step.is_none_or(|s| s == self.steps)
            && t.action.as_ref().is_none_or(|m| matcher_matches(m, action, target))
    }

    fn current(&mut self) -> Result<RawPage, Fault> {
        if let Some(p) = &self.current {
            return Ok(p.clone());
        }
        let p = self.render(&self.rt, None)?;
        self.current = Some(p.clone());
        Ok(p)
    }
}

impl Driver for SimApp {
    fn observe(&mut self) -> Result<RawPage, DriverFault> {
        self.current()
    }

    fn perform(&mut self, action: &ExecutableAction) -> Result<RawPage, DriverFault> {
        let before = self.current()?;
        let target = match action.action_type {
            ActionType::Click | ActionType::Type | ActionType::Press => Some(
                before
                    .find(&action.target)
                    .cloned()
                    .ok_or_else(|| fault(format!("no element `{}` on page `{}`", action.target, self.rt.page)))?,
            ),
            ActionType::Scroll | ActionType::Wait => None,
        };
        if action.action_type == ActionType::Click && !target.as_ref().is_some_and(|t| t.interactable) {
            return Err(fault(format!("element `{}` is not interactable", action.target)));
        }
        self.steps += 1;
        let from = self.rt.page.clone();
        let mut next = self.rt.clone();
        self.transition(&mut next, action, target.as_ref())?;
        let bug = self.bug.clone().filter(|b| self.triggered(b, &from, &next.page, action, target.as_ref()));
        let mut overwrite = None;
        match bug.as_ref().map(|b| (&b.category, &b.payload)) {
            Some((BugCategory::NoopAction, BugPayload::Swallow { swallow })) => {
                if matcher_matches(swallow, action, target.as_ref()) {
                    return Ok(before);
                }
                self.warnings.push(format!("step {}: noop bug matched no action", self.steps));
            }
            Some((BugCategory::NavigationFailure, BugPayload::Redirect { redirect })) => {
                if self.def.pages.contains_key(redirect) {
                    next.page = redirect.clone();
                } else {
                    self.warnings.push(format!("step {}: redirect target `{redirect}` does not exist", self.steps));
                }
            }
            Some((BugCategory::DataInconsistency, BugPayload::Overwrite { path, value })) => {
                overwrite = Some((path.clone(), value.clone()));
            }
            Some((BugCategory::MissingElement, BugPayload::Delete { .. })) | None => {}
            Some((c, _)) => self
                .warnings
                .push(format!("step {}: payload does not fit a {} bug", self.steps, c.as_str())),
        }
        let mut page = self.render(&next, overwrite.as_ref().map(|(p, v)| (p.as_str(), v.as_str())))?;
        if let Some(BugSpec {
            category: BugCategory::MissingElement,
            payload: BugPayload::Delete { selector },
            ..
        }) = &bug
        {
            if remove_matching(&mut page.root, selector) == 0 {
                self.warnings
                    .push(format!("step {}: selector `{selector}` matched nothing", self.steps));
            }
        }
        self.rt = next;
        self.current = Some(page.clone());
        Ok(page)
    }

    fn reset(&mut self) -> Result<RawPage, DriverFault> {
        self.rt = Runtime {
            page: self.def.start_page.clone(),
            stores: self.def.stores.clone(),
            overrides: Vec::new(),
        };
        self.steps = 0;
        self.current = None;
        self.current()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shop() -> SimApp {
        load_app("minishop").unwrap()
    }

    fn click(id: &str) -> ExecutableAction {
        ExecutableAction::click(id)
    }

    #[test]
    fn bundled_apps_load_and_start() {
        let mut s = shop();
        let home = s.observe().unwrap();
        assert_eq!(home.url, "/");
        assert!(s.warnings().is_empty(), "{:?}", s.warnings());
        let mut d = load_app("minidocs").unwrap();
        assert_eq!(d.observe().unwrap().url, "/books");
    }

    #[test]
    fn unknown_start_page_is_rejected() {
        let mut v: Json = serde_json::from_str(MINISHOP).unwrap();
        v["start_page"] = Json::String("nowhere".into());
        let err = AppDefinition::parse(&v.to_string(), "x.json").unwrap_err();
        assert!(err.to_string().contains("start_page"), "{err}");
        let err = AppDefinition::parse("{\n  \"name\": 3\n}", "y.json").unwrap_err();
        assert!(matches!(err, LoadError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn shopping_flow_updates_cart() {
        let mut s = shop();
        s.reset().unwrap();
        s.perform(&ExecutableAction::type_text("search", "camera")).unwrap();
        let results = s.perform(&click("search-btn")).unwrap();
        assert_eq!(results.url, "/search");
        let first = results.elements().into_iter().find(|e| e.id.starts_with("result-")).unwrap().id.clone();
        let product = s.perform(&click(&first)).unwrap();
        assert_eq!(product.url, "/product");
        assert!(product.find("add-to-cart").is_some());
        s.perform(&click("add-to-cart")).unwrap();
        let cart = s.perform(&click("nav-cart")).unwrap();
        assert_eq!(cart.url, "/cart");
        assert!(cart.find("item-0").is_some());
        let home = s.perform(&click("continue")).unwrap();
        assert_eq!(home.url, "/");
    }

    #[test]
    fn invalid_target_is_a_fault() {
        let mut s = shop();
        assert!(s.perform(&click("nope")).is_err());
    }

    #[test]
    fn reset_restores_seeds_and_is_deterministic() {
        let mut s = shop();
        let start = s.reset().unwrap();
        s.perform(&ExecutableAction::type_text("search", "camera")).unwrap();
        let a = s.perform(&click("search-btn")).unwrap();
        assert_eq!(s.reset().unwrap(), start);
        s.perform(&ExecutableAction::type_text("search", "camera")).unwrap();
        assert_eq!(s.perform(&click("search-btn")).unwrap(), a);
    }

    fn bug(category: BugCategory, trigger: BugTrigger, payload: BugPayload) -> BugSpec {
        BugSpec { category, trigger, payload }
    }

    #[test]
    fn missing_element_bug() {
        let mut s = shop().inject(bug(
            BugCategory::MissingElement,
            BugTrigger {
                page: Some("product".into()),
                ..Default::default()
            },
            BugPayload::Delete {
                selector: "#add-to-cart".into(),
            },
        ));
        s.reset().unwrap();
        s.perform(&ExecutableAction::type_text("search", "camera")).unwrap();
        let r = s.perform(&click("search-btn")).unwrap();
        let first = r.elements().into_iter().find(|e| e.id.starts_with("result-")).unwrap().id.clone();
        let p = s.perform(&click(&first)).unwrap();
        assert!(p.find("add-to-cart").is_none());
        assert!(s.warnings().is_empty());
    }

    #[test]
    fn noop_and_redirect_bugs() {
        let swallow = ActionMatcher {
            action_type: ActionType::Click,
            target: Some("#nav-cart".into()),
            param: None,
        };
        let mut s = shop().inject(bug(BugCategory::NoopAction, BugTrigger::default(), BugPayload::Swallow { swallow }));
        let home = s.reset().unwrap();
        assert_eq!(s.perform(&click("nav-cart")).unwrap(), home);

        let mut s = shop().inject(bug(
            BugCategory::NavigationFailure,
            BugTrigger {
                page: Some("cart".into()),
                ..Default::default()
            },
            BugPayload::Redirect { redirect: "home".into() },
        ));
        s.reset().unwrap();
        assert_eq!(s.perform(&click("nav-cart")).unwrap().url, "/");
    }

    #[test]
    fn untriggered_bug_is_invisible() {
        let never = BugTrigger {
            step: Some(10_000),
            ..Default::default()
        };
        let mut clean = shop();
        let mut bugged = shop().inject(bug(
            BugCategory::MissingElement,
            never,
            BugPayload::Delete {
                selector: "#search".into(),
            },
        ));
        assert_eq!(clean.reset().unwrap(), bugged.reset().unwrap());
        for a in [ExecutableAction::type_text("search", "lens"), click("search-btn"), click("nav-cart")] {
            assert_eq!(clean.perform(&a).unwrap(), bugged.perform(&a).unwrap());
        }
    }

    #[test]
    fn selectors() {
        let e = RawElement::new("result-3", "link", "Camera", BBox::new(0, 0, 1, 1));
        assert!(selector_matches("#result-*", &e));
        assert!(selector_matches("text:camera", &e));
        assert!(selector_matches("role:link", &e));
        assert!(!selector_matches("#result-1?", &e));
    }
}

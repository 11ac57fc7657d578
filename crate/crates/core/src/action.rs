//! Grounding natural-language actions to executable actions and applying them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::gateway::{json_payload, GatewayError, ModelGateway, Prompt, RoleTag};
use crate::page::{BBox, RawElement, RawPage};
use crate::trace::{tokenize, PageReidentifier, Session, State, TraceError};

pub const DEFAULT_RADIUS: i64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Click,
    Type,
    Press,
    Scroll,
    Wait,
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionType::Click => "click",
            ActionType::Type => "type",
            ActionType::Press => "press",
            ActionType::Scroll => "scroll",
            ActionType::Wait => "wait",
        })
    }
}

/// ⟨type, element, parameters⟩.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecutableAction {
    pub action_type: ActionType,
    /// Empty for scroll and wait.
    pub target: String,
    pub params: BTreeMap<String, String>,
}

impl ExecutableAction {
    pub fn click(target: &str) -> Self {
        ExecutableAction {
            action_type: ActionType::Click,
            target: target.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn type_text(target: &str, text: &str) -> Self {
        ExecutableAction {
            action_type: ActionType::Type,
            target: target.into(),
            params: BTreeMap::from([("text".into(), text.into())]),
        }
    }

    pub fn press(target: &str, key: &str) -> Self {
        ExecutableAction {
            action_type: ActionType::Press,
            target: target.into(),
            params: BTreeMap::from([("key".into(), key.into())]),
        }
    }

    pub fn wait(ms: u64) -> Self {
        ExecutableAction {
            action_type: ActionType::Wait,
            target: String::new(),
            params: BTreeMap::from([("ms".into(), ms.to_string())]),
        }
    }

    pub fn scroll(dx: i64, dy: i64) -> Self {
        ExecutableAction {
            action_type: ActionType::Scroll,
            target: String::new(),
            params: BTreeMap::from([("dx".into(), dx.to_string()), ("dy".into(), dy.to_string())]),
        }
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    /// Checks the action against the page it will be performed on.
    pub fn validate(&self, page: &RawPage) -> Result<(), ActionError> {
        match self.action_type {
            ActionType::Click | ActionType::Type | ActionType::Press => {
                if page.find(&self.target).is_none() {
                    return Err(ActionError::InvalidTarget(self.target.clone()));
                }
            }
            ActionType::Scroll | ActionType::Wait => {}
        }
        if self.action_type == ActionType::Type && self.param("text").is_none_or(str::is_empty) {
            return Err(ActionError::Compile("type needs non-empty text".into()));
        }
        Ok(())
    }
}

impl fmt::Display for ExecutableAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.action_type)?;
        if !self.target.is_empty() {
            write!(f, " {}", self.target)?;
        }
        for (k, v) in &self.params {
            write!(f, " {k}={v:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub coarse_point: (i64, i64),
    pub crop: BBox,
    pub candidates: Vec<String>,
    pub chosen: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundingError {
    #[error("no interactable element near the target")]
    NoCandidates,
    #[error("selection `{chosen}` is not one of the candidates {candidates:?}")]
    InvalidChoice { chosen: String, candidates: Vec<String> },
    #[error("grounder unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("driver fault: {0}")]
pub struct DriverFault(pub String);

#[derive(Debug, Error)]
pub enum ActionError {
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error("cannot compile action: {0}")]
    Compile(String),
    #[error("target `{0}` is not on the current page")]
    InvalidTarget(String),
    #[error(transparent)]
    Driver(#[from] DriverFault),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("session has no current state")]
    NoState,
}

/// Transition function of the application under test.
pub trait Driver {
    fn observe(&mut self) -> Result<RawPage, DriverFault>;
    /// Applies an action; an invalid target is a fault, never a silent no-op.
    fn perform(&mut self, action: &ExecutableAction) -> Result<RawPage, DriverFault>;
    fn reset(&mut self) -> Result<RawPage, DriverFault>;
}

impl<D: Driver + ?Sized> Driver for Box<D> {
    fn observe(&mut self) -> Result<RawPage, DriverFault> {
        (**self).observe()
    }

    fn perform(&mut self, action: &ExecutableAction) -> Result<RawPage, DriverFault> {
        (**self).perform(action)
    }

    fn reset(&mut self) -> Result<RawPage, DriverFault> {
        (**self).reset()
    }
}

// ---------------------------------------------------------------------------
// Intent parsing

fn re(cell: &'static OnceLock<Regex>, src: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(src).expect("static pattern"))
}

const CLICK_VERBS: &[&str] = &[
    "click", "tap", "select", "open", "choose", "follow", "submit", "check", "go", "navigate", "hit", "add", "remove",
    "delete", "save", "continue", "proceed", "view",
];
const TYPE_VERBS: &[&str] = &["type", "enter", "fill", "input", "write", "search"];
const TYPEABLE_ROLES: &[&str] = &["input", "textbox", "textarea", "searchbox", "combobox"];

fn is_verb(word: &str) -> bool {
    let w = word.to_lowercase();
    CLICK_VERBS.contains(&w.as_str()) || TYPE_VERBS.contains(&w.as_str()) || matches!(w.as_str(), "press" | "scroll" | "wait")
}

/// Text between the first pair of matching quotes.
pub fn quoted_text(s: &str) -> Option<String> {
    static Q: OnceLock<Regex> = OnceLock::new();
    re(&Q, r#""([^"]*)"|(?:^|[^\w])'((?:[^']|'\w)*)'(?:$|[^\w])|“([^”]*)”"#)
        .captures(s)
        .and_then(|c| c.get(1).or_else(|| c.get(2)).or_else(|| c.get(3)))
        .map(|m| m.as_str().to_string())
}

/// Splits a step's action text into single actions on `;`, `then` and `and <verb>`, outside quotes.
pub fn split_actions(action_nl: &str) -> Vec<String> {
    let chars: Vec<char> = action_nl.chars().collect();
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut i = 0;
    let word_at = |i: usize| -> String { chars[i..].iter().take_while(|c| c.is_alphanumeric()).collect() };
    while i < chars.len() {
        let c = chars[i];
        let prev_alnum = i > 0 && chars[i - 1].is_alphanumeric();
        let next_alnum = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        match quote {
            Some(q) => {
                if c == q && (q != '\'' || !next_alnum) {
                    quote = None;
                }
                cur.push(c);
                i += 1;
                continue;
            }
            None if c == '"' || (c == '\'' && !prev_alnum) => {
                quote = Some(c);
                cur.push(c);
                i += 1;
                continue;
            }
            None => {}
        }
        if c == ';' {
            parts.push(std::mem::take(&mut cur));
            i += 1;
            continue;
        }
        if !prev_alnum && c.is_alphabetic() {
            let w = word_at(i).to_lowercase();
            let after = i + w.chars().count();
            if w == "then" {
                parts.push(std::mem::take(&mut cur));
                i = after;
                continue;
            }
            if w == "and" {
                let mut j = after;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                if j < chars.len() && is_verb(&word_at(j)) {
                    parts.push(std::mem::take(&mut cur));
                    i = j;
                    continue;
                }
            }
        }
        cur.push(c);
        i += 1;
    }
    parts.push(cur);
    parts
        .into_iter()
        .map(|p| p.trim().trim_matches(|c: char| c == ',' || c == '.' || c.is_whitespace()).to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Intent {
    Click,
    Type(String),
    Press(String),
    Scroll(i64, i64),
    Wait(u64),
}

/// Deterministic rule table from action text to intent.
pub fn classify(action_nl: &str) -> Result<Intent, ActionError> {
    static WAIT: OnceLock<Regex> = OnceLock::new();
    static PRESS: OnceLock<Regex> = OnceLock::new();
    static SCROLL: OnceLock<Regex> = OnceLock::new();
    let s = action_nl.trim();
    if let Some(c) = re(&WAIT, r"(?i)^wait(?:\s+for)?\s+(\d+(?:\.\d+)?)\s*(ms|milliseconds?|s|secs?|seconds?)?\b").captures(s) {
        let n: f64 = c[1].parse().map_err(|_| ActionError::Compile(format!("bad duration in `{s}`")))?;
        let ms = match c.get(2).map(|m| m.as_str().to_lowercase()) {
            Some(u) if u.starts_with("ms") || u.starts_with("milli") => n,
            _ => n * 1000.0,
        };
        return Ok(Intent::Wait(ms.round() as u64));
    }
    if let Some(c) = re(&PRESS, r#"(?i)^press\s+(?:the\s+)?["']?([A-Za-z0-9]+)"#).captures(s) {
        return Ok(Intent::Press(c[1].to_string()));
    }
    if let Some(c) = re(&SCROLL, r"(?i)^scroll(?:\s+(up|down|left|right))?").captures(s) {
        let (dx, dy) = match c.get(1).map(|m| m.as_str().to_lowercase()).as_deref() {
            Some("up") => (0, -300),
            Some("left") => (-300, 0),
            Some("right") => (300, 0),
            _ => (0, 300),
        };
        return Ok(Intent::Scroll(dx, dy));
    }
    let first = s.split_whitespace().next().unwrap_or("").to_lowercase();
    if TYPE_VERBS.contains(&first.as_str()) {
        return match quoted_text(s) {
            Some(t) if !t.is_empty() => Ok(Intent::Type(t)),
            _ => Err(ActionError::Compile(format!("no quoted text to type in `{s}`"))),
        };
    }
    if CLICK_VERBS.contains(&first.as_str()) {
        return Ok(Intent::Click);
    }
    Err(ActionError::Compile(format!("unmappable action `{s}`")))
}

/// The part of the action text that describes the target element.
pub fn target_phrase(action_nl: &str, intent: &Intent) -> String {
    let s = action_nl.trim();
    let rest = s.split_once(char::is_whitespace).map_or("", |(_, r)| r).trim();
    match intent {
        Intent::Type(text) => {
            static INTO: OnceLock<Regex> = OnceLock::new();
            let after = re(&INTO, r"(?i)\b(?:in|into|on)\s+(?:the\s+)?(.+)$")
                .captures(rest)
                .map(|c| c[1].to_string());
            after.unwrap_or_else(|| rest.replace(text.as_str(), ""))
        }
        _ => rest.to_string(),
    }
}

fn typeable(role: &str) -> bool {
    TYPEABLE_ROLES.contains(&role)
}

fn match_score(e: &RawElement, phrase: &str) -> f64 {
    let q: std::collections::BTreeSet<String> = tokenize(phrase).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let text: std::collections::BTreeSet<String> = tokenize(&e.text).into_iter().collect();
    let mut all = text.clone();
    all.extend(tokenize(&e.role));
    all.extend(tokenize(&e.id));
    for v in e.attributes.values() {
        all.extend(tokenize(v));
    }
    let j = |o: &std::collections::BTreeSet<String>| {
        let u = q.union(o).count();
        if u == 0 {
            0.0
        } else {
            q.intersection(o).count() as f64 / u as f64
        }
    };
    j(&text).max(j(&all))
}

fn eligible(e: &RawElement, intent: &Intent) -> bool {
    e.interactable && (!matches!(intent, Intent::Type(_)) || typeable(&e.role))
}

// ---------------------------------------------------------------------------
// Grounding

/// First grounding stage: a coarse point on the page.
pub trait CoarseGrounder: Send + Sync {
    fn locate(&self, action_nl: &str, page: &RawPage) -> Result<(i64, i64), GroundingError>;
}

/// Centroid of the interactable element best matching the action text.
#[derive(Debug, Clone, Copy, Default)]
pub struct TextGrounder;

impl CoarseGrounder for TextGrounder {
    fn locate(&self, action_nl: &str, page: &RawPage) -> Result<(i64, i64), GroundingError> {
        let intent = classify(action_nl).unwrap_or(Intent::Click);
        let phrase = target_phrase(action_nl, &intent);
        let mut best: Option<(&RawElement, f64)> = None;
        for e in page.elements() {
            if !eligible(e, &intent) {
                continue;
            }
            let s = match_score(e, &phrase);
            if s > 0.0 && best.is_none_or(|(b, bs)| s > bs || (s == bs && e.id < b.id)) {
                best = Some((e, s));
            }
        }
        best.map(|(e, _)| e.bbox.center()).ok_or(GroundingError::NoCandidates)
    }
}

/// Always answers the same point.
#[derive(Debug, Clone, Copy)]
pub struct FixedGrounder(pub i64, pub i64);

impl CoarseGrounder for FixedGrounder {
    fn locate(&self, _action_nl: &str, _page: &RawPage) -> Result<(i64, i64), GroundingError> {
        Ok((self.0, self.1))
    }
}

/// Placeholder for a vision grounding model endpoint.
#[derive(Debug, Clone, Default)]
pub struct RemoteGrounder {
    pub endpoint: Option<String>,
}

impl CoarseGrounder for RemoteGrounder {
    fn locate(&self, _action_nl: &str, _page: &RawPage) -> Result<(i64, i64), GroundingError> {
        Err(GroundingError::Unavailable(match &self.endpoint {
            Some(e) => format!("no grounding client for {e}"),
            None => "no grounding endpoint configured".into(),
        }))
    }
}

/// Square of side 2r centred at `p`, clipped to the page.
pub fn crop_rect(p: (i64, i64), r: i64, width: i64, height: i64) -> BBox {
    BBox::new((p.0 - r).max(0), (p.1 - r).max(0), (p.0 + r).min(width), (p.1 + r).min(height))
}

fn candidates_in<'a>(page: &'a RawPage, crop: &BBox) -> Vec<&'a RawElement> {
    page.elements()
        .into_iter()
        .filter(|e| e.interactable && e.bbox.intersects(crop))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest text match, then lexicographic id.
    Deterministic,
    Gateway,
}

pub fn selection_prompt(action_nl: &str, candidates: &[&RawElement]) -> Prompt {
    let table: Vec<String> = candidates
        .iter()
        .map(|e| {
            let b = e.bbox;
            format!("[{}] {} {:?} @{},{},{},{}", e.id, e.role, e.text, b.xmin, b.ymin, b.xmax, b.ymax)
        })
        .collect();
    Prompt::new(
        RoleTag::SelectAction,
        vec![
            "Pick the marked element the action targets. Reply with its id only.".into(),
            format!("action: {action_nl}"),
            format!("candidates:\n{}", table.join("\n")),
        ],
    )
}

/// Coarse point, crop, marked candidates, precise choice.
pub fn ground(
    action_nl: &str,
    page: &RawPage,
    grounder: &dyn CoarseGrounder,
    selection: Selection,
    gateway: &dyn ModelGateway,
    radius: i64,
    tag: (&str, Option<usize>),
) -> Result<GroundingResult, GroundingError> {
    let point = grounder.locate(action_nl, page)?;
    let mut crop = crop_rect(point, radius, page.width, page.height);
    let mut cands = candidates_in(page, &crop);
    if cands.is_empty() {
        crop = crop_rect(point, radius * 2, page.width, page.height);
        cands = candidates_in(page, &crop);
    }
    if cands.is_empty() {
        return Err(GroundingError::NoCandidates);
    }
    let ids: Vec<String> = cands.iter().map(|e| e.id.clone()).collect();
    let chosen = if cands.len() == 1 {
        ids[0].clone()
    } else {
        match selection {
            Selection::Gateway => {
                let reply = gateway.complete(&selection_prompt(action_nl, &cands).tagged(tag.0, tag.1))?;
                let id = reply
                    .trim()
                    .trim_matches(|c: char| "[]`\"'.".contains(c) || c.is_whitespace())
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_matches(|c: char| "[]`\"'.".contains(c))
                    .to_string();
                if !ids.contains(&id) {
                    return Err(GroundingError::InvalidChoice {
                        chosen: id,
                        candidates: ids,
                    });
                }
                id
            }
            Selection::Deterministic => {
                let intent = classify(action_nl).unwrap_or(Intent::Click);
                let phrase = target_phrase(action_nl, &intent);
                let mut ranked: Vec<(&RawElement, f64)> = cands
                    .iter()
                    .map(|e| (*e, if eligible(e, &intent) { match_score(e, &phrase) } else { -1.0 }))
                    .collect();
                ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.id.cmp(&b.0.id)));
                ranked[0].0.id.clone()
            }
        }
    };
    Ok(GroundingResult {
        coarse_point: point,
        crop,
        candidates: ids,
        chosen,
    })
}

fn compile_prompt(action_nl: &str, grounding: Option<&GroundingResult>) -> Prompt {
    Prompt::new(
        RoleTag::CompileAction,
        vec![
            "Compile the action into JSON {\"action_type\": click|type|press|scroll|wait, \"target\": element id or \"\", \"params\": {..}}. \
             Use params text for type, key for press, dx/dy for scroll, ms for wait."
                .into(),
            format!("action: {action_nl}"),
            format!("target: {}", grounding.map_or("", |g| g.chosen.as_str())),
        ],
    )
}

/// Maps an intent and its grounded target to an executable action.
pub fn compile_action(intent: &Intent, grounding: Option<&GroundingResult>, focus: Option<&str>) -> Result<ExecutableAction, ActionError> {
    let target = || {
        grounding
            .map(|g| g.chosen.clone())
            .ok_or_else(|| ActionError::Compile("action needs a grounded target".into()))
    };
    Ok(match intent {
        Intent::Click => ExecutableAction::click(&target()?),
        Intent::Type(text) => ExecutableAction::type_text(&target()?, text),
        Intent::Press(key) => {
            let t = match (grounding, focus) {
                (Some(g), _) => g.chosen.clone(),
                (None, Some(f)) => f.to_string(),
                (None, None) => return Err(ActionError::Compile("press needs a focused element".into())),
            };
            ExecutableAction::press(&t, key)
        }
        Intent::Scroll(dx, dy) => ExecutableAction::scroll(*dx, *dy),
        Intent::Wait(ms) => ExecutableAction::wait(*ms),
    })
}

fn action_from_json(reply: &str) -> Result<ExecutableAction, ActionError> {
    let j: Json = serde_json::from_str(json_payload(reply)).map_err(|e| ActionError::Compile(format!("malformed compile reply: {e}")))?;
    let action_type: ActionType = serde_json::from_value(j["action_type"].clone())
        .map_err(|_| ActionError::Compile(format!("unknown action type in `{reply}`")))?;
    let params = j["params"]
        .as_object()
        .map(|m| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_string)))
                .collect()
        })
        .unwrap_or_default();
    Ok(ExecutableAction {
        action_type,
        target: j["target"].as_str().unwrap_or_default().to_string(),
        params,
    })
}

/// Driver-side step: perform an action and append the resulting state.
pub fn apply(
    driver: &mut dyn Driver,
    action: &ExecutableAction,
    session: &mut Session,
    reidentifier: &PageReidentifier,
) -> Result<Arc<State>, ActionError> {
    let current = session.state().ok_or(ActionError::NoState)?.to_raw();
    action.validate(&current)?;
    let page = driver.perform(action)?;
    Ok(session.append_state(&page, reidentifier)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub radius: i64,
    pub selection: Selection,
    pub compile_with_gateway: bool,
    pub cache: bool,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            radius: DEFAULT_RADIUS,
            selection: Selection::Deterministic,
            compile_with_gateway: false,
            cache: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedAction {
    pub action_nl: String,
    pub action: ExecutableAction,
    pub grounding: Option<GroundingResult>,
    pub state_index: usize,
}

/// Grounds, compiles and applies the actions of one step.
pub struct ActionExecutor {
    pub grounder: Arc<dyn CoarseGrounder>,
    pub gateway: Arc<dyn ModelGateway>,
    pub config: ExecutorConfig,
    cache: Mutex<HashMap<(String, String), ExecutableAction>>,
    focus: Mutex<Option<String>>,
}

impl ActionExecutor {
    pub fn new(grounder: Arc<dyn CoarseGrounder>, gateway: Arc<dyn ModelGateway>, config: ExecutorConfig) -> Self {
        ActionExecutor {
            grounder,
            gateway,
            config,
            cache: Mutex::new(HashMap::new()),
            focus: Mutex::new(None),
        }
    }

    /// Resolves one single-action text against a page.
    pub fn resolve(
        &self,
        action_nl: &str,
        page: &RawPage,
        fingerprint: &str,
        tag: (&str, Option<usize>),
    ) -> Result<(ExecutableAction, Option<GroundingResult>), ActionError> {
        let key = (fingerprint.to_string(), action_nl.to_string());
        if self.config.cache {
            if let Some(hit) = self.cache.lock().expect("action cache lock").get(&key) {
                return Ok((hit.clone(), None));
            }
        }
        let (action, grounding) = if self.config.compile_with_gateway {
            let intent = classify(action_nl).unwrap_or(Intent::Click);
            let grounding = match intent {
                Intent::Click | Intent::Type(_) => Some(self.ground(action_nl, page, tag)?),
                _ => None,
            };
            let reply = self
                .gateway
                .complete(&compile_prompt(action_nl, grounding.as_ref()).tagged(tag.0, tag.1))
                .map_err(GroundingError::from)?;
            (action_from_json(&reply)?, grounding)
        } else {
            let intent = classify(action_nl)?;
            let grounding = match intent {
                Intent::Click | Intent::Type(_) => Some(self.ground(action_nl, page, tag)?),
                _ => None,
            };
            let focus = self.focus.lock().expect("focus lock").clone();
            (compile_action(&intent, grounding.as_ref(), focus.as_deref())?, grounding)
        };
        if self.config.cache {
            self.cache.lock().expect("action cache lock").insert(key, action.clone());
        }
        Ok((action, grounding))
    }

    fn ground(&self, action_nl: &str, page: &RawPage, tag: (&str, Option<usize>)) -> Result<GroundingResult, GroundingError> {
        ground(
            action_nl,
            page,
            self.grounder.as_ref(),
            self.config.selection,
            self.gateway.as_ref(),
            self.config.radius,
            tag,
        )
    }

    /// Applies every action named in `action_nl`; the trace gains one state per action.
    pub fn execute(
        &self,
        action_nl: &str,
        driver: &mut dyn Driver,
        session: &mut Session,
        reidentifier: &PageReidentifier,
        tag: (&str, Option<usize>),
    ) -> Result<Vec<AppliedAction>, ActionError> {
        let mut applied = Vec::new();
        for part in split_actions(action_nl) {
            let state = session.state().ok_or(ActionError::NoState)?.clone();
            let page = state.to_raw();
            let (action, grounding) = self.resolve(&part, &page, &state.fingerprint, tag)?;
            let next = apply(driver, &action, session, reidentifier)?;
            if matches!(action.action_type, ActionType::Type | ActionType::Click) {
                *self.focus.lock().expect("focus lock") = Some(action.target.clone());
            }
            applied.push(AppliedAction {
                action_nl: part,
                action,
                grounding,
                state_index: next.step_index,
            });
        }
        Ok(applied)
    }

    pub fn reset_focus(&self) {
        *self.focus.lock().expect("focus lock") = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{NullGateway, RecordingGateway, Script, ScriptRule, ScriptedGateway};

    fn btn(id: &str, text: &str, x: i64, y: i64) -> RawElement {
        RawElement::new(id, "button", text, BBox::new(x, y, x + 80, y + 30)).interactable()
    }

    fn page(children: Vec<RawElement>) -> RawPage {
        RawPage {
            url: "/p".into(),
            title: "P".into(),
            width: 1000,
            height: 1000,
            root: RawElement::new("root", "page", "", BBox::new(0, 0, 1000, 1000)).with_children(children),
            screenshot: None,
        }
    }

    fn select_gateway(answer: &str) -> ScriptedGateway {
        ScriptedGateway::new(Script {
            rules: vec![ScriptRule {
                name: String::new(),
                role: RoleTag::SelectAction,
                glob: None,
                regex: None,
                responses: vec![answer.into()],
                repeat: true,
                expand: false,
            }],
            ..Script::default()
        })
        .unwrap()
    }

    #[test]
    fn single_candidate_is_chosen_directly() {
        let p = page(vec![btn("add", "Add to Cart", 100, 100), btn("far", "Checkout", 900, 900)]);
        let g = ground("click Add to Cart", &p, &TextGrounder, Selection::Gateway, &NullGateway, 200, ("r", None)).unwrap();
        assert_eq!(g.candidates, ["add"]);
        assert_eq!(g.chosen, "add");
        assert_eq!(g.coarse_point, (140, 115));
        assert_eq!(g.crop, BBox::new(0, 0, 340, 315));
    }

    #[test]
    fn gateway_picks_between_two_candidates() {
        let p = page(vec![btn("btn-3", "Save", 100, 100), btn("btn-7", "Save draft", 200, 100)]);
        let g = ground("click save", &p, &FixedGrounder(190, 115), Selection::Gateway, &select_gateway("btn-7"), 200, ("r", None)).unwrap();
        assert_eq!(g.candidates, ["btn-3", "btn-7"]);
        assert_eq!(g.chosen, "btn-7");
        let err = ground("click save", &p, &FixedGrounder(190, 115), Selection::Gateway, &select_gateway("btn-9"), 200, ("r", None)).unwrap_err();
        assert!(matches!(err, GroundingError::InvalidChoice { .. }));
        let det = ground("click save", &p, &FixedGrounder(190, 115), Selection::Deterministic, &NullGateway, 200, ("r", None)).unwrap();
        assert_eq!(det.chosen, "btn-3");
    }

    #[test]
    fn empty_crop_doubles_once_then_fails() {
        let p = page(vec![btn("b", "OK", 500, 500)]);
        let g = ground("click OK", &p, &FixedGrounder(150, 150), Selection::Deterministic, &NullGateway, 200, ("r", None)).unwrap();
        assert_eq!(g.crop, BBox::new(0, 0, 550, 550));
        let far = page(vec![btn("b", "OK", 900, 900)]);
        let err = ground("click OK", &far, &FixedGrounder(50, 50), Selection::Deterministic, &NullGateway, 200, ("r", None)).unwrap_err();
        assert_eq!(err, GroundingError::NoCandidates);
    }

    #[test]
    fn rule_table() {
        assert_eq!(classify("type 'camera' in the search bar").unwrap(), Intent::Type("camera".into()));
        assert_eq!(classify("wait 2 seconds").unwrap(), Intent::Wait(2000));
        assert_eq!(classify("wait 150 ms").unwrap(), Intent::Wait(150));
        assert_eq!(classify("press Enter").unwrap(), Intent::Press("Enter".into()));
        assert_eq!(classify("scroll up").unwrap(), Intent::Scroll(0, -300));
        assert_eq!(classify("Click 'Books' link in navigation").unwrap(), Intent::Click);
        assert!(matches!(classify("ponder the meaning of life"), Err(ActionError::Compile(_))));
        assert!(matches!(classify("type in the box"), Err(ActionError::Compile(_))));
        assert_eq!(target_phrase("type 'camera' in the search bar", &Intent::Type("camera".into())), "search bar");
        let wait = compile_action(&Intent::Wait(2000), None, None).unwrap();
        assert_eq!((wait.target.as_str(), wait.param("ms")), ("", Some("2000")));
        let press = compile_action(&Intent::Press("Enter".into()), None, Some("q")).unwrap();
        assert_eq!((press.target.as_str(), press.param("key")), ("q", Some("Enter")));
    }

    #[test]
    fn multi_action_split() {
        assert_eq!(
            split_actions("Type 'Dune' in the title field and type 'Herbert' in the author field, then click 'Save'"),
            ["Type 'Dune' in the title field", "type 'Herbert' in the author field", "click 'Save'"]
        );
        assert_eq!(split_actions("Click 'Salt and Pepper' and wait 1 second"), ["Click 'Salt and Pepper'", "wait 1 second"]);
        assert_eq!(split_actions("click Terms and Conditions"), ["click Terms and Conditions"]);
        assert_eq!(split_actions("open the user's profile; wait 1 s"), ["open the user's profile", "wait 1 s"]);
    }

    #[test]
    fn type_targets_prefer_inputs() {
        let p = page(vec![
            RawElement::new("q", "input", "", BBox::new(100, 100, 300, 130)).interactable().with_attr("placeholder", "Search products"),
            btn("go", "Search", 310, 100),
        ]);
        let g = ground("type 'camera' in the search bar", &p, &TextGrounder, Selection::Deterministic, &NullGateway, 200, ("r", None)).unwrap();
        assert_eq!(g.chosen, "q");
    }

    struct Echo(RawPage, usize);

    impl Driver for Echo {
        fn observe(&mut self) -> Result<RawPage, DriverFault> {
            Ok(self.0.clone())
        }
        fn perform(&mut self, a: &ExecutableAction) -> Result<RawPage, DriverFault> {
            self.1 += 1;
            if a.action_type == ActionType::Click && self.0.find(&a.target).is_none() {
                return Err(DriverFault(format!("no {}", a.target)));
            }
            Ok(self.0.clone())
        }
        fn reset(&mut self) -> Result<RawPage, DriverFault> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn execute_applies_each_action_and_caches() {
        let p = page(vec![
            RawElement::new("q", "input", "", BBox::new(100, 100, 300, 130)).interactable().with_attr("placeholder", "Search"),
            btn("go", "Go", 310, 100),
        ]);
        let mut d = Echo(p.clone(), 0);
        let r = PageReidentifier::offline();
        let mut s = Session::new();
        s.append_state(&p, &r).unwrap();
        let gw = Arc::new(RecordingGateway::new(Arc::new(NullGateway)));
        let ex = ActionExecutor::new(
            Arc::new(TextGrounder),
            gw.clone(),
            ExecutorConfig {
                cache: true,
                ..ExecutorConfig::default()
            },
        );
        let applied = ex.execute("type 'camera' in the search field then press Enter and wait 1 second", &mut d, &mut s, &r, ("r", Some(1))).unwrap();
        assert_eq!(applied.len(), 3);
        assert_eq!(s.len(), 4);
        assert_eq!(applied[1].action, ExecutableAction::press("q", "Enter"));
        assert_eq!(applied.iter().map(|a| a.state_index).collect::<Vec<_>>(), [1, 2, 3]);
        let again = ex.execute("wait 1 second", &mut d, &mut s, &r, ("r", Some(2))).unwrap();
        assert!(again[0].grounding.is_none());
        assert_eq!(gw.call_count(), 0);
        assert_eq!(s.state().unwrap().page_id, s.history()[0].page_id);
    }

    #[test]
    fn invalid_target_fails_before_the_driver() {
        let p = page(vec![btn("a", "A", 0, 0)]);
        let mut d = Echo(p.clone(), 0);
        let r = PageReidentifier::offline();
        let mut s = Session::new();
        s.append_state(&p, &r).unwrap();
        let err = apply(&mut d, &ExecutableAction::click("zzz"), &mut s, &r).unwrap_err();
        assert!(matches!(err, ActionError::InvalidTarget(_)));
        assert_eq!(d.1, 0);
        assert_eq!(s.len(), 1);
    }
}

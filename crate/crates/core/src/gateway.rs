//! Model gateway: the single transport every prompting site goes through.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use fancy_regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    ParseRequirement,
    InferDependencies,
    SymbolizeAndAssert,
    ReidentifyPage,
    SelectAction,
    CompileAction,
    ExtractSymbol,
    SummarizeState,
}

impl RoleTag {
    pub const ALL: [RoleTag; 8] = [
        RoleTag::ParseRequirement,
        RoleTag::InferDependencies,
        RoleTag::SymbolizeAndAssert,
        RoleTag::ReidentifyPage,
        RoleTag::SelectAction,
        RoleTag::CompileAction,
        RoleTag::ExtractSymbol,
        RoleTag::SummarizeState,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoleTag::ParseRequirement => "parse_requirement",
            RoleTag::InferDependencies => "infer_dependencies",
            RoleTag::SymbolizeAndAssert => "symbolize_and_assert",
            RoleTag::ReidentifyPage => "reidentify_page",
            RoleTag::SelectAction => "select_action",
            RoleTag::CompileAction => "compile_action",
            RoleTag::ExtractSymbol => "extract_symbol",
            RoleTag::SummarizeState => "summarize_state",
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub role: RoleTag,
    pub parts: Vec<String>,
    pub run_id: String,
    pub step_index: Option<usize>,
}

impl Prompt {
    pub fn new(role: RoleTag, parts: Vec<String>) -> Self {
        Prompt {
            role,
            parts,
            run_id: String::new(),
            step_index: None,
        }
    }

    pub fn tagged(mut self, run_id: &str, step_index: Option<usize>) -> Self {
        self.run_id = run_id.to_string();
        self.step_index = step_index;
        self
    }

    pub fn text(&self) -> String {
        self.parts.join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("script error for {role}: {reason}")]
    Script { role: RoleTag, reason: String },
    #[error("gateway unavailable: {0}")]
    Unavailable(String),
    #[error("replay diverged at entry {seq}: {reason}")]
    Replay { seq: usize, reason: String },
}

pub trait ModelGateway: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError>;
}

impl<G: ModelGateway + ?Sized> ModelGateway for Arc<G> {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        (**self).complete(prompt)
    }
}

/// A gateway with no model behind it; every call is unavailable.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullGateway;

impl ModelGateway for NullGateway {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        Err(GatewayError::Unavailable(format!("no model configured for {}", prompt.role)))
    }
}

/// The JSON payload inside a model response: fenced block contents when
/// present, otherwise the span from the first `{`/`[` to the last `}`/`]`.
pub fn json_payload(text: &str) -> &str {
    let t = text.trim();
    if let Some(start) = t.find("```") {
        let body = &t[start + 3..];
        let body = body.find('\n').map_or(body, |nl| &body[nl + 1..]);
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    let open = t.find(['{', '[']);
    let close = t.rfind(['}', ']']);
    match (open, close) {
        (Some(a), Some(b)) if a < b => &t[a..=b],
        _ => t,
    }
}

// ---------------------------------------------------------------------------
// Scripted profile

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub name: String,
    pub role: RoleTag,
    /// Shell-style pattern (`*`, `?`) searched anywhere in the prompt text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glob: Option<String>,
    /// Regular expression (backreferences and lookaround allowed) searched in the prompt text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    pub responses: Vec<String>,
    /// Keep answering with the last response once the queue is drained.
    #[serde(default)]
    pub repeat: bool,
    /// Substitute `$1`, `${name}` capture groups of `regex` into the response.
    #[serde(default)]
    pub expand: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default = "default_strict")]
    pub strict: bool,
    #[serde(default)]
    pub default_response: String,
    /// Other script files whose rules are appended, relative to this file.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub include: Vec<String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

fn default_strict() -> bool {
    true
}

impl Default for Script {
    fn default() -> Self {
        Script {
            strict: true,
            default_response: String::new(),
            include: Vec::new(),
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScriptLoadError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed script {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("rule `{rule}` has an invalid pattern: {reason}")]
    Pattern { rule: String, reason: String },
    #[error("script include cycle through {0}")]
    Cycle(PathBuf),
}

impl Script {
    /// Reads a script file and resolves its includes.
    pub fn load(path: &Path) -> Result<Script, ScriptLoadError> {
        Script::load_inner(path, &mut Vec::new())
    }

    fn load_inner(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Script, ScriptLoadError> {
        let canonical = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
        if stack.contains(&canonical) {
            return Err(ScriptLoadError::Cycle(canonical));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ScriptLoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut script: Script = serde_json::from_str(&text).map_err(|source| ScriptLoadError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        stack.push(canonical);
        let base = path.parent().unwrap_or(Path::new("."));
        for inc in std::mem::take(&mut script.include) {
            let included = Script::load_inner(&base.join(&inc), stack)?;
            script.rules.extend(included.rules);
        }
        stack.pop();
        Ok(script)
    }
}

struct CompiledRule {
    rule: ScriptRule,
    glob: Option<Regex>,
    regex: Option<Regex>,
}

/// Deterministic gateway answering from ordered response queues.
pub struct ScriptedGateway {
    rules: Vec<CompiledRule>,
    cursors: Mutex<Vec<usize>>,
    strict: bool,
    default_response: String,
}

fn glob_to_regex(glob: &str) -> String {
    let mut out = String::from("(?s)");
    for c in glob.chars() {
        match c {
            '*' => out.push_str(".*"),
            '?' => out.push('.'),
            c => out.push_str(&fancy_regex::escape(&c.to_string())),
        }
    }
    out
}

impl ScriptedGateway {
    pub fn new(script: Script) -> Result<Self, ScriptLoadError> {
        let compile = |rule: &ScriptRule, src: &str| {
            Regex::new(src).map_err(|e| ScriptLoadError::Pattern {
                rule: if rule.name.is_empty() { rule.role.to_string() } else { rule.name.clone() },
                reason: e.to_string(),
            })
        };
        let mut rules = Vec::new();
        for rule in script.rules {
            let glob = rule.glob.as_deref().map(|g| compile(&rule, &glob_to_regex(g))).transpose()?;
            let regex = rule.regex.as_deref().map(|r| compile(&rule, r)).transpose()?;
            rules.push(CompiledRule { rule, glob, regex });
        }
        let n = rules.len();
        Ok(ScriptedGateway {
            rules,
            cursors: Mutex::new(vec![0; n]),
            strict: script.strict,
            default_response: script.default_response,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ScriptLoadError> {
        ScriptedGateway::new(Script::load(path)?)
    }

    fn matches(&self, rule: &CompiledRule, role: RoleTag, text: &str) -> bool {
        rule.rule.role == role
            && rule.glob.as_ref().is_none_or(|g| g.is_match(text).unwrap_or(false))
            && rule.regex.as_ref().is_none_or(|r| r.is_match(text).unwrap_or(false))
    }

    fn label(rule: &ScriptRule, i: usize) -> String {
        if rule.name.is_empty() {
            format!("#{i}")
        } else {
            rule.name.clone()
        }
    }
}

impl ModelGateway for ScriptedGateway {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let text = prompt.text();
        let hits: Vec<usize> = (0..self.rules.len())
            .filter(|&i| self.matches(&self.rules[i], prompt.role, &text))
            .collect();
        let script_err = |reason: String| GatewayError::Script {
            role: prompt.role,
            reason,
        };
        let i = match hits.as_slice() {
            [] if self.strict => return Err(script_err("no rule matches the prompt".into())),
            [] => return Ok(self.default_response.clone()),
            [i] => *i,
            [i, ..] if !self.strict => *i,
            many => {
                let names: Vec<String> = many.iter().map(|&i| Self::label(&self.rules[i].rule, i)).collect();
                return Err(script_err(format!("prompt matches several rules: {}", names.join(", "))));
            }
        };
        let compiled = &self.rules[i];
        let rule = &compiled.rule;
        let response = {
            let mut cursors = self.cursors.lock().expect("script cursor lock");
            let at = cursors[i];
            if at < rule.responses.len() {
                cursors[i] += 1;
                rule.responses[at].clone()
            } else if rule.repeat && !rule.responses.is_empty() {
                rule.responses[rule.responses.len() - 1].clone()
            } else if self.strict {
                return Err(script_err(format!("responses of rule {} are exhausted", Self::label(rule, i))));
            } else {
                return Ok(self.default_response.clone());
            }
        };
        if rule.expand {
            if let Some(Ok(Some(caps))) = compiled.regex.as_ref().map(|r| r.captures(text.as_str())) {
                let mut out = String::new();
                fancy_regex::Expander::default().append_expansion(&mut out, &response, &caps);
                return Ok(out);
            }
        }
        Ok(response)
    }
}

// ---------------------------------------------------------------------------
// Transcripts and replay

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub run_id: String,
    pub step_index: Option<usize>,
    pub role: RoleTag,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown run id `{0}`")]
pub struct UnknownRun(pub String);

/// Wraps a gateway and logs every exchange in call order.
pub struct RecordingGateway {
    inner: Arc<dyn ModelGateway>,
    log: Mutex<Vec<TranscriptEntry>>,
    runs: Mutex<BTreeSet<String>>,
}

impl RecordingGateway {
    pub fn new(inner: Arc<dyn ModelGateway>) -> Self {
        RecordingGateway {
            inner,
            log: Mutex::new(Vec::new()),
            runs: Mutex::new(BTreeSet::new()),
        }
    }

    /// Declares a run so that an empty transcript for it is distinguishable from an unknown id.
    pub fn begin_run(&self, run_id: &str) {
        self.runs.lock().expect("run set lock").insert(run_id.to_string());
    }

    pub fn transcript(&self, run_id: &str) -> Result<Transcript, UnknownRun> {
        let known = self.runs.lock().expect("run set lock").contains(run_id);
        let entries: Vec<TranscriptEntry> = self
            .log
            .lock()
            .expect("transcript lock")
            .iter()
            .filter(|e| e.run_id == run_id)
            .cloned()
            .collect();
        if !known && entries.is_empty() {
            return Err(UnknownRun(run_id.to_string()));
        }
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.seq = i;
                e
            })
            .collect();
        Ok(Transcript { entries })
    }

    pub fn full_transcript(&self) -> Transcript {
        Transcript {
            entries: self.log.lock().expect("transcript lock").clone(),
        }
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("transcript lock").len()
    }
}

impl ModelGateway for RecordingGateway {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let result = self.inner.complete(prompt);
        let mut log = self.log.lock().expect("transcript lock");
        let seq = log.len();
        log.push(TranscriptEntry {
            seq,
            run_id: prompt.run_id.clone(),
            step_index: prompt.step_index,
            role: prompt.role,
            prompt: prompt.text(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        result
    }
}

/// Answers from a transcript strictly in order, checking each prompt matches.
pub struct ReplayGateway {
    entries: Vec<TranscriptEntry>,
    cursor: Mutex<usize>,
}

impl ReplayGateway {
    pub fn new(transcript: Transcript) -> Self {
        ReplayGateway {
            entries: transcript.entries,
            cursor: Mutex::new(0),
        }
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().expect("replay cursor lock")
    }
}

impl ModelGateway for ReplayGateway {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let mut cursor = self.cursor.lock().expect("replay cursor lock");
        let seq = *cursor;
        let entry = self.entries.get(seq).ok_or_else(|| GatewayError::Replay {
            seq,
            reason: "transcript exhausted".into(),
        })?;
        if entry.role != prompt.role {
            return Err(GatewayError::Replay {
                seq,
                reason: format!("expected a {} prompt, got {}", entry.role, prompt.role),
            });
        }
        if entry.prompt != prompt.text() {
            return Err(GatewayError::Replay {
                seq,
                reason: format!("{} prompt text differs from the recorded one", prompt.role),
            });
        }
        *cursor += 1;
        match (&entry.response, &entry.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(GatewayError::Unavailable(e.clone())),
            (None, None) => Ok(String::new()),
        }
    }
}

/// Answers any prompt that appears verbatim in a transcript, in any order.
pub struct LookupGateway {
    answers: HashMap<(RoleTag, String), Option<String>>,
}

impl LookupGateway {
    pub fn new(transcript: &Transcript) -> Self {
        let mut answers = HashMap::new();
        for e in &transcript.entries {
            answers.entry((e.role, e.prompt.clone())).or_insert_with(|| e.response.clone());
        }
        LookupGateway { answers }
    }
}

impl ModelGateway for LookupGateway {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        match self.answers.get(&(prompt.role, prompt.text())) {
            Some(Some(r)) => Ok(r.clone()),
            Some(None) => Err(GatewayError::Unavailable("recorded call failed".into())),
            None => Err(GatewayError::Unavailable(format!("no recorded answer for this {} prompt", prompt.role))),
        }
    }
}

// ---------------------------------------------------------------------------
// Remote profile

pub const ENV_ENDPOINT: &str = "VIGIL_ENDPOINT";
pub const ENV_MODEL: &str = "VIGIL_MODEL";
pub const ENV_API_KEY: &str = "VIGIL_API_KEY";
pub const ENV_TIMEOUT: &str = "VIGIL_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl RemoteConfig {
    pub fn from_env() -> Result<RemoteConfig, GatewayError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| GatewayError::Unavailable(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into());
        let timeout_secs = std::env::var(ENV_TIMEOUT).ok().and_then(|t| t.parse().ok()).unwrap_or(60);
        Ok(RemoteConfig {
            endpoint,
            model,
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout_secs,
            retries: 2,
        })
    }
}

/// Generic chat-completions client.
pub struct RemoteGateway {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteGateway {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build();
        RemoteGateway { config, agent }
    }
}

impl ModelGateway for RemoteGateway {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": format!("task: {}", prompt.role)},
                {"role": "user", "content": prompt.text()},
            ],
            "temperature": 0,
        });
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(key) = &self.config.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    let json: serde_json::Value =
                        resp.into_json().map_err(|e| GatewayError::Unavailable(e.to_string()))?;
                    return json["choices"][0]["message"]["content"]
                        .as_str()
                        .map(str::to_string)
                        .ok_or_else(|| GatewayError::Unavailable("response has no message content".into()));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(GatewayError::Unavailable(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(role: RoleTag, glob: Option<&str>, regex: Option<&str>, responses: &[&str]) -> ScriptRule {
        ScriptRule {
            name: String::new(),
            role,
            glob: glob.map(String::from),
            regex: regex.map(String::from),
            responses: responses.iter().map(|s| s.to_string()).collect(),
            repeat: false,
            expand: false,
        }
    }

    fn gateway(rules: Vec<ScriptRule>, strict: bool) -> ScriptedGateway {
        ScriptedGateway::new(Script {
            strict,
            rules,
            ..Script::default()
        })
        .unwrap()
    }

    fn ask(g: &dyn ModelGateway, role: RoleTag, text: &str) -> Result<String, GatewayError> {
        g.complete(&Prompt::new(role, vec![text.to_string()]))
    }

    #[test]
    fn json_payload_strips_fences_and_prose() {
        assert_eq!(json_payload("```json\n{\"a\": 1}\n```"), "{\"a\": 1}");
        assert_eq!(json_payload("Sure: [1, 2] done"), "[1, 2]");
        assert_eq!(json_payload("plain"), "plain");
    }

    #[test]
    fn glob_rule_answers_matching_prompt() {
        let g = gateway(vec![rule(RoleTag::ReidentifyPage, Some("cart*"), None, &["same"])], true);
        assert_eq!(ask(&g, RoleTag::ReidentifyPage, "page: cart with 2 rows").unwrap(), "same");
    }

    #[test]
    fn strict_mode_rejects_unmatched_and_ambiguous() {
        let g = gateway(
            vec![
                rule(RoleTag::ReidentifyPage, Some("cart"), None, &["same"]),
                rule(RoleTag::ReidentifyPage, Some("car"), None, &["different"]),
            ],
            true,
        );
        assert!(matches!(ask(&g, RoleTag::ReidentifyPage, "home"), Err(GatewayError::Script { role: RoleTag::ReidentifyPage, .. })));
        assert!(matches!(ask(&g, RoleTag::ReidentifyPage, "cart"), Err(GatewayError::Script { .. })));
        assert!(ask(&g, RoleTag::ExtractSymbol, "cart").is_err());
    }

    #[test]
    fn lenient_mode_falls_back_to_default() {
        let g = gateway(vec![rule(RoleTag::ReidentifyPage, Some("cart"), None, &["same"])], false);
        assert_eq!(ask(&g, RoleTag::ReidentifyPage, "home").unwrap(), "");
    }

    #[test]
    fn queues_are_consumed_in_order() {
        let mut r = rule(RoleTag::ExtractSymbol, None, None, &["first", "second"]);
        let g = gateway(vec![r.clone()], true);
        assert_eq!(ask(&g, RoleTag::ExtractSymbol, "x").unwrap(), "first");
        assert_eq!(ask(&g, RoleTag::ExtractSymbol, "x").unwrap(), "second");
        assert!(ask(&g, RoleTag::ExtractSymbol, "x").is_err());
        r.repeat = true;
        let g = gateway(vec![r], true);
        for want in ["first", "second", "second"] {
            assert_eq!(ask(&g, RoleTag::ExtractSymbol, "x").unwrap(), want);
        }
    }

    #[test]
    fn backreferences_and_expansion() {
        let same = rule(RoleTag::ReidentifyPage, None, Some(r"(?s)route: (\S+)\n.*route: \1\n"), &["same"]);
        let diff = rule(RoleTag::ReidentifyPage, None, Some(r"(?s)route: (\S+)\n.*route: (?!\1\n)"), &["different"]);
        let mut ex = rule(RoleTag::ExtractSymbol, None, Some(r#"total "\$(?<t>[0-9.]+)""#), &[r#"{"total": ${t}}"#]);
        ex.repeat = true;
        ex.expand = true;
        let g = gateway(vec![RuleRepeat::on(same), RuleRepeat::on(diff), ex], true);
        assert_eq!(ask(&g, RoleTag::ReidentifyPage, "route: /a\n--\nroute: /a\n").unwrap(), "same");
        assert_eq!(ask(&g, RoleTag::ReidentifyPage, "route: /a\n--\nroute: /b\n").unwrap(), "different");
        assert_eq!(ask(&g, RoleTag::ExtractSymbol, r#"[t] text "total "$12.50"""#).unwrap(), r#"{"total": 12.50}"#);
    }

    struct RuleRepeat;
    impl RuleRepeat {
        fn on(mut r: ScriptRule) -> ScriptRule {
            r.repeat = true;
            r
        }
    }

    #[test]
    fn recording_and_replay() {
        let inner: Arc<dyn ModelGateway> =
            Arc::new(gateway(vec![rule(RoleTag::ExtractSymbol, None, None, &["a", "b"])], true));
        let rec = RecordingGateway::new(inner);
        rec.begin_run("r1");
        rec.begin_run("empty");
        let p = Prompt::new(RoleTag::ExtractSymbol, vec!["q".into()]).tagged("r1", Some(1));
        assert_eq!(rec.complete(&p).unwrap(), "a");
        assert_eq!(rec.complete(&p).unwrap(), "b");
        let t = rec.transcript("r1").unwrap();
        assert_eq!(t.len(), 2);
        assert!(rec.transcript("empty").unwrap().is_empty());
        assert_eq!(rec.transcript("nope"), Err(UnknownRun("nope".into())));

        let replay = ReplayGateway::new(t.clone());
        assert_eq!(replay.complete(&p).unwrap(), "a");
        let other = Prompt::new(RoleTag::ExtractSymbol, vec!["changed".into()]);
        assert!(matches!(replay.complete(&other), Err(GatewayError::Replay { seq: 1, .. })));
        assert_eq!(replay.complete(&p).unwrap(), "b");
        assert!(matches!(replay.complete(&p), Err(GatewayError::Replay { seq: 2, .. })));
    }
}

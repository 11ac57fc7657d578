#![allow(dead_code)]

use std::sync::Arc;

use serde_json::{json, Value as Json};
use vigil_core::gateway::{ModelGateway, Script, ScriptedGateway};

pub fn scripted(rules: Vec<Json>) -> Arc<dyn ModelGateway> {
    let script: Script = serde_json::from_value(json!({ "rules": rules })).expect("script");
    Arc::new(ScriptedGateway::new(script).expect("gateway"))
}

/// Same route means same page.
pub fn route_rules() -> Vec<Json> {
    vec![
        json!({"role": "reidentify_page", "regex": r"(?s)candidate route: (\S+)\n.*prior route: \1\n", "responses": ["same"], "repeat": true}),
        json!({"role": "reidentify_page", "regex": r"(?s)candidate route: (\S+)\n.*prior route: (?!\1\n)", "responses": ["different"], "repeat": true}),
    ]
}

pub fn no_dependencies() -> Json {
    json!({"role": "infer_dependencies", "responses": ["none"], "repeat": true})
}

pub fn oracle_for(action: &str, schema: &str, pre: &str, post: &str) -> Json {
    json!({
        "role": "symbolize_and_assert",
        "glob": format!("\naction: {action}\n"),
        "responses": [reply(schema, pre, post)],
        "repeat": true
    })
}

pub fn reply(schema: &str, pre: &str, post: &str) -> String {
    format!("```schema\n{schema}\n```\n```pre\n{pre}\n```\n```post\n{post}\n```\n")
}

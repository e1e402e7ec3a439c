use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError};

/// One entry of a script file. The first rule (in file order) whose tag matches,
/// whose substring (if any) occurs in the request text, and which has uses left
/// answers the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    pub match_tag: String,
    #[serde(default)]
    pub match_substring: Option<String>,
    pub response: String,
    #[serde(default)]
    pub remaining_uses: Option<u32>,
}

impl ScriptRule {
    pub fn new(match_tag: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            match_tag: match_tag.into(),
            match_substring: None,
            response: response.into(),
            remaining_uses: None,
        }
    }

    pub fn containing(mut self, substring: impl Into<String>) -> Self {
        self.match_substring = Some(substring.into());
        self
    }

    pub fn uses(mut self, n: u32) -> Self {
        self.remaining_uses = Some(n);
        self
    }

    fn matches(&self, req: &ChatRequest, text: &str) -> bool {
        self.match_tag == req.request_tag
            && self.remaining_uses != Some(0)
            && self.match_substring.as_deref().is_none_or(|s| text.contains(s))
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    rules: Vec<ScriptRule>,
    log: Vec<ChatRequest>,
}

/// Deterministic provider driven by [`ScriptRule`]s. Rule bookkeeping sits behind
/// one mutex, so use counts stay exact when shared across threads.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedProvider {
            state: Mutex::new(ScriptState { rules, log: Vec::new() }),
        }
    }

    /// Every request received so far, in arrival order.
    pub fn call_log(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("script state poisoned").log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("script state poisoned").log.len()
    }

    /// Number of logged calls with the given tag.
    pub fn calls_tagged(&self, tag: &str) -> usize {
        self.state
            .lock()
            .expect("script state poisoned")
            .log
            .iter()
            .filter(|r| r.request_tag == tag)
            .count()
    }

    pub fn rules(&self) -> Vec<ScriptRule> {
        self.state.lock().expect("script state poisoned").rules.clone()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let text = req.full_text();
        let mut state = self.state.lock().expect("script state poisoned");
        state.log.push(req.clone());
        let Some(rule) = state.rules.iter_mut().find(|r| r.matches(req, &text)) else {
            return Err(GatewayError::provider(format!("no script rule for tag {:?}", req.request_tag)));
        };
        if let Some(n) = rule.remaining_uses.as_mut() {
            *n -= 1;
        }
        let mut response = ChatResponse::stop(rule.response.clone());
        response.provider_meta.insert("provider".into(), "scripted".into());
        Ok(response)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptRule>, ScriptError> {
    serde_json::from_str(text).map_err(|e| ScriptError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_script(path: impl AsRef<Path>) -> Result<ScriptedProvider, ScriptError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(ScriptedProvider::new(parse_script(&text)?))
}

//! Offline backends: rule scripts, closures and script files.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{
    estimate_tokens, BackendError, ChatBackend, ChatRequest, ChatResponse, SharedBackend, TokenUsage,
};
use crate::simulated::{SimulatedBackend, SimulatedConfig};

/// One scripted reply rule. Every present condition must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Template name the request was rendered from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Substring that must occur in the user prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// 0-based count of earlier requests for the same template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    /// Replies handed out in order on successive hits; the last one
    /// repeats. Strings are sent verbatim, other values as compact JSON.
    pub replies: Vec<Value>,
}

impl ScriptRule {
    pub fn new(replies: impl IntoIterator<Item = Value>) -> Self {
        ScriptRule { replies: replies.into_iter().collect(), ..ScriptRule::default() }
    }

    pub fn template(mut self, name: &str) -> Self {
        self.template = Some(name.to_string());
        self
    }

    pub fn contains(mut self, needle: &str) -> Self {
        self.contains = Some(needle.to_string());
        self
    }

    pub fn call_index(mut self, k: u64) -> Self {
        self.call_index = Some(k);
        self
    }

    pub fn sample_index(mut self, k: u32) -> Self {
        self.sample_index = Some(k);
        self
    }

    pub fn attempt(mut self, k: u32) -> Self {
        self.attempt = Some(k);
        self
    }

    fn matches(&self, request: &ChatRequest, template_calls: u64) -> bool {
        self.template.as_ref().is_none_or(|t| *t == request.template)
            && self.contains.as_ref().is_none_or(|c| request.payload.prompt().contains(c.as_str()))
            && self.call_index.is_none_or(|k| k == template_calls)
            && self.sample_index.is_none_or(|k| k == request.sample_index)
            && self.attempt.is_none_or(|k| k == request.attempt)
    }
}

fn reply_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleScript {
    pub rules: Vec<ScriptRule>,
    /// Reply when no rule matches; without one an unmatched request fails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

/// Contents of a `--mock-script` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MockScript {
    Rules(RuleScript),
    Simulated(SimulatedConfig),
}

impl MockScript {
    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Protocol(format!("reading mock script {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("mock script {}: {e}", path.display())))
    }

    pub fn into_backend(self) -> SharedBackend {
        match self {
            MockScript::Rules(r) => Arc::new(ScriptedBackend::new(r)),
            MockScript::Simulated(c) => Arc::new(SimulatedBackend::new(c)),
        }
    }
}

struct ScriptState {
    rule_hits: Vec<usize>,
    template_calls: std::collections::HashMap<String, u64>,
    requests: Vec<ChatRequest>,
}

/// Answers from a [`RuleScript`]; first matching rule wins.
pub struct ScriptedBackend {
    id: String,
    script: RuleScript,
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(script: RuleScript) -> Self {
        let n = script.rules.len();
        ScriptedBackend {
            id: "mock-rules".into(),
            script,
            state: Mutex::new(ScriptState {
                rule_hits: vec![0; n],
                template_calls: Default::default(),
                requests: Vec::new(),
            }),
        }
    }

    /// Backend that answers every request with `reply`.
    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::new(RuleScript { rules: Vec::new(), default: Some(Value::String(reply.into())) })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn calls(&self) -> usize {
        self.state.lock().expect("script lock").requests.len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("script lock").requests.clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut st = self.state.lock().expect("script lock");
        let seen = *st.template_calls.get(&request.template).unwrap_or(&0);
        *st.template_calls.entry(request.template.clone()).or_default() += 1;
        st.requests.push(request.clone());
        let hit = self.script.rules.iter().position(|r| r.matches(request, seen));
        let text = match hit {
            Some(k) => {
                let rule = &self.script.rules[k];
                if rule.replies.is_empty() {
                    return Err(BackendError::Protocol(format!("script rule {k} has no replies")));
                }
                let idx = st.rule_hits[k].min(rule.replies.len() - 1);
                st.rule_hits[k] += 1;
                reply_text(&rule.replies[idx])
            }
            None => match &self.script.default {
                Some(v) => reply_text(v),
                None => {
                    return Err(BackendError::Protocol(format!(
                        "no scripted reply for template {} (call {seen})",
                        request.template
                    )))
                }
            },
        };
        Ok(ChatResponse {
            usage: TokenUsage { input: estimate_tokens(request.payload.prompt()), output: estimate_tokens(&text) },
            text,
        })
    }
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Answers with a closure; counts calls.
pub struct FnBackend {
    id: String,
    f: Box<ReplyFn>,
    calls: AtomicU64,
}

impl FnBackend {
    pub fn new(
        id: impl Into<String>,
        f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        FnBackend { id: id.into(), f: Box::new(f), calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = (self.f)(request)?;
        Ok(ChatResponse {
            usage: TokenUsage { input: estimate_tokens(request.payload.prompt()), output: estimate_tokens(&text) },
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::ChatPayload;
    use crate::profile::{BackendProfile, Role};
    use serde_json::json;

    fn req(template: &str, prompt: &str, sample_index: u32) -> ChatRequest {
        ChatRequest {
            payload: ChatPayload::new(&BackendProfile::for_role(Role::Verifier, "m"), prompt),
            template: template.into(),
            sample_index,
            attempt: 0,
        }
    }

    #[test]
    fn rules_in_order_with_repeat() {
        let b = ScriptedBackend::new(RuleScript {
            rules: vec![
                ScriptRule::new([json!("first"), json!("second")]).template("a"),
                ScriptRule::new([json!({"k": 1})]).contains("needle"),
            ],
            default: None,
        });
        let texts: Vec<String> = (0..3).map(|_| b.send(&req("a", "x", 0)).unwrap().text).collect();
        assert_eq!(texts, ["first", "second", "second"]);
        assert_eq!(b.send(&req("b", "a needle", 0)).unwrap().text, r#"{"k":1}"#);
        assert!(b.send(&req("b", "hay", 0)).is_err());
        assert_eq!(b.calls(), 5);
    }

    #[test]
    fn call_and_sample_index() {
        let b = ScriptedBackend::new(RuleScript {
            rules: vec![
                ScriptRule::new([json!("s1")]).sample_index(1),
                ScriptRule::new([json!("c1")]).template("t").call_index(1),
            ],
            default: Some(json!("d")),
        });
        assert_eq!(b.send(&req("t", "", 0)).unwrap().text, "d");
        assert_eq!(b.send(&req("t", "", 0)).unwrap().text, "c1");
        assert_eq!(b.send(&req("t", "", 1)).unwrap().text, "s1");
    }

    #[test]
    fn script_file_round_trip() {
        let s =
            MockScript::Rules(RuleScript { rules: vec![ScriptRule::new([json!("x")]).template("t")], default: None });
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains(r#""kind":"rules""#));
        assert_eq!(serde_json::from_str::<MockScript>(&text).unwrap(), s);
        let sim: MockScript = serde_json::from_str(r#"{"kind": "simulated"}"#).unwrap();
        assert!(matches!(sim, MockScript::Simulated(_)));
    }
}

//! Role-routed access to chat backends with token accounting, a token
//! budget, strict-JSON re-asks and an optional response cache.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::debug;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::backend::{BackendError, ChatRequest, SharedBackend, TokenUsage};
use crate::cache::{CacheError, ResponseCache};
use crate::json::{canonicalize_keys, extract_object};
use crate::payload::ChatPayload;
use crate::profile::{BackendProfile, Role};
use crate::template::{bindings, Bindings, TemplateError, TemplateSet, JSON_REASK};
use crate::usage::{CallRecord, UsageLedger};

pub const DEFAULT_JSON_RETRY_BUDGET: u32 = 2;
pub const DEFAULT_PARALLELISM: usize = 8;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no backend bound for role {0}")]
    NoBackend(Role),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("transport error after retries: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("token budget exceeded: {used} of {limit} tokens used")]
    BudgetExceeded { used: u64, limit: u64 },
    #[error("malformed output after {attempts} attempt(s): {reason}")]
    MalformedOutput { raw: String, reason: String, attempts: u32 },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl From<BackendError> for GatewayError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Transport(m) => GatewayError::Transport(m),
            BackendError::Auth(m) => GatewayError::Auth(m),
            BackendError::Protocol(m) => GatewayError::Protocol(m),
        }
    }
}

/// Routing metadata for one logical call.
#[derive(Debug, Clone, Copy, Default)]
pub struct CallContext<'a> {
    /// Sample the call is charged to.
    pub sample: Option<&'a str>,
    /// Completion index within a self-consistency batch.
    pub sample_index: u32,
}

impl<'a> CallContext<'a> {
    pub fn for_sample(sample: &'a str) -> Self {
        CallContext { sample: Some(sample), sample_index: 0 }
    }

    pub fn with_index(self, sample_index: u32) -> Self {
        CallContext { sample_index, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsonCompletion {
    /// Parsed object with expected keys under their canonical spelling.
    pub value: Map<String, Value>,
    pub raw: String,
    pub attempts: u32,
    pub usage: TokenUsage,
}

#[derive(Clone)]
pub struct RoleBinding {
    pub profile: BackendProfile,
    pub backend: SharedBackend,
}

pub struct Gateway {
    bindings: BTreeMap<Role, RoleBinding>,
    templates: TemplateSet,
    ledger: Arc<UsageLedger>,
    cache: Option<Arc<ResponseCache>>,
    pool: rayon::ThreadPool,
    parallelism: usize,
    token_budget: Option<u64>,
    json_retry_budget: u32,
}

pub struct GatewayBuilder {
    bindings: BTreeMap<Role, RoleBinding>,
    templates: TemplateSet,
    cache: Option<Arc<ResponseCache>>,
    parallelism: usize,
    token_budget: Option<u64>,
    json_retry_budget: u32,
    disjoint_verifier: bool,
}

impl Default for GatewayBuilder {
    fn default() -> Self {
        GatewayBuilder {
            bindings: BTreeMap::new(),
            templates: TemplateSet::builtin(),
            cache: None,
            parallelism: DEFAULT_PARALLELISM,
            token_budget: None,
            json_retry_budget: DEFAULT_JSON_RETRY_BUDGET,
            disjoint_verifier: true,
        }
    }
}

impl GatewayBuilder {
    pub fn bind(mut self, profile: BackendProfile, backend: SharedBackend) -> Self {
        self.bindings.insert(profile.role, RoleBinding { profile, backend });
        self
    }

    pub fn templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn parallelism(mut self, n: usize) -> Self {
        self.parallelism = n;
        self
    }

    pub fn token_budget(mut self, limit: Option<u64>) -> Self {
        self.token_budget = limit;
        self
    }

    pub fn json_retry_budget(mut self, budget: u32) -> Self {
        self.json_retry_budget = budget;
        self
    }

    /// Whether to reject a verifier that shares the proposer's model.
    pub fn disjoint_verifier(mut self, enforce: bool) -> Self {
        self.disjoint_verifier = enforce;
        self
    }

    pub fn build(self) -> Result<Gateway, GatewayError> {
        if self.parallelism == 0 {
            return Err(GatewayError::Config("parallelism must be at least 1".into()));
        }
        if self.json_retry_budget == 0 {
            return Err(GatewayError::Config("JSON retry budget must be at least 1".into()));
        }
        if self.disjoint_verifier {
            if let (Some(p), Some(v)) = (self.bindings.get(&Role::Proposer), self.bindings.get(&Role::Verifier)) {
                if p.profile.model_id == v.profile.model_id {
                    return Err(GatewayError::Config(format!(
                        "verifier model {} must differ from the proposer model",
                        v.profile.model_id
                    )));
                }
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .thread_name(|k| format!("gateway-{k}"))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Gateway {
            bindings: self.bindings,
            templates: self.templates,
            ledger: Arc::new(UsageLedger::new()),
            cache: self.cache,
            pool,
            parallelism: self.parallelism,
            token_budget: self.token_budget,
            json_retry_budget: self.json_retry_budget,
        })
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    pub fn binding(&self, role: Role) -> Result<&RoleBinding, GatewayError> {
        self.bindings.get(&role).ok_or(GatewayError::NoBackend(role))
    }

    pub fn profile(&self, role: Role) -> Result<&BackendProfile, GatewayError> {
        Ok(&self.binding(role)?.profile)
    }

    /// Identifier of the model serving `role`.
    pub fn backend_id(&self, role: Role) -> Result<String, GatewayError> {
        let b = self.binding(role)?;
        Ok(format!("{}:{}", b.backend.id(), b.profile.model_id))
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn cache(&self) -> Option<&Arc<ResponseCache>> {
        self.cache.as_ref()
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn json_retry_budget(&self) -> u32 {
        self.json_retry_budget
    }

    /// Runs `f` on the gateway's bounded worker pool; rayon parallel
    /// iterators inside `f` use at most `parallelism` threads.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    fn check_budget(&self) -> Result<(), GatewayError> {
        if let Some(limit) = self.token_budget {
            let used = self.ledger.total().total();
            if used >= limit {
                return Err(GatewayError::BudgetExceeded { used, limit });
            }
        }
        Ok(())
    }

    /// Sends a prepared prompt; `template` is metadata for routing and
    /// accounting.
    pub fn complete_prompt(
        &self,
        role: Role,
        template: &str,
        prompt: &str,
        ctx: CallContext<'_>,
        attempt: u32,
    ) -> Result<Completion, GatewayError> {
        self.check_budget()?;
        let b = self.binding(role)?;
        let request = ChatRequest {
            payload: ChatPayload::new(&b.profile, prompt),
            template: template.to_string(),
            sample_index: ctx.sample_index,
            attempt,
        };
        let response = b.backend.send(&request)?;
        self.ledger.record(CallRecord {
            sample: ctx.sample.map(str::to_string),
            role,
            template: template.to_string(),
            usage: response.usage,
        });
        Ok(Completion { text: response.text, usage: response.usage })
    }

    pub fn complete(
        &self,
        role: Role,
        template: &str,
        bindings: &Bindings,
        ctx: CallContext<'_>,
    ) -> Result<Completion, GatewayError> {
        let prompt = self.templates.render(template, bindings)?;
        self.complete_prompt(role, template, &prompt, ctx, 0)
    }

    /// Renders `template`, sends it and parses a JSON object holding the
    /// template's expected keys. Unparseable replies trigger up to
    /// `json_retry_budget` re-asks, each a fresh two-message request that
    /// quotes the original prompt and the rejected reply.
    pub fn complete_json(
        &self,
        role: Role,
        template: &str,
        bindings: &Bindings,
        ctx: CallContext<'_>,
    ) -> Result<JsonCompletion, GatewayError> {
        let t = self.templates.get(template)?;
        let expected = t.expected_json_keys.clone();
        let prompt = t.render(bindings)?;
        self.complete_json_prompt(role, template, &prompt, &expected, ctx)
    }

    pub fn complete_json_prompt(
        &self,
        role: Role,
        template: &str,
        prompt: &str,
        expected: &[String],
        ctx: CallContext<'_>,
    ) -> Result<JsonCompletion, GatewayError> {
        let mut usage = TokenUsage::default();
        let mut current = prompt.to_string();
        let mut attempt = 0;
        loop {
            let c = self.complete_prompt(role, template, &current, ctx, attempt)?;
            usage += c.usage;
            attempt += 1;
            let problem = match extract_object(&c.text) {
                Ok(mut map) => {
                    let missing = canonicalize_keys(&mut map, expected);
                    if missing.is_empty() {
                        return Ok(JsonCompletion { value: map, raw: c.text, attempts: attempt, usage });
                    }
                    format!("missing keys {missing:?}")
                }
                Err(e) => e,
            };
            debug!("{template}: unusable reply on attempt {attempt}: {problem}");
            if attempt > self.json_retry_budget {
                return Err(GatewayError::MalformedOutput { raw: c.text, reason: problem, attempts: attempt });
            }
            let keys = expected.iter().map(|k| format!("\"{k}\"")).collect::<Vec<_>>().join(", ");
            current = self.templates.render(
                JSON_REASK,
                &bindings([
                    ("OriginalPrompt", prompt.to_string()),
                    ("PreviousReply", c.text),
                    ("Problem", problem),
                    ("ExpectedKeys", if keys.is_empty() { "(any)".to_string() } else { keys }),
                ]),
            )?;
        }
    }
}

//! Prompt templates with `{{Name}}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use causaltext_core::Adjacency;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("placeholder {{{{{0}}}}} is not bound")]
    UnboundPlaceholder(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

pub const PHASE2_ASSIGN: &str = "phase2_assign";
pub const PHASE2_VERIFY: &str = "phase2_verify";
pub const PHASE2_REFINE: &str = "phase2_refine";
pub const PHASE2_SCHEMA_REVISION: &str = "phase2_schema_revision";
pub const PHASE3_VERBALIZE: &str = "phase3_verbalize";
pub const PHASE3_COVERAGE_REVISION: &str = "phase3_coverage_revision";
pub const GEN_ID_REVISION: &str = "gen_id_revision";
pub const LLM_CAUSAL_DISCOVERY: &str = "llm_causal_discovery";
pub const CONCEPT_EXTRACTION: &str = "concept_extraction";
pub const CONCEPT_EXTRACTION_RETRY: &str = "concept_extraction_retry";
pub const JSON_REASK: &str = "json_reask";

pub const KEY_CONCEPTS: &str = "Real concepts assigned to variables";
pub const KEY_EXISTING: &str = "Existing causal relationships (values of 1 in the matrix)";
pub const KEY_NON_EXISTING: &str = "Non-existing causal relationships (values of 0 in the matrix)";
pub const KEY_VERIFICATION: &str = "Relationship verification";
pub const KEY_DESCRIPTION: &str = "Natural language description";
pub const KEY_ADJACENCY: &str = "adjacency matrix";
pub const KEY_EXTRACTED: &str = "concepts";
pub const KEY_VERDICT: &str = "direct cause";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    /// Top-level keys a reply must contain.
    pub expected_json_keys: Vec<String>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([A-Za-z][A-Za-z0-9_]*)\}\}").expect("valid regex"))
}

pub type Bindings = BTreeMap<String, String>;

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>, keys: &[&str]) -> Self {
        PromptTemplate {
            name: name.into(),
            body: body.into(),
            expected_json_keys: keys.iter().map(|k| k.to_string()).collect(),
        }
    }

    /// Placeholder names in order of first occurrence.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in placeholder_re().captures_iter(&self.body) {
            let name = cap[1].to_string();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Substitutes every placeholder in one pass; bound values are not
    /// scanned again, so they may contain brace pairs.
    pub fn render(&self, bindings: &Bindings) -> Result<String, TemplateError> {
        for name in self.placeholders() {
            if !bindings.contains_key(&name) {
                return Err(TemplateError::UnboundPlaceholder(name));
            }
        }
        Ok(placeholder_re().replace_all(&self.body, |cap: &regex::Captures<'_>| bindings[&cap[1]].clone()).into_owned())
    }
}

/// Builds a [`Bindings`] map from `(name, value)` pairs.
pub fn bindings<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

/// Matrix binding: rows of 0/1 digits separated by newlines.
pub fn matrix_binding(adj: &Adjacency) -> String {
    adj.to_digit_rows()
}

/// Concept list binding: one `k. concept` line per concept, 1-based.
pub fn concept_list_binding(concepts: &[String]) -> String {
    concepts.iter().enumerate().map(|(k, c)| format!("{}. {c}", k + 1)).collect::<Vec<_>>().join("\n")
}

/// Assignment binding in the proposer's output format, `Node k: concept`.
pub fn assignment_binding(concepts: &[String]) -> String {
    concepts.iter().enumerate().map(|(k, c)| format!("Node {k}: {c}")).collect::<Vec<_>>().join("\n")
}

struct Builtin {
    name: &'static str,
    body: &'static str,
    keys: &'static [&'static str],
}

const BUILTINS: &[Builtin] = &[
    Builtin { name: PHASE2_ASSIGN, body: include_str!("../templates/phase2_assign.txt"), keys: &[KEY_CONCEPTS] },
    Builtin { name: PHASE2_VERIFY, body: include_str!("../templates/phase2_verify.txt"), keys: &[KEY_VERDICT] },
    Builtin { name: PHASE2_REFINE, body: include_str!("../templates/phase2_refine.txt"), keys: &[KEY_CONCEPTS] },
    Builtin {
        name: PHASE2_SCHEMA_REVISION,
        body: include_str!("../templates/phase2_schema_revision.txt"),
        keys: &[KEY_CONCEPTS],
    },
    Builtin {
        name: PHASE3_VERBALIZE,
        body: include_str!("../templates/phase3_verbalize.txt"),
        keys: &[KEY_DESCRIPTION],
    },
    Builtin {
        name: PHASE3_COVERAGE_REVISION,
        body: include_str!("../templates/phase3_coverage_revision.txt"),
        keys: &[KEY_DESCRIPTION],
    },
    Builtin { name: GEN_ID_REVISION, body: include_str!("../templates/gen_id_revision.txt"), keys: &[KEY_DESCRIPTION] },
    Builtin {
        name: LLM_CAUSAL_DISCOVERY,
        body: include_str!("../templates/llm_causal_discovery.txt"),
        keys: &[KEY_ADJACENCY],
    },
    Builtin {
        name: CONCEPT_EXTRACTION,
        body: include_str!("../templates/concept_extraction.txt"),
        keys: &[KEY_EXTRACTED],
    },
    Builtin {
        name: CONCEPT_EXTRACTION_RETRY,
        body: include_str!("../templates/concept_extraction_retry.txt"),
        keys: &[KEY_EXTRACTED],
    },
    Builtin { name: JSON_REASK, body: include_str!("../templates/json_reask.txt"), keys: &[] },
];

/// Named templates; starts from the built-in set and may be overridden
/// from a directory of `<name>.txt` files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates =
            BUILTINS.iter().map(|b| (b.name.to_string(), PromptTemplate::new(b.name, b.body, b.keys))).collect();
        TemplateSet { templates }
    }

    /// Replaces the body of every built-in template that has a
    /// `<name>.txt` file in `dir`. Expected keys stay as built in.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self, TemplateError> {
        for t in self.templates.values_mut() {
            let path = dir.join(format!("{}.txt", t.name));
            if path.exists() {
                t.body = std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Io { path: path.display().to_string(), message: e.to_string() })?;
            }
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates.get(name).ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, name: &str, bindings: &Bindings) -> Result<String, TemplateError> {
        self.get(name)?.render(bindings)
    }
}

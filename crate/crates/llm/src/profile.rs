//! Backend profiles: which model serves which role, and with what decoding
//! parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Initial concept assignment and refinement.
    Proposer,
    /// Counterfactual pairwise verification.
    Verifier,
    /// Paragraph generation and revision.
    Phase3,
    /// Causal discovery from text and concept extraction.
    Discovery,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Proposer, Role::Verifier, Role::Phase3, Role::Discovery];

    pub fn name(self) -> &'static str {
        match self {
            Role::Proposer => "proposer",
            Role::Verifier => "verifier",
            Role::Phase3 => "phase3",
            Role::Discovery => "discovery",
        }
    }

    /// Default `(temperature, top_p, max_tokens)` for the role.
    pub fn default_decoding(self) -> Decoding {
        let (temperature, top_p) = match self {
            Role::Proposer => (0.3, 0.95),
            Role::Verifier => (0.2, 1.0),
            Role::Phase3 => (0.7, 0.95),
            Role::Discovery => (0.0, 1.0),
        };
        Decoding { temperature, top_p, max_tokens: 5000 }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| format!("unknown role {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

/// Wire format spoken by an HTTP endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// Chat-completions body sent as-is, bearer authentication.
    #[default]
    OpenAi,
    /// Messages API: system message hoisted to a top-level field.
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub model_id: String,
    pub role: Role,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub credential_env: String,
    #[serde(default)]
    pub provider: Provider,
}

impl BackendProfile {
    /// Profile with the role's default decoding parameters.
    pub fn for_role(role: Role, model_id: impl Into<String>) -> Self {
        let d = role.default_decoding();
        BackendProfile {
            model_id: model_id.into(),
            role,
            temperature: d.temperature,
            top_p: d.top_p,
            max_tokens: d.max_tokens,
            endpoint: String::new(),
            credential_env: String::new(),
            provider: Provider::OpenAi,
        }
    }

    pub fn with_endpoint(
        mut self,
        provider: Provider,
        endpoint: impl Into<String>,
        credential_env: impl Into<String>,
    ) -> Self {
        self.provider = provider;
        self.endpoint = endpoint.into();
        self.credential_env = credential_env.into();
        self
    }
}

/// Picks the verifier model for a run: the model after `primary` in
/// `roster`, wrapping around. Returns `None` when the roster has no model
/// other than `primary`.
pub fn disjoint_verifier<'a>(roster: &'a [String], primary: &str) -> Option<&'a str> {
    if roster.len() < 2 {
        return roster.first().filter(|m| m.as_str() != primary).map(String::as_str);
    }
    let start = roster.iter().position(|m| m == primary).map_or(0, |k| k + 1);
    (0..roster.len())
        .map(|off| &roster[(start + off) % roster.len()])
        .find(|m| m.as_str() != primary)
        .map(String::as_str)
}

//! Run configuration: one TOML file with a section per pipeline stage.
//! Every field has a default, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use causaltext_core::stats::agreement::DEFAULT_EXHAUSTIVE_CAP;
use causaltext_core::stats::consensus::DEFAULT_RATERS;
use causaltext_core::GraphSpec;
use causaltext_llm::{LoopConfig, Provider};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; per-graph and per-sample seeds are derived from it.
    pub seed: u64,
    pub graphgen: GraphgenConfig,
    pub generate: GenerateConfig,
    pub phase2: LoopConfig,
    pub phase3: Phase3Config,
    pub gateway: GatewayConfig,
    pub backends: BackendsConfig,
    pub transfer: TransferConfig,
    pub consensus: ConsensusConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecMode {
    /// Draw every structural parameter per graph from the main sampling
    /// distributions.
    Space,
    /// Use the parameters given in the section for every graph.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphgenConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub per_n: usize,
    pub mode: SpecMode,
    pub p: f64,
    /// Defaults to `n - 1` when unset.
    pub max_parents: Option<usize>,
    pub max_children: Option<usize>,
    pub gamma_c: f64,
    pub gamma_v: f64,
    pub lambda: usize,
}

impl Default for GraphgenConfig {
    fn default() -> Self {
        GraphgenConfig {
            n_min: 3,
            n_max: 10,
            per_n: 500,
            mode: SpecMode::Space,
            p: 0.3,
            max_parents: None,
            max_children: None,
            gamma_c: 0.0,
            gamma_v: 0.0,
            lambda: 0,
        }
    }
}

impl GraphgenConfig {
    pub fn sizes(&self) -> std::ops::RangeInclusive<usize> {
        self.n_min..=self.n_max
    }

    /// Fixed-mode spec for graphs of size `n`.
    pub fn fixed_spec(&self, n: usize, seed: u64) -> GraphSpec {
        GraphSpec {
            n,
            p: self.p,
            max_parents: self.max_parents.unwrap_or(n.saturating_sub(1)),
            max_children: self.max_children.unwrap_or(n.saturating_sub(1)),
            gamma_c: self.gamma_c,
            gamma_v: self.gamma_v,
            lambda: self.lambda,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Domain label passed to the concept proposer, fixed per corpus.
    pub domain: String,
    /// Write wall-clock timestamps into sample records.
    pub timestamps: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { domain: "business".into(), timestamps: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase3Config {
    /// Run the extraction-and-revision loop after verbalization.
    pub gen_id: bool,
    pub k_gen: u32,
}

impl Default for Phase3Config {
    fn default() -> Self {
        Phase3Config { gen_id: false, k_gen: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub parallelism: usize,
    pub token_budget: Option<u64>,
    pub json_retry_budget: u32,
    /// Verifier cache directory; `<out>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
    /// Directory of `<template>.txt` files replacing built-in prompts.
    pub templates_dir: Option<PathBuf>,
    pub disjoint_verifier: bool,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            parallelism: 8,
            token_budget: None,
            json_retry_budget: 2,
            cache_dir: None,
            templates_dir: None,
            disjoint_verifier: true,
            timeout_secs: 120,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend {other:?}, expected http or mock")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub credential_env: String,
    #[serde(default)]
    pub provider: Provider,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub kind: BackendKind,
    pub mock_script: Option<PathBuf>,
    pub proposer: Option<ModelConfig>,
    /// Picked from `roster` when unset.
    pub verifier: Option<ModelConfig>,
    /// Default to the proposer model.
    pub phase3: Option<ModelConfig>,
    pub discovery: Option<ModelConfig>,
    pub roster: Vec<ModelConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub permutations: usize,
    pub bootstrap: usize,
    pub confidence: f64,
    pub exhaustive_cap: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            permutations: 10_000,
            bootstrap: 10_000,
            confidence: 0.95,
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub raters: usize,
    /// Quantile of per-graph borderline fractions above which a graph is
    /// flagged.
    pub flag_quantile: f64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig { raters: DEFAULT_RATERS, flag_quantile: 0.9 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: Config =
            toml::from_str(&text).map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.graphgen;
        if g.n_min < 3 || g.n_max > 10 || g.n_min > g.n_max {
            return Err(CliError::InvalidConfig(format!(
                "graphgen n range {}..={} must lie within 3..=10",
                g.n_min, g.n_max
            )));
        }
        if g.mode == SpecMode::Fixed {
            for n in g.sizes() {
                g.fixed_spec(n, 0)
                    .validate()
                    .map_err(|e| CliError::InvalidConfig(format!("graphgen (n = {n}): {e}")))?;
            }
        }
        self.phase2.validate().map_err(|e| CliError::InvalidConfig(format!("phase2: {e}")))?;
        if self.gateway.parallelism == 0 {
            return Err(CliError::InvalidConfig("gateway.parallelism must be at least 1".into()));
        }
        if self.gateway.json_retry_budget == 0 {
            return Err(CliError::InvalidConfig("gateway.json_retry_budget must be at least 1".into()));
        }
        if self.generate.domain.trim().is_empty() {
            return Err(CliError::InvalidConfig("generate.domain is empty".into()));
        }
        if !(0.0..1.0).contains(&self.transfer.confidence) || self.transfer.confidence == 0.0 {
            return Err(CliError::InvalidConfig("transfer.confidence must lie in (0, 1)".into()));
        }
        if self.consensus.raters == 0 || !(0.0..=1.0).contains(&self.consensus.flag_quantile) {
            return Err(CliError::InvalidConfig("consensus needs raters >= 1 and flag_quantile in [0, 1]".into()));
        }
        Ok(())
    }
}

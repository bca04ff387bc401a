//! Run manifest written next to a sample store. Every statistic is a pure
//! function of the records, the outstanding failures and the config.

use std::collections::BTreeMap;

use causaltext_llm::{LoopConfig, LoopOutcome, TokenUsage};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::store::{FailureRecord, SampleRecord};
use crate::summary::Distribution;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub total: TokenUsage,
    /// Per-sample total tokens (input plus output).
    pub per_sample: Option<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: Config,
    pub master_seed: u64,
    /// Loop hyperparameters used for every sample.
    pub loop_params: LoopConfig,
    pub records: usize,
    pub counts_per_n: BTreeMap<usize, usize>,
    /// Ids whose latest attempt failed and that have no record.
    pub failed: Vec<String>,
    /// False when any sample failed.
    pub complete: bool,
    /// Fraction of records whose loop ended clean.
    pub success_rate: Option<f64>,
    pub iterations: Option<Distribution>,
    pub iterations_on_success: Option<Distribution>,
    pub tokens: TokenStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub written_at: Option<String>,
}

impl RunManifest {
    pub fn from_records(config: &Config, records: &[SampleRecord], failures: &[FailureRecord]) -> Self {
        let mut counts_per_n = BTreeMap::new();
        for r in records {
            *counts_per_n.entry(r.dag.n()).or_insert(0) += 1;
        }
        let successes: Vec<&SampleRecord> =
            records.iter().filter(|r| r.loop_summary.status == LoopOutcome::Success).collect();
        let success_rate = (!records.is_empty()).then(|| successes.len() as f64 / records.len() as f64);
        RunManifest {
            config: config.clone(),
            master_seed: config.seed,
            loop_params: config.phase2,
            records: records.len(),
            counts_per_n,
            failed: failures.iter().map(|f| f.id.clone()).collect(),
            complete: failures.is_empty(),
            success_rate,
            iterations: Distribution::of(records.iter().map(|r| r.loop_summary.iterations as f64)),
            iterations_on_success: Distribution::of(successes.iter().map(|r| r.loop_summary.iterations as f64)),
            tokens: TokenStats {
                total: records.iter().map(|r| r.usage).sum(),
                per_sample: Distribution::of(records.iter().map(|r| r.usage.total() as f64)),
            },
            written_at: None,
        }
    }
}

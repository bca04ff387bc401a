//! Token accounting per call, per sample and per run.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::TokenUsage;
use crate::profile::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub sample: Option<String>,
    pub role: Role,
    pub template: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub calls: u64,
    pub total: TokenUsage,
    pub per_sample: BTreeMap<String, TokenUsage>,
    pub per_role: BTreeMap<String, TokenUsage>,
}

/// Thread-safe ledger. Run totals are atomics so budget checks need no
/// lock; the detailed call log sits behind a mutex.
#[derive(Debug, Default)]
pub struct UsageLedger {
    input: AtomicU64,
    output: AtomicU64,
    calls: AtomicU64,
    log: Mutex<Vec<CallRecord>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, record: CallRecord) {
        self.input.fetch_add(record.usage.input, Ordering::SeqCst);
        self.output.fetch_add(record.usage.output, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("ledger lock").push(record);
    }

    pub fn total(&self) -> TokenUsage {
        TokenUsage { input: self.input.load(Ordering::SeqCst), output: self.output.load(Ordering::SeqCst) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.log.lock().expect("ledger lock").clone()
    }

    pub fn sample_usage(&self, sample: &str) -> TokenUsage {
        self.log
            .lock()
            .expect("ledger lock")
            .iter()
            .filter(|r| r.sample.as_deref() == Some(sample))
            .map(|r| r.usage)
            .sum()
    }

    pub fn summary(&self) -> UsageSummary {
        let log = self.log.lock().expect("ledger lock");
        let mut s = UsageSummary { calls: log.len() as u64, ..UsageSummary::default() };
        for r in log.iter() {
            s.total += r.usage;
            *s.per_role.entry(r.role.to_string()).or_default() += r.usage;
            if let Some(id) = &r.sample {
                *s.per_sample.entry(id.clone()).or_default() += r.usage;
            }
        }
        s
    }
}

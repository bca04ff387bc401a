//! JSON Lines sample store.
//!
//! `samples.jsonl` holds one [`SampleRecord`] per line and is only ever
//! appended to. `samples.idx` lists the ids in the same order. The records
//! file is authoritative: opening a store drops a torn final line and
//! rebuilds the index when it disagrees. Failed samples go to
//! `failures.jsonl` and are retried on resume.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use causaltext_core::{Dag, GraphSpec};
use causaltext_llm::verbalize::missing_concepts;
use causaltext_llm::{ConceptAssignment, LoopOutcome, Paragraph, TokenUsage};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RECORDS_FILE: &str = "samples.jsonl";
pub const INDEX_FILE: &str = "samples.idx";
pub const FAILURES_FILE: &str = "failures.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub status: LoopOutcome,
    pub iterations: u32,
    pub best_l_b: f64,
    pub best_iteration: u32,
    pub final_l_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenIdSummary {
    pub revisions: u32,
    pub extractions: u32,
    /// SHD between the extracted and target graph for the kept paragraph.
    pub mismatch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub spec: GraphSpec,
    pub dag: Dag,
    pub domain: String,
    pub concepts: ConceptAssignment,
    pub paragraph: Paragraph,
    #[serde(rename = "loop")]
    pub loop_summary: LoopSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_id: Option<GenIdSummary>,
    /// Backend id per role.
    pub backends: BTreeMap<String, String>,
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

impl SampleRecord {
    /// Graph, concepts and text agree: one concept per node, the paragraph
    /// was written for these concepts and mentions each of them.
    pub fn check_consistency(&self) -> Result<(), String> {
        let n = self.dag.n();
        if self.spec.n != n {
            return Err(format!("spec has {} nodes, dag {n}", self.spec.n));
        }
        if self.concepts.len() != n {
            return Err(format!("{} concepts for {n} nodes", self.concepts.len()));
        }
        if self.paragraph.source_concepts != self.concepts.concepts() {
            return Err("paragraph was written for a different concept list".into());
        }
        let missing = missing_concepts(&self.paragraph.text, self.concepts.concepts());
        if !missing.is_empty() {
            return Err(format!("paragraph does not mention {missing:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    /// Pipeline stage that failed: `assignment`, `verbalize` or `gen-id`.
    pub stage: String,
    pub error: String,
    /// Loop iterations completed before the failure.
    pub iterations: usize,
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<String>,
}

/// Parses a JSON Lines file, reporting the 1-based line of any bad record.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::parse(path, k as u64 + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct SampleStore {
    dir: PathBuf,
    ids: BTreeSet<String>,
}

impl SampleStore {
    /// Opens or creates the store in `dir`. A store that already holds
    /// samples is only reopened with `resume`.
    pub fn open(dir: &Path, resume: bool) -> Result<Self, CliError> {
        crate::create_dir(dir)?;
        let records = dir.join(RECORDS_FILE);
        let ids = if records.exists() { recover(&records)? } else { Vec::new() };
        if !ids.is_empty() && !resume {
            return Err(CliError::StoreExists(dir.to_path_buf()));
        }
        let store = SampleStore { dir: dir.to_path_buf(), ids: ids.iter().cloned().collect() };
        store.sync_index(&ids)?;
        if !resume {
            let failures = dir.join(FAILURES_FILE);
            if failures.exists() {
                std::fs::remove_file(&failures).map_err(|e| CliError::io(&failures, e))?;
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn sync_index(&self, ids: &[String]) -> Result<(), CliError> {
        let path = self.dir.join(INDEX_FILE);
        let mut expected = String::new();
        for id in ids {
            expected.push_str(id);
            expected.push('\n');
        }
        let current = std::fs::read_to_string(&path).unwrap_or_default();
        if current != expected {
            if !current.is_empty() {
                log::warn!("rebuilding {} from {}", path.display(), RECORDS_FILE);
            }
            crate::write_atomic(&path, expected.as_bytes())?;
        }
        Ok(())
    }

    /// The single writer for this store.
    pub fn appender(&mut self) -> Result<Appender<'_>, CliError> {
        let open = |name: &str| {
            let path = self.dir.join(name);
            OpenOptions::new().create(true).append(true).open(&path).map_err(|e| CliError::io(&path, e))
        };
        Ok(Appender {
            records: open(RECORDS_FILE)?,
            index: open(INDEX_FILE)?,
            failures: open(FAILURES_FILE)?,
            store: self,
        })
    }

    pub fn records(&self) -> Result<Vec<SampleRecord>, CliError> {
        load_records(&self.dir)
    }

    /// Failures whose id has no record yet, latest entry per id.
    pub fn outstanding_failures(&self) -> Result<Vec<FailureRecord>, CliError> {
        let path = self.dir.join(FAILURES_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut latest: BTreeMap<String, FailureRecord> = BTreeMap::new();
        for f in read_jsonl::<FailureRecord>(&path)? {
            if !self.ids.contains(&f.id) {
                latest.insert(f.id.clone(), f);
            }
        }
        Ok(latest.into_values().collect())
    }
}

pub fn load_records(dir: &Path) -> Result<Vec<SampleRecord>, CliError> {
    let path = dir.join(RECORDS_FILE);
    let records: Vec<SampleRecord> = read_jsonl(&path)?;
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(CliError::InvalidConfig(format!("duplicate sample id {:?} in {}", r.id, path.display())));
        }
    }
    Ok(records)
}

#[derive(Deserialize)]
struct IdOnly {
    id: String,
}

/// Ids in the records file after truncating a torn final line.
fn recover(path: &Path) -> Result<Vec<String>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |k| k + 1);
    if complete < bytes.len() {
        log::warn!("{}: dropping {} bytes of an unterminated record", path.display(), bytes.len() - complete);
        let file = OpenOptions::new().write(true).open(path).map_err(|e| CliError::io(path, e))?;
        file.set_len(complete as u64).map_err(|e| CliError::io(path, e))?;
    }
    let mut ids = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec: IdOnly =
            serde_json::from_slice(line).map_err(|e| CliError::parse(path, k as u64 + 1, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(CliError::parse(path, k as u64 + 1, format!("duplicate sample id {:?}", rec.id)));
        }
        ids.push(rec.id);
    }
    Ok(ids)
}

pub struct Appender<'a> {
    records: File,
    index: File,
    failures: File,
    store: &'a mut SampleStore,
}

impl Appender<'_> {
    /// Appends `record`; an id already in the store is an error.
    pub fn append(&mut self, record: &SampleRecord) -> Result<(), CliError> {
        if self.store.ids.contains(&record.id) {
            return Err(CliError::InvalidConfig(format!("sample {:?} is already stored", record.id)));
        }
        let dir = self.store.dir.clone();
        let mut line = serde_json::to_vec(record).expect("serializable");
        line.push(b'\n');
        let path = dir.join(RECORDS_FILE);
        self.records.write_all(&line).and_then(|_| self.records.flush()).map_err(|e| CliError::io(&path, e))?;
        let path = dir.join(INDEX_FILE);
        writeln!(self.index, "{}", record.id).and_then(|_| self.index.flush()).map_err(|e| CliError::io(&path, e))?;
        self.store.ids.insert(record.id.clone());
        Ok(())
    }

    pub fn record_failure(&mut self, failure: &FailureRecord) -> Result<(), CliError> {
        let path = self.store.dir.join(FAILURES_FILE);
        let mut line = serde_json::to_vec(failure).expect("serializable");
        line.push(b'\n');
        self.failures.write_all(&line).and_then(|_| self.failures.flush()).map_err(|e| CliError::io(&path, e))
    }
}

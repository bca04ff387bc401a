//! Scores predicted graphs against reference graphs, per sample and per
//! node-count bucket. Cyclic graphs on either side are projected to DAGs
//! first, deleting the lowest-support edges on cycles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use causaltext_core::{
    decompose_errors, evaluate, project_adjacency, Adjacency, ErrorDecomposition, MetricReport, RemovedEdge,
    SupportGraph,
};
use causaltext_llm::{llm_causal_discovery, CallContext};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{build_gateway, BackendOverrides};
use crate::config::Config;
use crate::store::{load_records, read_jsonl, SampleRecord};
use crate::summary::Distribution;
use crate::CliError;

pub const EVALUATION_FILE: &str = "evaluation.jsonl";
pub const SUMMARY_FILE: &str = "evaluation_summary.json";

/// A reference or predicted graph for one sample. Consensus output lines
/// (`text_id`, `majority`, `support`) are accepted as they are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEntry {
    #[serde(alias = "text_id")]
    pub id: String,
    #[serde(alias = "majority")]
    pub adjacency: Adjacency,
    /// Edge support used to order deletions when the graph is cyclic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<SupportGraph>,
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    /// Reference graphs; the generation-time DAGs of the store when unset.
    pub reference: Option<PathBuf>,
    /// Predicted graphs; causal discovery on the stored text when unset.
    pub predictions: Option<PathBuf>,
    pub backends: BackendOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEvaluation {
    pub id: String,
    pub n: usize,
    pub report: MetricReport,
    pub errors: ErrorDecomposition,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_removed: Vec<RemovedEdge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prediction_removed: Vec<RemovedEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub samples: usize,
    pub precision: Distribution,
    pub recall: Distribution,
    pub f1: Distribution,
    pub shd: Distribution,
    pub sid: Distribution,
    pub missed: Distribution,
    pub spurious: Distribution,
}

impl BucketSummary {
    fn of(evals: &[&SampleEvaluation]) -> Option<Self> {
        let d = |f: &dyn Fn(&SampleEvaluation) -> f64| Distribution::of(evals.iter().map(|e| f(e)));
        Some(BucketSummary {
            samples: evals.len(),
            precision: d(&|e| e.report.precision)?,
            recall: d(&|e| e.report.recall)?,
            f1: d(&|e| e.report.f1)?,
            shd: d(&|e| e.report.shd as f64)?,
            sid: d(&|e| e.report.sid as f64)?,
            missed: d(&|e| e.errors.missed_count() as f64)?,
            spurious: d(&|e| e.errors.spurious_count() as f64)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub samples: usize,
    pub projected_references: usize,
    pub projected_predictions: usize,
    pub per_n: BTreeMap<usize, BucketSummary>,
    pub overall: Option<BucketSummary>,
}

impl EvaluationSummary {
    pub fn from_evaluations(evals: &[SampleEvaluation]) -> Self {
        let mut buckets: BTreeMap<usize, Vec<&SampleEvaluation>> = BTreeMap::new();
        for e in evals {
            buckets.entry(e.n).or_default().push(e);
        }
        let all: Vec<&SampleEvaluation> = evals.iter().collect();
        EvaluationSummary {
            samples: evals.len(),
            projected_references: evals.iter().filter(|e| !e.reference_removed.is_empty()).count(),
            projected_predictions: evals.iter().filter(|e| !e.prediction_removed.is_empty()).count(),
            per_n: buckets.into_iter().filter_map(|(n, v)| Some((n, BucketSummary::of(&v)?))).collect(),
            overall: BucketSummary::of(&all),
        }
    }
}

fn to_dag(entry: &GraphEntry, side: &str) -> Result<(Adjacency, Vec<RemovedEdge>), CliError> {
    if entry.adjacency.is_acyclic() {
        return Ok((entry.adjacency.clone(), Vec::new()));
    }
    let support = match &entry.support {
        Some(s) if s.n() == entry.adjacency.n() => s.clone(),
        Some(s) => {
            return Err(CliError::Mismatch {
                id: entry.id.clone(),
                message: format!("{side} support is {}x{0}, graph has {} nodes", s.n(), entry.adjacency.n()),
            })
        }
        None => SupportGraph::from_adjacency(&entry.adjacency),
    };
    let projection = project_adjacency(entry.adjacency.clone(), &support);
    for r in &projection.removed {
        log::info!("{}: removed {side} edge {} -> {} (support {:.3}) to break a cycle", entry.id, r.i, r.j, r.support);
    }
    Ok((projection.dag.into_adjacency(), projection.removed))
}

/// Scores one prediction against its reference.
pub fn score(reference: &GraphEntry, prediction: &GraphEntry) -> Result<SampleEvaluation, CliError> {
    let (target, reference_removed) = to_dag(reference, "reference")?;
    let (predicted, prediction_removed) = to_dag(prediction, "predicted")?;
    let mismatch =
        |e: causaltext_core::MetricError| CliError::Mismatch { id: prediction.id.clone(), message: e.to_string() };
    Ok(SampleEvaluation {
        id: prediction.id.clone(),
        n: target.n(),
        report: evaluate(&target, &predicted).map_err(mismatch)?,
        errors: decompose_errors(&target, &predicted).map_err(mismatch)?,
        reference_removed,
        prediction_removed,
    })
}

fn load_entries(path: &Path) -> Result<BTreeMap<String, GraphEntry>, CliError> {
    let mut out = BTreeMap::new();
    for e in read_jsonl::<GraphEntry>(path)? {
        if out.contains_key(&e.id) {
            return Err(CliError::InvalidConfig(format!("duplicate id {:?} in {}", e.id, path.display())));
        }
        out.insert(e.id.clone(), e);
    }
    Ok(out)
}

/// Sample id and the error that prevented a prediction.
pub type FailedSample = (String, String);

fn discover(
    config: &Config,
    records: &[SampleRecord],
    overrides: &BackendOverrides,
) -> Result<(BTreeMap<String, GraphEntry>, Vec<FailedSample>), CliError> {
    let gateway = build_gateway(config, overrides, None)?;
    let results: Vec<Result<GraphEntry, FailedSample>> = gateway.install(|| {
        records
            .par_iter()
            .map(|r| {
                let ctx = CallContext::for_sample(&r.id);
                llm_causal_discovery(&r.paragraph.text, r.concepts.concepts(), &gateway, ctx)
                    .map(|d| GraphEntry { id: r.id.clone(), adjacency: d.adjacency, support: None })
                    .map_err(|e| (r.id.clone(), e.to_string()))
            })
            .collect()
    });
    let mut found = BTreeMap::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(e) => {
                found.insert(e.id.clone(), e);
            }
            Err(f) => failed.push(f),
        }
    }
    Ok((found, failed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub summary: EvaluationSummary,
    /// Samples whose prediction could not be obtained, with the error.
    pub failed: Vec<FailedSample>,
}

/// Writes `evaluation.jsonl` and `evaluation_summary.json` to `out`.
pub fn evaluate_store(
    config: &Config,
    store: &Path,
    out: &Path,
    opts: &EvaluateOptions,
) -> Result<EvaluationReport, CliError> {
    let records = load_records(store)?;
    let (predictions, failed) = match &opts.predictions {
        Some(p) => (load_entries(p)?, Vec::new()),
        None => discover(config, &records, &opts.backends)?,
    };
    let references: BTreeMap<String, GraphEntry> = match &opts.reference {
        Some(p) => load_entries(p)?,
        None => records
            .iter()
            .map(|r| {
                (r.id.clone(), GraphEntry { id: r.id.clone(), adjacency: r.dag.as_adjacency().clone(), support: None })
            })
            .collect(),
    };
    let pairs: Vec<(&GraphEntry, &GraphEntry)> = predictions
        .values()
        .map(|p| references.get(&p.id).map(|r| (r, p)).ok_or_else(|| CliError::MissingReference(p.id.clone())))
        .collect::<Result<_, _>>()?;
    let evals: Vec<SampleEvaluation> = pairs.par_iter().map(|(r, p)| score(r, p)).collect::<Result<_, _>>()?;

    crate::create_dir(out)?;
    let mut lines = Vec::new();
    for e in &evals {
        serde_json::to_writer(&mut lines, e).expect("serializable");
        lines.push(b'\n');
    }
    crate::write_atomic(&out.join(EVALUATION_FILE), &lines)?;
    let report = EvaluationReport { summary: EvaluationSummary::from_evaluations(&evals), failed };
    crate::write_json(&out.join(SUMMARY_FILE), &report)?;
    if !report.failed.is_empty() {
        return Err(CliError::Incomplete {
            failed: report.failed.len(),
            total: records.len(),
            report: out.join(SUMMARY_FILE),
        });
    }
    Ok(report)
}

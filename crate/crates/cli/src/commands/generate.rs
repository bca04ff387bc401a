use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use causaltext_llm::{gen_id_refine, generate_text, run_loop, CallContext, Gateway, GenIdConfig, ResponseCache, Role};
use rayon::prelude::*;

use crate::backends::{build_gateway, BackendOverrides};
use crate::config::Config;
use crate::graphs::{load_graphs, GraphRecord};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::store::{FailureRecord, GenIdSummary, LoopSummary, SampleRecord, SampleStore, FAILURES_FILE};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    pub resume: bool,
    pub backends: BackendOverrides,
}

fn cache_for(config: &Config, out: &Path) -> Result<Arc<ResponseCache>, CliError> {
    let dir = config.gateway.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
    Ok(Arc::new(ResponseCache::on_disk(dir)?))
}

/// Runs every graph in `graphs` not yet in the store at `out` through
/// concept assignment and verbalization, then rewrites the manifest.
/// Returns [`CliError::Incomplete`] when any sample failed; the records of
/// the others are kept.
pub fn generate(config: &Config, graphs: &Path, out: &Path, opts: &GenerateOptions) -> Result<RunManifest, CliError> {
    config.validate()?;
    let graphs = load_graphs(graphs)?;
    let mut store = SampleStore::open(out, opts.resume)?;
    let gateway = build_gateway(config, &opts.backends, Some(cache_for(config, out)?))?;
    let pending: Vec<&GraphRecord> = graphs.iter().filter(|g| !store.contains(&g.id)).collect();
    log::info!(
        "{} graphs, {} already stored, {} to generate",
        graphs.len(),
        graphs.len() - pending.len(),
        pending.len()
    );

    let backends: BTreeMap<String, String> =
        Role::ALL.into_iter().filter_map(|r| gateway.backend_id(r).ok().map(|id| (r.name().to_string(), id))).collect();
    {
        let mut appender = store.appender()?;
        // Results are written in graph order so a run's store does not
        // depend on scheduling.
        for chunk in pending.chunks(gateway.parallelism() * 2) {
            let results: Vec<Result<SampleRecord, FailureRecord>> =
                gateway.install(|| chunk.par_iter().map(|g| run_sample(config, g, &gateway, &backends)).collect());
            for result in results {
                match result {
                    Ok(record) => appender.append(&record)?,
                    Err(failure) => {
                        log::warn!("sample {} failed at {}: {}", failure.id, failure.stage, failure.error);
                        appender.record_failure(&failure)?;
                    }
                }
            }
        }
    }

    let records = store.records()?;
    let failures = store.outstanding_failures()?;
    let mut manifest = RunManifest::from_records(config, &records, &failures);
    if config.generate.timestamps {
        manifest.written_at = Some(super::now());
    }
    crate::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    if !failures.is_empty() {
        return Err(CliError::Incomplete {
            failed: failures.len(),
            total: records.len() + failures.len(),
            report: out.join(FAILURES_FILE),
        });
    }
    Ok(manifest)
}

fn run_sample(
    config: &Config,
    graph: &GraphRecord,
    gateway: &Gateway,
    backends: &BTreeMap<String, String>,
) -> Result<SampleRecord, FailureRecord> {
    let stamp = || config.generate.timestamps.then(super::now);
    let started_at = stamp();
    let ctx = CallContext::for_sample(&graph.id);
    let domain = config.generate.domain.as_str();
    let fail = |stage: &str, error: String, iterations: usize| FailureRecord {
        id: graph.id.clone(),
        stage: stage.into(),
        error,
        iterations,
        usage: gateway.ledger().sample_usage(&graph.id),
        at: stamp(),
    };

    let result = run_loop(&graph.dag, domain, &config.phase2, gateway, ctx)
        .map_err(|e| fail("assignment", e.to_string(), e.trace.len()))?;
    let iterations = result.trace.len();
    let mut paragraph = generate_text(&graph.dag, &result.assignment, gateway, ctx)
        .map_err(|e| fail("verbalize", e.to_string(), iterations))?;
    let mut gen_id = None;
    if config.phase3.gen_id {
        let refined = gen_id_refine(
            &graph.dag,
            &result.assignment,
            &paragraph,
            GenIdConfig { k_gen: config.phase3.k_gen },
            gateway,
            ctx,
        )
        .map_err(|e| fail("gen-id", e.to_string(), iterations))?;
        gen_id = Some(GenIdSummary {
            revisions: refined.revisions,
            extractions: refined.extractions,
            mismatch: refined.mismatch,
        });
        paragraph = refined.paragraph;
    }

    Ok(SampleRecord {
        id: graph.id.clone(),
        spec: graph.spec.clone(),
        dag: graph.dag.clone(),
        domain: domain.to_string(),
        concepts: result.assignment,
        paragraph,
        loop_summary: LoopSummary {
            status: result.outcome,
            iterations: result.iterations,
            best_l_b: result.best_l_b,
            best_iteration: result.best_iteration,
            final_l_b: result.final_l_b,
        },
        gen_id,
        backends: backends.clone(),
        usage: gateway.ledger().sample_usage(&graph.id),
        started_at,
        finished_at: stamp(),
    })
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use causaltext_core::stats::{agreement, leave_one_out, AgreementOptions, AgreementStats, PermutationMode, ScoreTable};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct TransferOptions {
    /// Sampled permutations; the config value when unset.
    pub permutations: Option<usize>,
    pub seed: Option<u64>,
    /// Enumerate every within-bucket permutation instead of sampling.
    pub exhaustive: bool,
    /// Add a table recomputed without each algorithm in turn.
    pub loo: bool,
    /// Report bootstrap intervals.
    pub bootstrap: bool,
    /// Replicates; the config value when unset.
    pub bootstrap_replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooEntry {
    pub dropped: String,
    pub stats: AgreementStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub table: PathBuf,
    pub stats: AgreementStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loo: Option<Vec<LooEntry>>,
}

pub fn agreement_options(config: &Config, opts: &TransferOptions) -> AgreementOptions {
    let t = &config.transfer;
    AgreementOptions {
        permutations: opts.permutations.unwrap_or(t.permutations),
        bootstrap: if opts.bootstrap { opts.bootstrap_replicates.unwrap_or(t.bootstrap) } else { 0 },
        seed: opts.seed.unwrap_or(config.seed),
        mode: if opts.exhaustive { PermutationMode::Exhaustive } else { PermutationMode::Sampled },
        exhaustive_cap: t.exhaustive_cap as u128,
        confidence: t.confidence,
    }
}

pub fn transfer(config: &Config, table_path: &Path, opts: &TransferOptions) -> Result<TransferReport, CliError> {
    let table = ScoreTable::from_csv_path(table_path)?;
    let main_opts = agreement_options(config, opts);
    let stats = agreement(&table, &main_opts)?;
    let loo = if opts.loo {
        // p-values and intervals are only reported for the full table.
        let loo_opts = AgreementOptions { permutations: 0, bootstrap: 0, ..main_opts };
        let entries = table
            .algorithms()
            .into_iter()
            .map(|a| Ok(LooEntry { stats: leave_one_out(&table, &a, &loo_opts)?, dropped: a }))
            .collect::<Result<Vec<_>, CliError>>()?;
        Some(entries)
    } else {
        None
    };
    Ok(TransferReport { table: table_path.to_path_buf(), stats, loo })
}

fn p_text(p: Option<&causaltext_core::stats::agreement::PValue>) -> String {
    match p {
        Some(p) if p.exceedances == 0 => format!("<{:.1e}", 1.0 / p.permutations as f64),
        Some(p) => format!("{:.2e}", p.value),
        None => "-".into(),
    }
}

/// Plain-text rendering of a report.
pub fn render(report: &TransferReport) -> String {
    let s = &report.stats;
    let mut out = String::new();
    let _ = writeln!(out, "{} algorithms x {} sizes, {} points", s.algorithms.len(), s.buckets.len(), s.points);
    let _ = writeln!(out, "{:<8} {:>8} {:>10} {:>8} {:>10} {:>8}", "metric", "pearson", "p", "spearman", "p", "r2");
    for m in &s.metrics {
        let _ = writeln!(
            out,
            "{:<8} {:>8.3} {:>10} {:>8.3} {:>10} {:>8.3}",
            m.metric.name(),
            m.pearson,
            p_text(m.pearson_p.as_ref()),
            m.spearman,
            p_text(m.spearman_p.as_ref()),
            m.r_squared
        );
        if let Some(b) = &m.bootstrap {
            let _ = writeln!(
                out,
                "{:<8} r [{:.3}, {:.3}]  rho [{:.3}, {:.3}]  r2 [{:.3}, {:.3}]  ({} replicates)",
                "",
                b.pearson[0],
                b.pearson[1],
                b.spearman[0],
                b.spearman[1],
                b.r_squared[0],
                b.r_squared[1],
                b.replicates
            );
        }
    }
    let _ = writeln!(
        out,
        "{:<8} {:>8.3} {:>10} {:>8.3} {:>10} {:>8.3}",
        "average", s.average.pearson, "", s.average.spearman, "", s.average.r_squared
    );
    if let Some(loo) = &report.loo {
        let _ = writeln!(out, "\nleave one out");
        let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8}", "dropped", "pearson", "spearman", "r2");
        for e in loo {
            for m in &e.stats.metrics {
                let _ = writeln!(
                    out,
                    "{:<16} {:>8.3} {:>8.3} {:>8.3}  {}",
                    e.dropped,
                    m.pearson,
                    m.spearman,
                    m.r_squared,
                    m.metric.name()
                );
            }
        }
    }
    out
}

use std::path::Path;

use causaltext_core::stats::{
    flag_low_agreement, krippendorff_alpha, majority_consensus, LowAgreementReport, RatingMatrix, RatingRecord,
    StatsError, TextConsensus,
};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::CliError;

pub const CONSENSUS_FILE: &str = "consensus.jsonl";
pub const REPORT_FILE: &str = "consensus_report.json";

#[derive(Debug, Deserialize)]
struct RatingRow {
    text_id: String,
    i: usize,
    j: usize,
    rater_id: String,
    label: u8,
}

/// Reads a `text_id,i,j,rater_id,label` CSV. Errors carry the 1-based line
/// of the offending row.
pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| CliError::parse(path, 1, e.to_string()))?.clone();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let row: RatingRow = row.deserialize(Some(&headers)).map_err(|e| CliError::parse(path, line, e.to_string()))?;
        if row.label > 1 {
            return Err(CliError::parse(path, line, format!("label must be 0 or 1, found {}", row.label)));
        }
        if row.i == row.j {
            return Err(CliError::parse(path, line, format!("self pair ({}, {})", row.i, row.j)));
        }
        records.push(RatingRecord { text_id: row.text_id, i: row.i, j: row.j, rater: row.rater_id, label: row.label });
    }
    if records.is_empty() {
        return Err(StatsError::EmptyRatings.into());
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub texts: usize,
    pub raters: usize,
    pub alpha: f64,
    /// Texts whose majority graph had cycles removed.
    pub projected: Vec<String>,
    pub low_agreement: LowAgreementReport,
}

/// Writes `consensus.jsonl` (one consensus graph per text) and
/// `consensus_report.json` to `out`.
pub fn consensus(
    config: &Config,
    ratings: &Path,
    out: &Path,
) -> Result<(Vec<TextConsensus>, ConsensusReport), CliError> {
    let records = read_ratings(ratings)?;
    let raters = config.consensus.raters;
    let matrix = RatingMatrix::from_records(&records, raters)?;
    let graphs = majority_consensus(&matrix)?;
    let alpha = krippendorff_alpha(&matrix)?;
    let supports: Vec<(&str, &causaltext_core::SupportGraph)> =
        graphs.iter().map(|g| (g.text_id.as_str(), &g.support)).collect();
    let low_agreement = flag_low_agreement(&supports, raters, config.consensus.flag_quantile);
    let report = ConsensusReport {
        texts: graphs.len(),
        raters,
        alpha,
        projected: graphs.iter().filter(|g| !g.removed.is_empty()).map(|g| g.text_id.clone()).collect(),
        low_agreement,
    };
    crate::create_dir(out)?;
    let mut lines = Vec::new();
    for g in &graphs {
        serde_json::to_writer(&mut lines, g).expect("serializable");
        lines.push(b'\n');
    }
    crate::write_atomic(&out.join(CONSENSUS_FILE), &lines)?;
    crate::write_json(&out.join(REPORT_FILE), &report)?;
    Ok((graphs, report))
}

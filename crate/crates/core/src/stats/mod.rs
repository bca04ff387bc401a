//! Consensus aggregation, inter-annotator agreement and transferability
//! statistics.

pub mod agreement;
pub mod anova;
pub mod consensus;
pub mod stability;

use thiserror::Error;

pub use agreement::{
    agreement, center_within_n, leave_one_out, AgreementOptions, AgreementStats, CenteredTable, Corpus, Metric,
    MetricAgreement, PermutationMode, ScoreRow, ScoreTable,
};
pub use anova::{permutation_anova, AnovaFactor, AnovaReport, AnovaRow, StratifiedObservation};
pub use consensus::{
    flag_low_agreement, krippendorff_alpha, majority_consensus, LowAgreementReport, RatingItem, RatingMatrix,
    RatingRecord, TextConsensus,
};
pub use stability::{stability_curve, StabilityOptions, StabilityReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("rating matrix is empty")]
    EmptyRatings,
    #[error("no item has at least two ratings")]
    InsufficientData,
    #[error("incomplete score grid: {0}")]
    IncompleteGrid(String),
    #[error("at least two algorithms must remain, found {0}")]
    TooFewAlgorithms(usize),
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("degenerate groups: {0}")]
    DegenerateGroups(String),
    #[error("pool for n = {n} has {available} values, need {needed}")]
    PoolTooSmall { n: u32, needed: usize, available: usize },
    #[error("exhaustive enumeration needs {combinations} permutations, cap is {cap}")]
    ExhaustiveTooLarge { combinations: u128, cap: u128 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("csv: {0}")]
    Csv(String),
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Ordinary least squares of `y` on `x` with intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Some(LinearFit { slope, intercept, r_squared: (1.0 - ss_res / syy).clamp(0.0, 1.0) })
}

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let k = idx[rank];
        running = running.min(p[k] * m as f64 / (rank + 1) as f64);
        adjusted[k] = running.min(1.0);
    }
    adjusted
}

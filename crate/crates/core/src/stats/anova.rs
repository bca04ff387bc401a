//! One-way ANOVA of a generator parameter on a metric, stratified by graph
//! size, with a permutation null and Benjamini–Hochberg correction.
//!
//! Levels are nested in strata: the effect sum of squares compares each
//! (stratum, level) cell mean with its stratum mean, and the error sum of
//! squares is the within-cell variation. The null distribution shuffles
//! level labels among observations of the same stratum.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{benjamini_hochberg, StatsError};
use crate::rng::{derive_seed, stream};

const DOMAIN_ANOVA: u64 = 0x616e_6f76;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedObservation {
    pub stratum: u32,
    pub level: String,
    pub value: f64,
}

/// Observations of one metric grouped by the levels of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaFactor {
    pub parameter: String,
    pub metric: String,
    pub observations: Vec<StratifiedObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FStatistic {
    pub ss_effect: f64,
    pub ss_error: f64,
    pub df_effect: usize,
    pub df_error: usize,
    pub f: f64,
}

impl FStatistic {
    pub fn partial_eta_squared(&self) -> f64 {
        let total = self.ss_effect + self.ss_error;
        if total <= 0.0 {
            0.0
        } else {
            (self.ss_effect / total).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub parameter: String,
    pub metric: String,
    pub f_statistic: f64,
    pub df_effect: usize,
    pub df_error: usize,
    pub p_value: f64,
    /// Benjamini–Hochberg adjusted across parameters sharing the metric.
    pub p_adjusted: f64,
    pub partial_eta_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    pub permutations: usize,
    pub seed: u64,
    pub rows: Vec<AnovaRow>,
}

/// Observations indexed by stratum, with level labels as small integers.
struct Layout {
    strata: Vec<Vec<f64>>,
    labels: Vec<Vec<usize>>,
    levels_per_stratum: Vec<usize>,
}

impl Layout {
    fn new(observations: &[StratifiedObservation]) -> Self {
        let mut grouped: BTreeMap<u32, (Vec<f64>, Vec<String>)> = BTreeMap::new();
        for o in observations {
            let e = grouped.entry(o.stratum).or_default();
            e.0.push(o.value);
            e.1.push(o.level.clone());
        }
        let mut strata = Vec::new();
        let mut labels = Vec::new();
        let mut levels_per_stratum = Vec::new();
        for (_, (values, names)) in grouped {
            let mut ids: BTreeMap<String, usize> = BTreeMap::new();
            for name in &names {
                let next = ids.len();
                ids.entry(name.clone()).or_insert(next);
            }
            labels.push(names.iter().map(|n| ids[n]).collect());
            levels_per_stratum.push(ids.len());
            strata.push(values);
        }
        Layout { strata, labels, levels_per_stratum }
    }

    fn statistic(&self, labels: &[Vec<usize>]) -> FStatistic {
        let (mut ss_effect, mut ss_error) = (0.0, 0.0);
        for ((values, lab), &levels) in self.strata.iter().zip(labels).zip(&self.levels_per_stratum) {
            let stratum_mean = values.iter().sum::<f64>() / values.len() as f64;
            let mut sums = vec![0.0; levels];
            let mut counts = vec![0usize; levels];
            for (&v, &l) in values.iter().zip(lab) {
                sums[l] += v;
                counts[l] += 1;
            }
            let cell_means: Vec<f64> =
                sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
            for l in 0..levels {
                ss_effect += counts[l] as f64 * (cell_means[l] - stratum_mean).powi(2);
            }
            for (&v, &l) in values.iter().zip(lab) {
                ss_error += (v - cell_means[l]).powi(2);
            }
        }
        let df_effect: usize = self.levels_per_stratum.iter().map(|k| k - 1).sum();
        let n_obs: usize = self.strata.iter().map(Vec::len).sum();
        let cells: usize = self.levels_per_stratum.iter().sum();
        let df_error = n_obs - cells;
        let f = if df_effect == 0 || df_error == 0 {
            f64::NAN
        } else if ss_error <= 0.0 {
            if ss_effect > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            (ss_effect / df_effect as f64) / (ss_error / df_error as f64)
        };
        FStatistic { ss_effect, ss_error, df_effect, df_error, f }
    }
}

/// F statistic for one factor with levels nested in strata.
pub fn stratified_f(observations: &[StratifiedObservation]) -> Result<FStatistic, StatsError> {
    let layout = Layout::new(observations);
    check(&layout, observations)?;
    Ok(layout.statistic(&layout.labels))
}

fn check(layout: &Layout, observations: &[StratifiedObservation]) -> Result<(), StatsError> {
    if observations.iter().any(|o| !o.value.is_finite()) {
        return Err(StatsError::DegenerateGroups("non-finite observation".into()));
    }
    if !layout.levels_per_stratum.iter().any(|&k| k >= 2) {
        return Err(StatsError::DegenerateGroups("no stratum has two or more levels".into()));
    }
    let stat = layout.statistic(&layout.labels);
    if stat.df_error == 0 {
        return Err(StatsError::DegenerateGroups("no replication within cells".into()));
    }
    Ok(())
}

/// Permutation p-value of the stratified F statistic:
/// `(1 + #{F_b >= F_obs}) / (B + 1)`.
pub fn permutation_f_test(
    observations: &[StratifiedObservation],
    permutations: usize,
    seed: u64,
) -> Result<(FStatistic, f64), StatsError> {
    let layout = Layout::new(observations);
    check(&layout, observations)?;
    let observed = layout.statistic(&layout.labels);
    let exceed: u64 = (0..permutations as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(derive_seed(seed, DOMAIN_ANOVA, rep), 0);
            let shuffled: Vec<Vec<usize>> = layout
                .labels
                .iter()
                .map(|l| {
                    let mut l = l.clone();
                    l.shuffle(&mut rng);
                    l
                })
                .collect();
            let f = layout.statistic(&shuffled).f;
            u64::from(f >= observed.f * (1.0 - 1e-12))
        })
        .sum();
    Ok((observed, (1 + exceed) as f64 / (permutations as f64 + 1.0)))
}

/// Runs [`permutation_f_test`] for every factor and applies BH within each
/// metric.
pub fn permutation_anova(factors: &[AnovaFactor], permutations: usize, seed: u64) -> Result<AnovaReport, StatsError> {
    if permutations == 0 {
        return Err(StatsError::InvalidParameter("permutation ANOVA needs B > 0".into()));
    }
    let mut rows = Vec::with_capacity(factors.len());
    for (k, factor) in factors.iter().enumerate() {
        let (stat, p) = permutation_f_test(&factor.observations, permutations, derive_seed(seed, k as u64, 0))
            .map_err(|e| match e {
                StatsError::DegenerateGroups(msg) => {
                    StatsError::DegenerateGroups(format!("{} / {}: {msg}", factor.parameter, factor.metric))
                }
                other => other,
            })?;
        rows.push(AnovaRow {
            parameter: factor.parameter.clone(),
            metric: factor.metric.clone(),
            f_statistic: stat.f,
            df_effect: stat.df_effect,
            df_error: stat.df_error,
            p_value: p,
            p_adjusted: p,
            partial_eta_squared: stat.partial_eta_squared(),
        });
    }
    let mut by_metric: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (k, r) in rows.iter().enumerate() {
        by_metric.entry(r.metric.clone()).or_default().push(k);
    }
    for idx in by_metric.values() {
        let p: Vec<f64> = idx.iter().map(|&k| rows[k].p_value).collect();
        for (&k, adj) in idx.iter().zip(benjamini_hochberg(&p)) {
            rows[k].p_adjusted = adj;
        }
    }
    Ok(AnovaReport { permutations, seed, rows })
}

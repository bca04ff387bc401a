//! Sample-size stability: how much a per-size mean metric moves as the
//! number of graphs per size grows.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean, StatsError};
use crate::rng::{derive_seed, stream};

const DOMAIN_STABILITY: u64 = 0x7374_6162;

pub const DEFAULT_KS: [usize; 6] = [50, 100, 200, 300, 400, 500];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub ks: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Subset sizes compared by `delta`.
    pub from_k: usize,
    pub to_k: usize,
}

impl StabilityOptions {
    pub fn new(seed: u64) -> Self {
        StabilityOptions { ks: DEFAULT_KS.to_vec(), trials: 20, seed, from_k: 300, to_k: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    /// Mean over trials of the subset mean.
    pub mean: f64,
    /// Standard deviation of the trial means.
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub metric: String,
    pub seed: u64,
    pub trials: usize,
    pub curves: BTreeMap<u32, Vec<CurvePoint>>,
    pub from_k: usize,
    pub to_k: usize,
    /// `max_n |M_n(to_k) - M_n(from_k)|`.
    pub delta: f64,
}

/// Mean computed around the first value, exact for constant data.
fn shifted_mean(xs: &[f64]) -> f64 {
    let shift = xs[0];
    shift + mean(&xs.iter().map(|v| v - shift).collect::<Vec<_>>())
}

/// Largest absolute change of a curve value between `from_k` and `to_k`
/// across sizes.
pub fn max_abs_change(curves: &BTreeMap<u32, Vec<CurvePoint>>, from_k: usize, to_k: usize) -> Result<f64, StatsError> {
    let mut delta: f64 = 0.0;
    for (n, curve) in curves {
        let at = |k: usize| {
            curve
                .iter()
                .find(|p| p.k == k)
                .map(|p| p.mean)
                .ok_or_else(|| StatsError::InvalidParameter(format!("curve for n = {n} lacks k = {k}")))
        };
        delta = delta.max((at(to_k)? - at(from_k)?).abs());
    }
    Ok(delta)
}

/// Draws `trials` subsets without replacement of each size in `opts.ks` from
/// every per-size pool and averages the subset means.
pub fn stability_curve(
    metric: &str,
    pools: &BTreeMap<u32, Vec<f64>>,
    opts: &StabilityOptions,
) -> Result<StabilityReport, StatsError> {
    if opts.trials == 0 || opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(StatsError::InvalidParameter("need positive trials and subset sizes".into()));
    }
    for k in [opts.from_k, opts.to_k] {
        if !opts.ks.contains(&k) {
            return Err(StatsError::InvalidParameter(format!("k = {k} is not among the subset sizes")));
        }
    }
    let needed = *opts.ks.iter().max().expect("nonempty");
    for (&n, pool) in pools {
        if pool.len() < needed {
            return Err(StatsError::PoolTooSmall { n, needed, available: pool.len() });
        }
    }
    let mut curves = BTreeMap::new();
    for (&n, pool) in pools {
        let curve = opts
            .ks
            .iter()
            .map(|&k| {
                let trial_means: Vec<f64> = (0..opts.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        let index = (u64::from(n) << 40) ^ ((k as u64) << 20) ^ t;
                        let mut rng = stream(derive_seed(opts.seed, DOMAIN_STABILITY, index), 0);
                        let picked: Vec<f64> = sample(&mut rng, pool.len(), k).iter().map(|i| pool[i]).collect();
                        shifted_mean(&picked)
                    })
                    .collect();
                let m = shifted_mean(&trial_means);
                let var = if trial_means.len() > 1 {
                    trial_means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (trial_means.len() - 1) as f64
                } else {
                    0.0
                };
                CurvePoint { k, mean: m, std_dev: var.sqrt() }
            })
            .collect();
        curves.insert(n, curve);
    }
    let delta = max_abs_change(&curves, opts.from_k, opts.to_k)?;
    Ok(StabilityReport {
        metric: metric.to_string(),
        seed: opts.seed,
        trials: opts.trials,
        curves,
        from_k: opts.from_k,
        to_k: opts.to_k,
        delta,
    })
}

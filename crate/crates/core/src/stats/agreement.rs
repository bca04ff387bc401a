//! Agreement between algorithm scores on generated and real corpora.
//!
//! Scores are centered within each graph-size bucket, pooled over all
//! algorithm–size points, and compared with Pearson, Spearman and an OLS
//! fit. Significance comes from a permutation test that shuffles algorithm
//! identity within each bucket; uncertainty from a bootstrap that resamples
//! algorithm–size pairs within each bucket.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_ranks, mean, ols, pearson, quantile_sorted, spearman, StatsError};
use crate::rng::{derive_seed, stream};

const DOMAIN_PERMUTATION: u64 = 0x7065_726d;
const DOMAIN_BOOTSTRAP: u64 = 0x626f_6f74;

/// Largest number of joint within-bucket permutations enumerated by default;
/// covers three algorithms over eight buckets (6^8).
pub const DEFAULT_EXHAUSTIVE_CAP: u128 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corpus {
    Generated,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    F1,
    Shd,
    Sid,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::F1, Metric::Shd, Metric::Sid];

    pub fn name(self) -> &'static str {
        match self {
            Metric::F1 => "f1",
            Metric::Shd => "shd",
            Metric::Sid => "sid",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean scores of one algorithm on one bucket of one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub algorithm: String,
    pub n: u32,
    pub corpus: Corpus,
    pub f1: f64,
    pub shd: f64,
    pub sid: f64,
    /// Number of graphs averaged into this row, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u32>,
}

impl ScoreRow {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::F1 => self.f1,
            Metric::Shd => self.shd,
            Metric::Sid => self.sid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Values laid out as `[bucket][algorithm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGrid {
    pub metric: Metric,
    pub generated: Vec<Vec<f64>>,
    pub real: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub algorithms: Vec<String>,
    pub buckets: Vec<u32>,
    pub metrics: Vec<MetricGrid>,
}

pub type CenteredTable = Grid;

impl ScoreTable {
    pub fn new(rows: Vec<ScoreRow>) -> Self {
        ScoreTable { rows }
    }

    /// Reads CSV with header `algorithm,n,corpus,f1,shd,sid[,samples]`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows =
            rdr.deserialize().collect::<Result<Vec<ScoreRow>, _>>().map_err(|e| StatsError::Csv(e.to_string()))?;
        Ok(ScoreTable { rows })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| StatsError::Csv(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv_reader(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), StatsError> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row).map_err(|e| StatsError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| StatsError::Csv(e.to_string()))
    }

    /// Algorithms in order of first appearance.
    pub fn algorithms(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows.iter().filter(|r| seen.insert(r.algorithm.clone())).map(|r| r.algorithm.clone()).collect()
    }

    pub fn buckets(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.rows.iter().map(|r| r.n).collect();
        set.into_iter().collect()
    }

    pub fn without_algorithm(&self, algorithm: &str) -> Result<ScoreTable, StatsError> {
        if !self.rows.iter().any(|r| r.algorithm == algorithm) {
            return Err(StatsError::UnknownAlgorithm(algorithm.to_string()));
        }
        Ok(ScoreTable { rows: self.rows.iter().filter(|r| r.algorithm != algorithm).cloned().collect() })
    }

    /// Arranges the table as a complete algorithm × bucket grid for both
    /// corpora.
    pub fn grid(&self) -> Result<Grid, StatsError> {
        let algorithms = self.algorithms();
        let buckets = self.buckets();
        if algorithms.is_empty() {
            return Err(StatsError::IncompleteGrid("no rows".into()));
        }
        let mut cells: BTreeMap<(&str, u32, Corpus), &ScoreRow> = BTreeMap::new();
        for r in &self.rows {
            if !r.f1.is_finite() || !r.shd.is_finite() || !r.sid.is_finite() {
                return Err(StatsError::IncompleteGrid(format!(
                    "non-finite score for {} at n = {} ({:?})",
                    r.algorithm, r.n, r.corpus
                )));
            }
            if cells.insert((r.algorithm.as_str(), r.n, r.corpus), r).is_some() {
                return Err(StatsError::IncompleteGrid(format!(
                    "duplicate row for {} at n = {} ({:?})",
                    r.algorithm, r.n, r.corpus
                )));
            }
        }
        let mut metrics = Vec::with_capacity(3);
        for metric in Metric::ALL {
            let mut generated = Vec::with_capacity(buckets.len());
            let mut real = Vec::with_capacity(buckets.len());
            for &n in &buckets {
                let mut g = Vec::with_capacity(algorithms.len());
                let mut y = Vec::with_capacity(algorithms.len());
                for a in &algorithms {
                    for (corpus, out) in [(Corpus::Generated, &mut g), (Corpus::Real, &mut y)] {
                        let row = cells.get(&(a.as_str(), n, corpus)).ok_or_else(|| {
                            StatsError::IncompleteGrid(format!("missing {a} at n = {n} ({corpus:?})"))
                        })?;
                        out.push(row.value(metric));
                    }
                }
                generated.push(g);
                real.push(y);
            }
            metrics.push(MetricGrid { metric, generated, real });
        }
        Ok(Grid { algorithms, buckets, metrics })
    }
}

/// Subtracts the across-algorithm mean within a bucket.
pub fn center(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let m = mean(values);
    values.iter().map(|v| v - m).collect()
}

/// Centers every metric within each size bucket, separately per corpus.
pub fn center_within_n(table: &ScoreTable) -> Result<CenteredTable, StatsError> {
    Ok(center_grid(&table.grid()?))
}

fn center_grid(grid: &Grid) -> Grid {
    let c = |rows: &Vec<Vec<f64>>| rows.iter().map(|r| center(r)).collect();
    Grid {
        algorithms: grid.algorithms.clone(),
        buckets: grid.buckets.clone(),
        metrics: grid
            .metrics
            .iter()
            .map(|m| MetricGrid { metric: m.metric, generated: c(&m.generated), real: c(&m.real) })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    /// Monte Carlo with `permutations` random within-bucket shuffles.
    Sampled,
    /// Full enumeration; fails when it would exceed the cap.
    Exhaustive,
    /// Enumerate when within the cap, otherwise sample.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementOptions {
    pub permutations: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub mode: PermutationMode,
    pub exhaustive_cap: u128,
    pub confidence: f64,
}

impl AgreementOptions {
    pub fn new(seed: u64) -> Self {
        AgreementOptions {
            permutations: 10_000,
            bootstrap: 10_000,
            seed,
            mode: PermutationMode::Sampled,
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    /// Permutations whose `|r|` reached the observed `|r|`.
    pub exceedances: u64,
    pub permutations: u64,
    pub exhaustive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    /// Replicates dropped because a resample had zero variance.
    pub skipped: usize,
    pub pearson: [f64; 2],
    pub spearman: [f64; 2],
    pub r_squared: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAgreement {
    pub metric: Metric,
    pub pearson: f64,
    pub spearman: f64,
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
    pub pearson_p: Option<PValue>,
    pub spearman_p: Option<PValue>,
    pub bootstrap: Option<BootstrapSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementAverage {
    pub pearson: f64,
    pub spearman: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub algorithms: Vec<String>,
    pub buckets: Vec<u32>,
    pub points: usize,
    pub seed: u64,
    pub options: AgreementOptions,
    pub metrics: Vec<MetricAgreement>,
    pub average: AgreementAverage,
}

impl AgreementStats {
    pub fn metric(&self, metric: Metric) -> &MetricAgreement {
        self.metrics.iter().find(|m| m.metric == metric).expect("all metrics are computed")
    }
}

/// Pearson correlation over pooled `(x, y)` when `y` may be permuted within
/// buckets. Bucket means and variances are permutation invariant, so only
/// the cross-product sum changes.
struct PermutationProblem {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    offset: f64,
    scale: f64,
}

impl PermutationProblem {
    fn new(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Option<Self> {
        let px: Vec<f64> = x.iter().flatten().copied().collect();
        let py: Vec<f64> = y.iter().flatten().copied().collect();
        let (mx, my) = (mean(&px), mean(&py));
        let sxx: f64 = px.iter().map(|v| (v - mx) * (v - mx)).sum();
        let syy: f64 = py.iter().map(|v| (v - my) * (v - my)).sum();
        if sxx <= 0.0 || syy <= 0.0 {
            return None;
        }
        Some(PermutationProblem { x, y, offset: px.len() as f64 * mx * my, scale: (sxx * syy).sqrt() })
    }

    fn r_from_sum(&self, sum_xy: f64) -> f64 {
        (sum_xy - self.offset) / self.scale
    }

    fn bucket_sum(&self, b: usize, perm: &[usize]) -> f64 {
        self.x[b].iter().zip(perm).map(|(xv, &k)| xv * self.y[b][k]).sum()
    }

    fn identity_sum(&self) -> f64 {
        (0..self.x.len())
            .map(|b| {
                let id: Vec<usize> = (0..self.x[b].len()).collect();
                self.bucket_sum(b, &id)
            })
            .sum()
    }

    fn total_permutations(&self) -> u128 {
        self.x.iter().map(|b| factorial(b.len())).fold(1u128, |acc, f| acc.saturating_mul(f))
    }

    fn exhaustive(&self) -> PValue {
        let observed = self.r_from_sum(self.identity_sum()).abs();
        // Per-bucket cross-product sums for every ordering of that bucket.
        let contributions: Vec<Vec<f64>> = (0..self.x.len())
            .map(|b| permutations(self.x[b].len()).iter().map(|p| self.bucket_sum(b, p)).collect())
            .collect();
        let total = self.total_permutations() as u64;
        let exceed = if contributions.is_empty() {
            0
        } else {
            contributions[0].par_iter().map(|&c0| self.count_from(&contributions, 1, c0, observed)).sum()
        };
        PValue { value: exceed as f64 / total as f64, exceedances: exceed, permutations: total, exhaustive: true }
    }

    fn count_from(&self, contributions: &[Vec<f64>], b: usize, acc: f64, observed: f64) -> u64 {
        if b == contributions.len() {
            return u64::from(self.r_from_sum(acc).abs() >= observed - 1e-12);
        }
        contributions[b].iter().map(|&c| self.count_from(contributions, b + 1, acc + c, observed)).sum()
    }

    fn sampled(&self, permutations: usize, seed: u64) -> PValue {
        let observed = self.r_from_sum(self.identity_sum()).abs();
        let exceed: u64 = (0..permutations as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream(derive_seed(seed, DOMAIN_PERMUTATION, rep), 0);
                let sum: f64 = (0..self.x.len())
                    .map(|b| {
                        let mut perm: Vec<usize> = (0..self.x[b].len()).collect();
                        perm.shuffle(&mut rng);
                        self.bucket_sum(b, &perm)
                    })
                    .sum();
                u64::from(self.r_from_sum(sum).abs() >= observed - 1e-12)
            })
            .sum();
        PValue {
            value: (1 + exceed) as f64 / (permutations as f64 + 1.0),
            exceedances: exceed,
            permutations: permutations as u64,
            exhaustive: false,
        }
    }
}

fn factorial(k: usize) -> u128 {
    (1..=k as u128).fold(1u128, |acc, v| acc.saturating_mul(v))
}

/// All orderings of `0..k` in lexicographic order; the first is the identity.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..k).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| current[j] > current[i - 1]).expect("pivot has a successor");
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

/// Two-sided p-value for the pooled Pearson correlation between `x` and `y`
/// (laid out `[bucket][item]`) under within-bucket shuffles of `y`.
pub fn stratified_permutation_p(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    mode: PermutationMode,
    permutations: usize,
    cap: u128,
    seed: u64,
) -> Result<PValue, StatsError> {
    let problem = PermutationProblem::new(x.to_vec(), y.to_vec())
        .ok_or_else(|| StatsError::DegenerateGroups("zero variance in pooled scores".into()))?;
    let total = problem.total_permutations();
    let exhaustive = match mode {
        PermutationMode::Exhaustive if total > cap => {
            return Err(StatsError::ExhaustiveTooLarge { combinations: total, cap })
        }
        PermutationMode::Exhaustive => true,
        PermutationMode::Auto => total <= cap,
        PermutationMode::Sampled => false,
    };
    if exhaustive {
        Ok(problem.exhaustive())
    } else if permutations == 0 {
        Err(StatsError::InvalidParameter("sampled permutation test needs B > 0".into()))
    } else {
        Ok(problem.sampled(permutations, seed))
    }
}

/// Replaces every value by its rank among all pooled values, keeping the
/// bucket layout.
fn pooled_ranks(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = values.iter().flatten().copied().collect();
    let ranks = average_ranks(&flat);
    let mut it = ranks.into_iter();
    values.iter().map(|b| b.iter().map(|_| it.next().expect("same length")).collect()).collect()
}

fn flatten(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

struct Point {
    pearson: f64,
    spearman: f64,
    r_squared: f64,
}

fn point_estimates(x: &[f64], y: &[f64]) -> Option<(Point, f64, f64)> {
    let r = pearson(x, y)?;
    let rho = spearman(x, y)?;
    let fit = ols(x, y)?;
    Some((Point { pearson: r, spearman: rho, r_squared: fit.r_squared }, fit.slope, fit.intercept))
}

fn bootstrap(raw: &MetricGrid, replicates: usize, seed: u64, confidence: f64) -> Option<BootstrapSummary> {
    let draws: Vec<Option<Point>> = (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(derive_seed(seed, DOMAIN_BOOTSTRAP, rep), 0);
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (g, r) in raw.generated.iter().zip(&raw.real) {
                let k = g.len();
                let idx: Vec<usize> = (0..k).map(|_| rng.gen_range(0..k)).collect();
                let gs: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
                let rs: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
                x.extend(center(&gs));
                y.extend(center(&rs));
            }
            point_estimates(&x, &y).map(|(p, _, _)| p)
        })
        .collect();
    let kept: Vec<&Point> = draws.iter().flatten().collect();
    if kept.is_empty() {
        return None;
    }
    let alpha = (1.0 - confidence) / 2.0;
    let interval = |f: fn(&Point) -> f64| {
        let mut v: Vec<f64> = kept.iter().map(|p| f(p)).collect();
        v.sort_by(f64::total_cmp);
        [quantile_sorted(&v, alpha), quantile_sorted(&v, 1.0 - alpha)]
    };
    Some(BootstrapSummary {
        replicates,
        skipped: replicates - kept.len(),
        pearson: interval(|p| p.pearson),
        spearman: interval(|p| p.spearman),
        r_squared: interval(|p| p.r_squared),
    })
}

/// Centered agreement statistics for every metric of `table`.
pub fn agreement(table: &ScoreTable, opts: &AgreementOptions) -> Result<AgreementStats, StatsError> {
    if !(0.0..1.0).contains(&opts.confidence) || opts.confidence == 0.0 {
        return Err(StatsError::InvalidParameter(format!("confidence {} not in (0, 1)", opts.confidence)));
    }
    let raw = table.grid()?;
    let centered = center_grid(&raw);
    let mut metrics = Vec::with_capacity(3);
    for (k, (c, r)) in centered.metrics.iter().zip(&raw.metrics).enumerate() {
        let x = flatten(&c.generated);
        let y = flatten(&c.real);
        let (point, slope, intercept) = point_estimates(&x, &y)
            .ok_or_else(|| StatsError::DegenerateGroups(format!("{}: centered scores have zero variance", c.metric)))?;
        let run_test = opts.permutations > 0 || opts.mode != PermutationMode::Sampled;
        let (pearson_p, spearman_p) = if run_test {
            let base = derive_seed(opts.seed, k as u64, 0);
            let p = stratified_permutation_p(
                &c.generated,
                &c.real,
                opts.mode,
                opts.permutations,
                opts.exhaustive_cap,
                base,
            )?;
            let rho_p = stratified_permutation_p(
                &pooled_ranks(&c.generated),
                &pooled_ranks(&c.real),
                opts.mode,
                opts.permutations,
                opts.exhaustive_cap,
                derive_seed(opts.seed, k as u64, 1),
            )?;
            (Some(p), Some(rho_p))
        } else {
            (None, None)
        };
        let boot = if opts.bootstrap > 0 {
            bootstrap(r, opts.bootstrap, derive_seed(opts.seed, k as u64, 2), opts.confidence)
        } else {
            None
        };
        metrics.push(MetricAgreement {
            metric: c.metric,
            pearson: point.pearson,
            spearman: point.spearman,
            r_squared: point.r_squared,
            slope,
            intercept,
            pearson_p,
            spearman_p,
            bootstrap: boot,
        });
    }
    let avg = |f: fn(&MetricAgreement) -> f64| metrics.iter().map(f).sum::<f64>() / metrics.len() as f64;
    let average = AgreementAverage {
        pearson: avg(|m| m.pearson),
        spearman: avg(|m| m.spearman),
        r_squared: avg(|m| m.r_squared),
    };
    Ok(AgreementStats {
        points: raw.algorithms.len() * raw.buckets.len(),
        algorithms: raw.algorithms,
        buckets: raw.buckets,
        seed: opts.seed,
        options: opts.clone(),
        metrics,
        average,
    })
}

/// Agreement recomputed without `drop`.
pub fn leave_one_out(table: &ScoreTable, drop: &str, opts: &AgreementOptions) -> Result<AgreementStats, StatsError> {
    let reduced = table.without_algorithm(drop)?;
    let remaining = reduced.algorithms().len();
    if remaining < 2 {
        return Err(StatsError::TooFewAlgorithms(remaining));
    }
    agreement(&reduced, opts)
}

//! Majority-vote consensus over binary edge ratings, Krippendorff's α and
//! borderline-agreement flags.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{quantile_sorted, StatsError};
use crate::graph::{Adjacency, Dag};
use crate::projection::{project_adjacency, RemovedEdge, SupportGraph};

/// Number of raters per item in the human annotation protocol.
pub const DEFAULT_RATERS: usize = 11;

/// One rater's binary decision about the ordered pair `(i, j)` of a text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub text_id: String,
    pub i: usize,
    pub j: usize,
    pub rater: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingItem {
    pub text_id: String,
    pub i: usize,
    pub j: usize,
    /// One slot per rater; `None` when that rater did not label the item.
    pub ratings: Vec<Option<u8>>,
}

impl RatingItem {
    pub fn yes(&self) -> usize {
        self.ratings.iter().filter(|r| **r == Some(1)).count()
    }

    pub fn present(&self) -> usize {
        self.ratings.iter().filter(|r| r.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    raters: usize,
    items: Vec<RatingItem>,
}

impl RatingMatrix {
    /// Builds the matrix from explicit items. Every rating must be 0 or 1,
    /// items must not be self-pairs, and every item must carry `raters`
    /// slots.
    pub fn new(raters: usize, items: Vec<RatingItem>) -> Result<Self, StatsError> {
        if raters == 0 {
            return Err(StatsError::InvalidParameter("rater count must be positive".into()));
        }
        for item in &items {
            if item.i == item.j {
                return Err(StatsError::InvalidParameter(format!(
                    "self-pair ({}, {}) in text {:?}",
                    item.i, item.j, item.text_id
                )));
            }
            if item.ratings.len() != raters {
                return Err(StatsError::InvalidParameter(format!(
                    "item ({}, {}) of {:?} has {} slots, expected {raters}",
                    item.i,
                    item.j,
                    item.text_id,
                    item.ratings.len()
                )));
            }
            if item.ratings.iter().flatten().any(|&r| r > 1) {
                return Err(StatsError::InvalidParameter("ratings must be 0 or 1".into()));
            }
        }
        Ok(RatingMatrix { raters, items })
    }

    /// Builds the matrix from long-format records. Raters are assigned slots
    /// in sorted id order; items are ordered by `(text_id, i, j)`. A repeated
    /// `(text, i, j, rater)` keeps the last label.
    pub fn from_records<'a, I>(records: I, raters: usize) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = &'a RatingRecord>,
    {
        let records: Vec<&RatingRecord> = records.into_iter().collect();
        let rater_ids: BTreeSet<&str> = records.iter().map(|r| r.rater.as_str()).collect();
        if rater_ids.len() > raters {
            return Err(StatsError::InvalidParameter(format!(
                "{} distinct raters exceed the declared {raters}",
                rater_ids.len()
            )));
        }
        let slot: BTreeMap<&str, usize> = rater_ids.into_iter().enumerate().map(|(k, id)| (id, k)).collect();
        let mut grouped: BTreeMap<(String, usize, usize), Vec<Option<u8>>> = BTreeMap::new();
        for r in records {
            let entry = grouped.entry((r.text_id.clone(), r.i, r.j)).or_insert_with(|| vec![None; raters]);
            entry[slot[r.rater.as_str()]] = Some(r.label);
        }
        let items =
            grouped.into_iter().map(|((text_id, i, j), ratings)| RatingItem { text_id, i, j, ratings }).collect();
        RatingMatrix::new(raters, items)
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn items(&self) -> &[RatingItem] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Text ids in sorted order.
    pub fn texts(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.items.iter().map(|it| it.text_id.as_str()).collect();
        set.into_iter().collect()
    }
}

/// Consensus graph for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextConsensus {
    pub text_id: String,
    pub n: usize,
    /// Vote proportion `yes / present` per ordered pair; 0 for unrated pairs.
    pub support: SupportGraph,
    /// Majority edges before cycle removal.
    pub majority: Adjacency,
    pub dag: Dag,
    pub removed: Vec<RemovedEdge>,
}

/// Smallest vote share that counts as a majority among `raters`, as a
/// fraction `(numerator, raters)`; 6/11 for eleven raters.
pub fn majority_fraction(raters: usize) -> (usize, usize) {
    (raters / 2 + 1, raters)
}

/// Whether `yes` out of `present` ratings reaches the majority share for a
/// panel of `raters`. Evaluated in integers so that `s = 6/11` is never lost
/// to rounding.
pub fn is_majority(yes: usize, present: usize, raters: usize) -> bool {
    let (num, den) = majority_fraction(raters);
    present > 0 && yes * den >= num * present
}

/// Per-text majority vote. An edge is kept when its vote share
/// `s = yes / present` reaches `(⌊raters/2⌋ + 1) / raters`; cyclic results
/// are projected by deleting the weakest edges on cycles. Node count per
/// text is one more than the largest rated index.
pub fn majority_consensus(rm: &RatingMatrix) -> Result<Vec<TextConsensus>, StatsError> {
    if rm.is_empty() {
        return Err(StatsError::EmptyRatings);
    }
    let mut by_text: BTreeMap<&str, Vec<&RatingItem>> = BTreeMap::new();
    for item in rm.items() {
        by_text.entry(item.text_id.as_str()).or_default().push(item);
    }
    let mut out = Vec::with_capacity(by_text.len());
    for (text_id, items) in by_text {
        let n = items.iter().map(|it| it.i.max(it.j)).max().unwrap_or(0) + 1;
        let mut support = vec![vec![0.0; n]; n];
        let mut majority = Adjacency::empty(n);
        for it in &items {
            let (yes, present) = (it.yes(), it.present());
            if present > 0 {
                support[it.i][it.j] = yes as f64 / present as f64;
            }
            if is_majority(yes, present, rm.raters()) {
                majority.set_edge(it.i, it.j, true);
            }
        }
        let support = SupportGraph::new(support).expect("vote shares lie in [0, 1] off the diagonal");
        let projection = project_adjacency(majority.clone(), &support);
        out.push(TextConsensus {
            text_id: text_id.to_string(),
            n,
            support,
            majority,
            dag: projection.dag,
            removed: projection.removed,
        });
    }
    Ok(out)
}

/// Krippendorff's α for nominal binary labels, computed from the coincidence
/// matrix over items with at least two ratings. When every pairable rating
/// carries the same label the expected disagreement is zero and α is
/// reported as 1.0.
pub fn krippendorff_alpha(rm: &RatingMatrix) -> Result<f64, StatsError> {
    // o[c][k]: coincidences of labels c and k.
    let mut o = [[0.0f64; 2]; 2];
    let mut pairable = false;
    for item in rm.items() {
        let labels: Vec<u8> = item.ratings.iter().flatten().copied().collect();
        let m = labels.len();
        if m < 2 {
            continue;
        }
        pairable = true;
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
        let zeros = m as f64 - ones;
        let w = 1.0 / (m as f64 - 1.0);
        o[0][0] += zeros * (zeros - 1.0) * w;
        o[1][1] += ones * (ones - 1.0) * w;
        o[0][1] += zeros * ones * w;
        o[1][0] += zeros * ones * w;
    }
    if !pairable {
        return Err(StatsError::InsufficientData);
    }
    let n0 = o[0][0] + o[0][1];
    let n1 = o[1][0] + o[1][1];
    let n = n0 + n1;
    let d_o = (o[0][1] + o[1][0]) / n;
    let d_e = 2.0 * n0 * n1 / (n * (n - 1.0));
    if d_e == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFlag {
    pub text_id: String,
    pub i: usize,
    pub j: usize,
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFlag {
    pub text_id: String,
    /// Borderline pairs over all ordered pairs `n (n - 1)`.
    pub borderline_fraction: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowAgreementReport {
    pub edges: Vec<EdgeFlag>,
    pub graphs: Vec<GraphFlag>,
    /// Quantile of the borderline fractions that a graph must exceed.
    pub cutoff: f64,
    pub quantile: f64,
}

/// Whether `s` is one of the two vote shares adjacent to the majority line,
/// i.e. 5/11 or 6/11 for eleven raters.
pub fn is_borderline(s: f64, raters: usize) -> bool {
    let (num, den) = majority_fraction(raters);
    let hi = num as f64 / den as f64;
    let lo = (num - 1) as f64 / den as f64;
    (s - hi).abs() < 1e-9 || (s - lo).abs() < 1e-9
}

/// Flags borderline edges and graphs whose borderline fraction is strictly
/// above the `quantile` of fractions across all supplied texts.
pub fn flag_low_agreement(texts: &[(&str, &SupportGraph)], raters: usize, quantile: f64) -> LowAgreementReport {
    let mut edges = Vec::new();
    let mut fractions = Vec::with_capacity(texts.len());
    for (text_id, sg) in texts {
        let n = sg.n();
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i != j && is_borderline(sg.get(i, j), raters) {
                    count += 1;
                    edges.push(EdgeFlag { text_id: text_id.to_string(), i, j, support: sg.get(i, j) });
                }
            }
        }
        let pairs = n * n.saturating_sub(1);
        fractions.push(if pairs == 0 { 0.0 } else { count as f64 / pairs as f64 });
    }
    let cutoff = if fractions.is_empty() {
        0.0
    } else {
        let mut sorted = fractions.clone();
        sorted.sort_by(f64::total_cmp);
        quantile_sorted(&sorted, quantile)
    };
    let graphs = texts
        .iter()
        .zip(&fractions)
        .map(|((text_id, _), &f)| GraphFlag {
            text_id: text_id.to_string(),
            borderline_fraction: f,
            flagged: f > cutoff,
        })
        .collect();
    LowAgreementReport { edges, graphs, cutoff, quantile }
}

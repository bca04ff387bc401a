//! Edge-wise precision/recall/F1, SHD, SID and the missed/spurious error
//! decomposition between a target graph and a predicted one.
//!
//! [`sid`] evaluates the parent-set formulation literally: for every ordered
//! pair `(i, j)` with `i != j` it compares the parent set of `j` in both
//! graphs after intervening on `i`. An intervention on `i` only deletes edges
//! into `i`, so for `j != i` the post-intervention parent set equals the
//! ordinary one and the sum collapses to `(n - 1)` times the number of nodes
//! whose parent sets differ. This is *not* the adjustment-set SID of
//! Peters & Bühlmann; use it as a direction-sensitive disagreement count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Adjacency, GraphError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("shape mismatch: target has {target} nodes, prediction has {predicted}")]
    ShapeMismatch { target: usize, predicted: usize },
    #[error("SID requires acyclic inputs")]
    CyclicInput,
}

impl From<GraphError> for MetricError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::ShapeMismatch { left, right } => MetricError::ShapeMismatch { target: left, predicted: right },
            _ => MetricError::CyclicInput,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: usize,
    pub sid: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// Target edges absent from the prediction (false negatives).
    pub missed: Vec<(usize, usize)>,
    /// Predicted edges absent from the target (false positives).
    pub spurious: Vec<(usize, usize)>,
}

impl ErrorDecomposition {
    pub fn missed_count(&self) -> usize {
        self.missed.len()
    }

    pub fn spurious_count(&self) -> usize {
        self.spurious.len()
    }
}

fn check_shape(target: &Adjacency, predicted: &Adjacency) -> Result<(), MetricError> {
    if target.n() != predicted.n() {
        return Err(MetricError::ShapeMismatch { target: target.n(), predicted: predicted.n() });
    }
    Ok(())
}

/// Precision, recall and F1 over directed edges.
///
/// Conventions at 0/0: both graphs empty gives `P = R = F1 = 1`; otherwise
/// an undefined ratio is 0, and F1 is 0 whenever `TP = 0`.
pub fn edge_prf(target: &Adjacency, predicted: &Adjacency) -> Result<EdgeScores, MetricError> {
    check_shape(target, predicted)?;
    let n = target.n();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            match (target.has_edge(i, j), predicted.has_edge(i, j)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(EdgeScores { tp, fp, fn_, precision: 1.0, recall: 1.0, f1: 1.0 });
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(EdgeScores { tp, fp, fn_, precision, recall, f1 })
}

/// Hamming distance between adjacency matrices over off-diagonal entries; a
/// reversed edge counts twice.
pub fn shd(a: &Adjacency, b: &Adjacency) -> Result<usize, MetricError> {
    check_shape(a, b)?;
    let n = a.n();
    Ok((0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && a.rows()[i][j] != b.rows()[i][j])
        .count())
}

/// Parent set of `j` after the intervention `do(i)`.
fn intervened_parents(g: &Adjacency, i: usize, j: usize) -> Vec<usize> {
    if i == j {
        Vec::new()
    } else {
        g.parents(j)
    }
}

/// Parent-set SID: ordered pairs `(i, j)`, `i != j`, whose parent sets of `j`
/// under `do(i)` disagree between `truth` and `estimate`.
pub fn sid(truth: &Adjacency, estimate: &Adjacency) -> Result<usize, MetricError> {
    check_shape(truth, estimate)?;
    if !truth.is_acyclic() || !estimate.is_acyclic() {
        return Err(MetricError::CyclicInput);
    }
    let n = truth.n();
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j && intervened_parents(estimate, i, j) != intervened_parents(truth, i, j) {
                count += 1;
            }
        }
    }
    debug_assert_eq!(count, (n - 1) * differing_parent_sets(truth, estimate));
    Ok(count)
}

/// Number of nodes whose parent sets differ between the two graphs.
pub fn differing_parent_sets(a: &Adjacency, b: &Adjacency) -> usize {
    (0..a.n()).filter(|&j| a.parents(j) != b.parents(j)).count()
}

pub fn decompose_errors(target: &Adjacency, predicted: &Adjacency) -> Result<ErrorDecomposition, MetricError> {
    check_shape(target, predicted)?;
    let n = target.n();
    let mut missed = Vec::new();
    let mut spurious = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            match (target.has_edge(i, j), predicted.has_edge(i, j)) {
                (true, false) => missed.push((i, j)),
                (false, true) => spurious.push((i, j)),
                _ => {}
            }
        }
    }
    Ok(ErrorDecomposition { missed, spurious })
}

/// All metrics for one (target, prediction) pair. Both must be acyclic;
/// project cyclic predictions first.
pub fn evaluate(target: &Adjacency, predicted: &Adjacency) -> Result<MetricReport, MetricError> {
    let s = edge_prf(target, predicted)?;
    Ok(MetricReport {
        tp: s.tp,
        fp: s.fp,
        fn_: s.fn_,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        shd: shd(target, predicted)?,
        sid: sid(target, predicted)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, e: &[(usize, usize)]) -> Adjacency {
        Adjacency::from_edges(n, e).unwrap()
    }

    #[test]
    fn prf_identity() {
        let a = g(3, &[(0, 1), (1, 2)]);
        let s = edge_prf(&a, &a).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn prf_two_thirds() {
        // TP = 2, FP = 1, FN = 1.
        let t = g(4, &[(0, 1), (1, 2), (2, 3)]);
        let p = g(4, &[(0, 1), (1, 2), (0, 3)]);
        let s = edge_prf(&t, &p).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (2, 1, 1));
        for v in [s.precision, s.recall, s.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prf_reversed_edge() {
        let s = edge_prf(&g(2, &[(0, 1)]), &g(2, &[(1, 0)])).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (0, 1, 1));
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn prf_empty_conventions() {
        let s = edge_prf(&g(3, &[]), &g(3, &[])).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = edge_prf(&g(3, &[(0, 1)]), &g(3, &[])).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = edge_prf(&g(3, &[]), &g(3, &[(0, 1)])).unwrap();
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn shd_examples() {
        assert_eq!(shd(&g(3, &[(0, 1)]), &g(3, &[(0, 1)])).unwrap(), 0);
        assert_eq!(shd(&g(2, &[(0, 1)]), &g(2, &[(1, 0)])).unwrap(), 2);
        assert_eq!(shd(&g(3, &[(0, 1), (1, 2)]), &g(3, &[(0, 1), (0, 2)])).unwrap(), 2);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(shd(&g(2, &[]), &g(3, &[])), Err(MetricError::ShapeMismatch { .. })));
        assert!(edge_prf(&g(2, &[]), &g(3, &[])).is_err());
        assert!(decompose_errors(&g(2, &[]), &g(3, &[])).is_err());
    }

    #[test]
    fn sid_examples() {
        assert_eq!(sid(&g(3, &[(0, 1)]), &g(3, &[(0, 1)])).unwrap(), 0);
        assert_eq!(sid(&g(3, &[(0, 1)]), &g(3, &[])).unwrap(), 2);
        assert_eq!(sid(&g(3, &[(0, 1), (0, 2)]), &g(3, &[(0, 1)])).unwrap(), 2);
        assert!(matches!(sid(&g(2, &[(0, 1), (1, 0)]), &g(2, &[])), Err(MetricError::CyclicInput)));
    }

    #[test]
    fn sid_is_symmetric_under_parent_set_form() {
        // Differing parent sets is a symmetric relation, so no asymmetric
        // pair exists for this formulation.
        let a = g(3, &[(0, 1)]);
        let b = g(3, &[(1, 2), (0, 2)]);
        assert_eq!(sid(&a, &b).unwrap(), 4);
        assert_eq!(sid(&b, &a).unwrap(), 4);
    }

    #[test]
    fn decomposition() {
        let d = decompose_errors(&g(3, &[(0, 1), (1, 2)]), &g(3, &[(0, 1), (0, 2)])).unwrap();
        assert_eq!(d.missed, vec![(1, 2)]);
        assert_eq!(d.spurious, vec![(0, 2)]);
        let d = decompose_errors(&g(3, &[(0, 1)]), &g(3, &[(0, 1)])).unwrap();
        assert!(d.missed.is_empty() && d.spurious.is_empty());
        let d = decompose_errors(&g(3, &[(0, 1), (1, 2)]), &g(3, &[])).unwrap();
        assert_eq!(d.missed, vec![(0, 1), (1, 2)]);
    }
}

//! Deterministic cycle removal for consensus and algorithm outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Adjacency, Dag};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupportError {
    #[error("support matrix is not square")]
    NotSquare,
    #[error("support ({i}, {j}) = {value} outside [0, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error("nonzero diagonal support at node {0}")]
    Diagonal(usize),
}

/// Real-valued edge support, e.g. annotator vote proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SupportRepr")]
pub struct SupportGraph {
    n: usize,
    support: Vec<Vec<f64>>,
}

/// Wire form; `n` is optional and must match the matrix when present.
#[derive(Deserialize)]
struct SupportRepr {
    #[serde(default)]
    n: Option<usize>,
    support: Vec<Vec<f64>>,
}

impl TryFrom<SupportRepr> for SupportGraph {
    type Error = SupportError;

    fn try_from(r: SupportRepr) -> Result<Self, SupportError> {
        if r.n.is_some_and(|n| n != r.support.len()) {
            return Err(SupportError::NotSquare);
        }
        SupportGraph::new(r.support)
    }
}

impl SupportGraph {
    pub fn new(support: Vec<Vec<f64>>) -> Result<Self, SupportError> {
        let n = support.len();
        for (i, row) in support.iter().enumerate() {
            if row.len() != n {
                return Err(SupportError::NotSquare);
            }
            for (j, &value) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(SupportError::OutOfRange { i, j, value });
                }
                if i == j && value != 0.0 {
                    return Err(SupportError::Diagonal(i));
                }
            }
        }
        Ok(SupportGraph { n, support })
    }

    /// Support 1 on every edge of `adj`, 0 elsewhere.
    pub fn from_adjacency(adj: &Adjacency) -> Self {
        let support = adj.rows().iter().map(|row| row.iter().map(|&v| f64::from(v)).collect()).collect();
        SupportGraph { n: adj.n(), support }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.support[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn threshold(&self, threshold: f64) -> Adjacency {
        let mut adj = Adjacency::empty(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.support[i][j] >= threshold {
                    adj.set_edge(i, j, true);
                }
            }
        }
        adj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovedEdge {
    pub i: usize,
    pub j: usize,
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub dag: Dag,
    /// Edges removed, in removal order.
    pub removed: Vec<RemovedEdge>,
}

/// Thresholds `support` at `threshold`, then repeatedly deletes the
/// lowest-support edge among those lying on any directed cycle until the
/// graph is acyclic. Ties go to the lexicographically smallest `(i, j)`.
pub fn project_dag(support: &SupportGraph, threshold: f64) -> Projection {
    project_adjacency(support.threshold(threshold), support)
}

/// Same as [`project_dag`] for an already thresholded edge set.
pub fn project_adjacency(mut adj: Adjacency, support: &SupportGraph) -> Projection {
    let mut removed = Vec::new();
    loop {
        let reach = adj.reachability();
        // (u, v) lies on a cycle iff v reaches u.
        let victim = adj
            .edge_list()
            .into_iter()
            .filter(|&(u, v)| reach[v][u])
            .min_by(|&(a, b), &(c, d)| support.get(a, b).total_cmp(&support.get(c, d)).then((a, b).cmp(&(c, d))));
        match victim {
            None => break,
            Some((i, j)) => {
                adj.set_edge(i, j, false);
                removed.push(RemovedEdge { i, j, support: support.get(i, j) });
            }
        }
    }
    Projection { dag: Dag::new(adj).expect("no edge lies on a cycle"), removed }
}

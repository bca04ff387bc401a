//! Binary adjacency matrices and the acyclic [`Dag`] wrapper.
//!
//! Entry `(i, j) = 1` means a directed edge `i -> j`. Matrices are kept as
//! nested rows so that the JSON form `{"n": .., "edges": [[0, 1], ..]}` maps
//! one-to-one onto the in-memory layout.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("adjacency matrix has {rows} rows but n = {n}")]
    RowCount { n: usize, rows: usize },
    #[error("row {row} has {len} entries but n = {n}")]
    RowLength { n: usize, row: usize, len: usize },
    #[error("entry ({i}, {j}) = {value} is not binary")]
    NonBinary { i: usize, j: usize, value: u8 },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("shape mismatch: {left} vs {right} nodes")]
    ShapeMismatch { left: usize, right: usize },
}

/// Directed graph over `n` labelled nodes, possibly cyclic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAdjacency")]
pub struct Adjacency {
    n: usize,
    edges: Vec<Vec<u8>>,
}

#[derive(Deserialize)]
struct RawAdjacency {
    n: usize,
    edges: Vec<Vec<u8>>,
}

impl TryFrom<RawAdjacency> for Adjacency {
    type Error = GraphError;

    fn try_from(raw: RawAdjacency) -> Result<Self, Self::Error> {
        let adj = Adjacency::from_rows(raw.edges)?;
        if adj.n != raw.n {
            return Err(GraphError::RowCount { n: raw.n, rows: adj.n });
        }
        Ok(adj)
    }
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Adjacency { n, edges: vec![vec![0; n]; n] }
    }

    /// Builds a matrix from rows, validating squareness, binary entries and
    /// the zero diagonal.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self, GraphError> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::RowLength { n, row: i, len: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(GraphError::NonBinary { i, j, value: v });
                }
                if i == j && v == 1 {
                    return Err(GraphError::SelfLoop(i));
                }
            }
        }
        Ok(Adjacency { n, edges: rows })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adj = Adjacency::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::RowCount { n, rows: i.max(j) + 1 });
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            adj.edges[i][j] = 1;
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges[i][j] == 1
    }

    /// Sets or clears `i -> j`. Self-loops are ignored.
    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        if i != j {
            self.edges[i][j] = u8::from(present);
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(|r| r.iter().filter(|&&v| v == 1).count()).sum()
    }

    /// Edges in row-major (lexicographic) order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.edges[i][j] == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.edges[i][j] == 1).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.edges[i][j] == 1).collect()
    }

    pub fn in_degree(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.edges[i][j] == 1).count()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.edges[i].iter().filter(|&&v| v == 1).count()
    }

    /// Kahn's algorithm; `None` when a directed cycle exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = (0..self.n).map(|j| self.in_degree(j)).collect();
        let mut ready: Vec<usize> = (0..self.n).filter(|&j| indeg[j] == 0).rev().collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(u) = ready.pop() {
            order.push(u);
            for v in (0..self.n).rev() {
                if self.edges[u][v] == 1 {
                    indeg[v] -= 1;
                    if indeg[v] == 0 {
                        ready.push(v);
                    }
                }
            }
        }
        (order.len() == self.n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// `reach[u][v]` is true when a directed path of length >= 1 leads from
    /// `u` to `v`.
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.n;
        let mut reach = vec![vec![false; n]; n];
        for (start, row) in reach.iter_mut().enumerate() {
            let mut stack: Vec<usize> = self.children(start);
            while let Some(v) = stack.pop() {
                if !row[v] {
                    row[v] = true;
                    stack.extend(self.children(v));
                }
            }
        }
        reach
    }

    pub fn ensure_same_shape(&self, other: &Adjacency) -> Result<(), GraphError> {
        if self.n != other.n {
            return Err(GraphError::ShapeMismatch { left: self.n, right: other.n });
        }
        Ok(())
    }

    /// Rows rendered as strings of `0`/`1` digits joined by newlines, the
    /// layout used inside prompts.
    pub fn to_digit_rows(&self) -> String {
        self.edges
            .iter()
            .map(|row| row.iter().map(|v| char::from(b'0' + v)).collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for Adjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_digit_rows())
    }
}

/// An [`Adjacency`] known to be acyclic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Adjacency", into = "Adjacency")]
pub struct Dag(Adjacency);

impl Dag {
    pub fn empty(n: usize) -> Self {
        Dag(Adjacency::empty(n))
    }

    pub fn new(adj: Adjacency) -> Result<Self, GraphError> {
        if adj.is_acyclic() {
            Ok(Dag(adj))
        } else {
            Err(GraphError::Cyclic)
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Dag::new(Adjacency::from_edges(n, edges)?)
    }

    pub fn as_adjacency(&self) -> &Adjacency {
        &self.0
    }

    pub fn into_adjacency(self) -> Adjacency {
        self.0
    }
}

impl Deref for Dag {
    type Target = Adjacency;

    fn deref(&self) -> &Adjacency {
        &self.0
    }
}

impl TryFrom<Adjacency> for Dag {
    type Error = GraphError;

    fn try_from(adj: Adjacency) -> Result<Self, GraphError> {
        Dag::new(adj)
    }
}

impl From<Dag> for Adjacency {
    fn from(dag: Dag) -> Adjacency {
        dag.0
    }
}

impl AsRef<Adjacency> for Dag {
    fn as_ref(&self) -> &Adjacency {
        &self.0
    }
}

impl AsRef<Adjacency> for Adjacency {
    fn as_ref(&self) -> &Adjacency {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_layout() {
        let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let s = serde_json::to_string(&dag).unwrap();
        assert_eq!(s, r#"{"n":2,"edges":[[0,1],[0,0]]}"#);
        let back: Dag = serde_json::from_str(&s).unwrap();
        assert_eq!(back, dag);
    }

    #[test]
    fn rejects_cycle_on_deserialize() {
        let err = serde_json::from_str::<Dag>(r#"{"n":2,"edges":[[0,1],[1,0]]}"#);
        assert!(err.is_err());
        let adj: Adjacency = serde_json::from_str(r#"{"n":2,"edges":[[0,1],[1,0]]}"#).unwrap();
        assert!(!adj.is_acyclic());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(Adjacency::from_rows(vec![vec![0, 1, 0], vec![0, 0]]), Err(GraphError::RowLength { .. })));
        assert!(matches!(Adjacency::from_rows(vec![vec![1]]), Err(GraphError::SelfLoop(0))));
        assert!(matches!(Adjacency::from_rows(vec![vec![0, 2], vec![0, 0]]), Err(GraphError::NonBinary { .. })));
        assert!(serde_json::from_str::<Adjacency>(r#"{"n":3,"edges":[[0,1],[0,0]]}"#).is_err());
    }

    #[test]
    fn digit_rows() {
        let adj = Adjacency::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(adj.to_digit_rows(), "01\n00");
    }

    #[test]
    fn reachability_chain() {
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let r = adj.reachability();
        assert!(r[0][2] && r[0][1] && r[1][2]);
        assert!(!r[2][0] && !r[0][0]);
    }
}

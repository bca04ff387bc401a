//! Parameterised random DAG generation with degree caps and motif injection.
//!
//! Sampling proceeds in two stages. Base edges are drawn Erdős–Rényi style
//! over a uniformly random topological order: each order-respecting pair is
//! included with probability `p`, and an inclusion is rejected when it would
//! push the parent's out-degree past `max_children` or the child's in-degree
//! past `max_parents`. Motifs are then injected in a fixed sequence
//! (confounders, colliders, mediator chains), each with a bounded number of
//! placement attempts. Injection only adds order-respecting edges, so the
//! output is acyclic by construction.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Adjacency, Dag};
use crate::rng;

/// Placement attempts per requested motif before the shortfall is recorded.
pub const MOTIF_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("invalid graph spec: {0}")]
    InvalidSpec(String),
}

/// Control parameters for one sampled graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub n: usize,
    pub p: f64,
    pub max_parents: usize,
    pub max_children: usize,
    pub gamma_c: f64,
    pub gamma_v: f64,
    pub lambda: usize,
    pub seed: u64,
}

impl GraphSpec {
    /// A spec with no motifs and degree caps at `n - 1`, i.e. plain
    /// order-based Erdős–Rényi sampling.
    pub fn unconstrained(n: usize, p: f64, seed: u64) -> Self {
        GraphSpec {
            n,
            p,
            max_parents: n.saturating_sub(1),
            max_children: n.saturating_sub(1),
            gamma_c: 0.0,
            gamma_v: 0.0,
            lambda: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |msg: String| Err(GenerateError::InvalidSpec(msg));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        // p = 1 is accepted so that complete DAGs can be requested.
        if !(self.p.is_finite() && self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p = {} outside (0, 1]", self.p));
        }
        if self.max_parents > self.n - 1 {
            return bad(format!("max_parents = {} exceeds n - 1 = {}", self.max_parents, self.n - 1));
        }
        if self.max_children > self.n - 1 {
            return bad(format!("max_children = {} exceeds n - 1 = {}", self.max_children, self.n - 1));
        }
        for (name, v) in [("gamma_c", self.gamma_c), ("gamma_v", self.gamma_v)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.lambda > self.n - 2 {
            return bad(format!("lambda = {} exceeds n - 2 = {}", self.lambda, self.n - 2));
        }
        Ok(())
    }

    /// Requested motif counts; ratios are multiplied by `n` and truncated.
    pub fn requested_motifs(&self) -> MotifCounts {
        let count = |gamma: f64| (gamma * self.n as f64 + 1e-9).floor() as usize;
        MotifCounts { confounders: count(self.gamma_c), colliders: count(self.gamma_v), mediator_chains: self.lambda }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifCounts {
    pub confounders: usize,
    pub colliders: usize,
    pub mediator_chains: usize,
}

/// One injected motif, by node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motif {
    /// `cause -> a` and `cause -> b`.
    Confounder { cause: usize, effects: [usize; 2] },
    /// `a -> effect` and `b -> effect`.
    Collider { causes: [usize; 2], effect: usize },
    /// `source -> mediator -> target`.
    MediatorChain { source: usize, mediator: usize, target: usize },
}

impl Motif {
    pub fn edges(&self) -> [(usize, usize); 2] {
        match *self {
            Motif::Confounder { cause, effects } => [(cause, effects[0]), (cause, effects[1])],
            Motif::Collider { causes, effect } => [(causes[0], effect), (causes[1], effect)],
            Motif::MediatorChain { source, mediator, target } => [(source, mediator), (mediator, target)],
        }
    }

    /// Whether the motif's pattern is present in `adj`.
    pub fn is_present_in(&self, adj: &Adjacency) -> bool {
        self.edges().iter().all(|&(i, j)| adj.has_edge(i, j))
    }
}

/// What the injection stage managed to place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifReport {
    pub requested: MotifCounts,
    pub injected: MotifCounts,
    /// Edges present after base sampling.
    pub base_edges: usize,
    /// Edges added by motif injection.
    pub injected_edges: usize,
    pub motifs: Vec<Motif>,
}

#[derive(Clone, Copy)]
enum MotifKind {
    Confounder,
    Collider,
    MediatorChain,
}

struct Builder<'a> {
    spec: &'a GraphSpec,
    adj: Adjacency,
    order: Vec<usize>,
}

impl Builder<'_> {
    fn can_add(&self, edges: &[(usize, usize)]) -> bool {
        let n = self.spec.n;
        let mut extra_out = vec![0usize; n];
        let mut extra_in = vec![0usize; n];
        for &(i, j) in edges {
            if !self.adj.has_edge(i, j) {
                extra_out[i] += 1;
                extra_in[j] += 1;
            }
        }
        (0..n).all(|v| {
            self.adj.out_degree(v) + extra_out[v] <= self.spec.max_children
                && self.adj.in_degree(v) + extra_in[v] <= self.spec.max_parents
        })
    }

    fn inject(&mut self, kind: MotifKind, rng: &mut ChaCha8Rng) -> Option<(Motif, usize)> {
        let n = self.spec.n;
        if n < 3 {
            return None;
        }
        for _ in 0..MOTIF_ATTEMPTS {
            let mut pos = rand::seq::index::sample(rng, n, 3).into_vec();
            pos.sort_unstable();
            let [x, y, z] = [self.order[pos[0]], self.order[pos[1]], self.order[pos[2]]];
            let motif = match kind {
                MotifKind::Confounder => Motif::Confounder { cause: x, effects: [y, z] },
                MotifKind::Collider => Motif::Collider { causes: [x, y], effect: z },
                MotifKind::MediatorChain => Motif::MediatorChain { source: x, mediator: y, target: z },
            };
            let edges = motif.edges();
            let missing = edges.iter().filter(|&&(i, j)| !self.adj.has_edge(i, j)).count();
            if missing == 0 || !self.can_add(&edges) {
                continue;
            }
            for (i, j) in edges {
                self.adj.set_edge(i, j, true);
            }
            return Some((motif, missing));
        }
        None
    }
}

/// Samples a DAG for `spec`. Identical specs (seed included) yield identical
/// matrices on every platform.
pub fn sample_dag(spec: &GraphSpec) -> Result<(Dag, MotifReport), GenerateError> {
    spec.validate()?;
    let n = spec.n;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(spec.seed, rng::STREAM_ORDER));

    let mut b = Builder { spec, adj: Adjacency::empty(n), order };

    let mut edge_rng = rng::stream(spec.seed, rng::STREAM_BASE_EDGES);
    for a in 0..n {
        for c in (a + 1)..n {
            let (u, v) = (b.order[a], b.order[c]);
            // The coin is always drawn so cap rejections do not shift later draws.
            let include = edge_rng.gen::<f64>() < spec.p;
            if include && b.adj.out_degree(u) < spec.max_children && b.adj.in_degree(v) < spec.max_parents {
                b.adj.set_edge(u, v, true);
            }
        }
    }
    let base_edges = b.adj.edge_count();

    let requested = spec.requested_motifs();
    let mut injected = MotifCounts::default();
    let mut motifs = Vec::new();
    let mut injected_edges = 0;
    let plan = [
        (MotifKind::Confounder, requested.confounders, rng::STREAM_CONFOUNDERS),
        (MotifKind::Collider, requested.colliders, rng::STREAM_COLLIDERS),
        (MotifKind::MediatorChain, requested.mediator_chains, rng::STREAM_MEDIATORS),
    ];
    for (kind, count, stream_id) in plan {
        let mut motif_rng = rng::stream(spec.seed, stream_id);
        for _ in 0..count {
            if let Some((motif, added)) = b.inject(kind, &mut motif_rng) {
                injected_edges += added;
                motifs.push(motif);
                match kind {
                    MotifKind::Confounder => injected.confounders += 1,
                    MotifKind::Collider => injected.colliders += 1,
                    MotifKind::MediatorChain => injected.mediator_chains += 1,
                }
            }
        }
    }

    let dag = Dag::new(b.adj).expect("order-respecting edges cannot form a cycle");
    Ok((dag, MotifReport { requested, injected, base_edges, injected_edges, motifs }))
}

/// Draws a spec from the main sampling distributions for a fixed `n`:
/// `p ~ U(0.05, 0.80)`, degree caps `~ U{1..n-1}`, motif ratios
/// `~ U(0, 0.80)`, `lambda ~ U{0..n-2}`.
pub fn sample_spec_space(n: usize, seed: u64) -> Result<GraphSpec, GenerateError> {
    if !(3..=10).contains(&n) {
        return Err(GenerateError::InvalidSpec(format!("n = {n} outside 3..=10")));
    }
    let mut r = rng::stream(seed, rng::STREAM_SPEC);
    Ok(GraphSpec {
        n,
        p: r.gen_range(0.05..0.80),
        max_parents: r.gen_range(1..=n - 1),
        max_children: r.gen_range(1..=n - 1),
        gamma_c: r.gen_range(0.0..0.80),
        gamma_v: r.gen_range(0.0..0.80),
        lambda: r.gen_range(0..=n - 2),
        seed,
    })
}

/// Fraction of the `n(n-1)/2` possible DAG edges that are present.
pub fn density(adj: &Adjacency) -> f64 {
    let n = adj.n();
    if n < 2 {
        return 0.0;
    }
    adj.edge_count() as f64 / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, p: f64) -> GraphSpec {
        GraphSpec::unconstrained(n, p, 1)
    }

    #[test]
    fn complete_dag_at_p_one() {
        // Every pair of a 3-node order is order-respecting exactly once.
        let (dag, report) = sample_dag(&GraphSpec { max_parents: 2, max_children: 2, ..spec(3, 1.0) }).unwrap();
        assert_eq!(dag.edge_count(), 3);
        assert_eq!(report.base_edges, 3);
    }

    #[test]
    fn no_motifs_requested() {
        let (_, report) = sample_dag(&spec(5, 0.4)).unwrap();
        assert_eq!(report.requested, MotifCounts::default());
        assert_eq!(report.injected, MotifCounts::default());
        assert_eq!(report.injected_edges, 0);
    }

    #[test]
    fn deterministic_for_seed() {
        let s = GraphSpec {
            seed: 42,
            gamma_c: 0.4,
            gamma_v: 0.4,
            lambda: 2,
            max_parents: 3,
            max_children: 3,
            ..spec(7, 0.3)
        };
        let a = sample_dag(&s).unwrap();
        let b = sample_dag(&s).unwrap();
        assert_eq!(serde_json::to_string(&a.0).unwrap(), serde_json::to_string(&b.0).unwrap());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn invalid_specs() {
        assert!(sample_dag(&spec(1, 0.5)).is_err());
        assert!(sample_dag(&spec(4, 0.0)).is_err());
        assert!(sample_dag(&spec(4, 1.5)).is_err());
        assert!(sample_dag(&GraphSpec { max_parents: 4, ..spec(4, 0.5) }).is_err());
        assert!(sample_dag(&GraphSpec { lambda: 3, ..spec(4, 0.5) }).is_err());
        assert!(sample_dag(&GraphSpec { gamma_v: 1.2, ..spec(4, 0.5) }).is_err());
        assert!(sample_dag(&GraphSpec { gamma_c: f64::NAN, ..spec(4, 0.5) }).is_err());
    }

    #[test]
    fn rounding_truncates() {
        let s = GraphSpec { gamma_c: 0.39, gamma_v: 0.8, ..spec(5, 0.5) };
        let r = s.requested_motifs();
        assert_eq!(r.confounders, 1);
        assert_eq!(r.colliders, 4);
        let s = GraphSpec { gamma_c: 0.3, ..spec(10, 0.5) };
        assert_eq!(s.requested_motifs().confounders, 3);
    }

    #[test]
    fn zero_caps_block_everything() {
        let s = GraphSpec { max_parents: 0, max_children: 0, gamma_c: 1.0, gamma_v: 1.0, lambda: 3, ..spec(5, 0.9) };
        let (dag, report) = sample_dag(&s).unwrap();
        assert_eq!(dag.edge_count(), 0);
        assert_eq!(report.injected, MotifCounts::default());
        assert_eq!(report.requested.confounders, 5);
    }

    #[test]
    fn spec_space_ranges() {
        for seed in 0..200 {
            let s = sample_spec_space(3, seed).unwrap();
            assert!(s.lambda <= 1);
            assert!((1..=2).contains(&s.max_parents));
            assert!((1..=2).contains(&s.max_children));
            assert!((0.05..0.80).contains(&s.p));
            assert!((0.0..0.80).contains(&s.gamma_c));
            s.validate().unwrap();
        }
        assert_eq!(sample_spec_space(6, 11).unwrap(), sample_spec_space(6, 11).unwrap());
        assert!(sample_spec_space(2, 0).is_err());
        assert!(sample_spec_space(11, 0).is_err());
    }

    #[test]
    fn motif_patterns_present() {
        for seed in 0..300 {
            let s = sample_spec_space(3 + (seed as usize % 8), seed).unwrap();
            let (dag, report) = sample_dag(&s).unwrap();
            assert_eq!(
                report.motifs.len(),
                report.injected.confounders + report.injected.colliders + report.injected.mediator_chains
            );
            assert!(report.injected.confounders <= report.requested.confounders);
            assert!(report.injected.colliders <= report.requested.colliders);
            assert!(report.injected.mediator_chains <= report.requested.mediator_chains);
            assert_eq!(dag.edge_count(), report.base_edges + report.injected_edges);
            for m in &report.motifs {
                assert!(m.is_present_in(&dag));
            }
        }
    }
}

//! Graph primitives, synthetic DAG generation, structural metrics and the
//! statistics used to compare causal-discovery scores across corpora.

pub mod generate;
pub mod graph;
pub mod metrics;
pub mod projection;
pub mod rng;
pub mod stats;

pub use generate::{sample_dag, sample_spec_space, GenerateError, GraphSpec, Motif, MotifCounts, MotifReport};
pub use graph::{Adjacency, Dag, GraphError};
pub use metrics::{
    decompose_errors, edge_prf, evaluate, shd, sid, EdgeScores, ErrorDecomposition, MetricError, MetricReport,
};
pub use projection::{project_adjacency, project_dag, Projection, RemovedEdge, SupportError, SupportGraph};

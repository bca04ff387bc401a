//! Graph files: one pretty-printed JSON document per generated DAG.

use std::path::{Path, PathBuf};

use causaltext_core::{Dag, GraphSpec, MotifReport};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub spec: GraphSpec,
    pub dag: Dag,
    pub motifs: MotifReport,
}

/// `n05-0042` for the 43rd graph with five nodes.
pub fn graph_id(n: usize, index: usize) -> String {
    format!("n{n:02}-{index:04}")
}

pub fn graph_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

/// Every `*.json` graph file in `dir`, ordered by node count then id.
pub fn load_graphs(dir: &Path) -> Result<Vec<GraphRecord>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            paths.push(path);
        }
    }
    let mut graphs = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let g: GraphRecord =
            serde_json::from_str(&text).map_err(|e| CliError::parse(&path, e.line() as u64, e.to_string()))?;
        if g.dag.n() != g.spec.n {
            return Err(CliError::parse(&path, 1, format!("dag has {} nodes, spec says {}", g.dag.n(), g.spec.n)));
        }
        graphs.push(g);
    }
    graphs.sort_by(|a, b| (a.spec.n, &a.id).cmp(&(b.spec.n, &b.id)));
    if let Some(w) = graphs.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(CliError::InvalidConfig(format!("duplicate graph id {:?} in {}", w[0].id, dir.display())));
    }
    Ok(graphs)
}

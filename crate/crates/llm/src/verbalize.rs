//! Paragraph generation, the text-identifiability revision loop, concept
//! extraction from free text and causal discovery from text.

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use causaltext_core::{shd, Adjacency, Dag, GraphError, MetricError};

use crate::assignment::{normalize_concept, ConceptAssignment};
use crate::gateway::{CallContext, Gateway, GatewayError};
use crate::profile::Role;
use crate::template::{
    bindings, concept_list_binding, matrix_binding, CONCEPT_EXTRACTION, CONCEPT_EXTRACTION_RETRY, GEN_ID_REVISION,
    KEY_ADJACENCY, KEY_DESCRIPTION, KEY_EXTRACTED, LLM_CAUSAL_DISCOVERY, PHASE3_COVERAGE_REVISION, PHASE3_VERBALIZE,
};

pub const DEFAULT_K_GEN: u32 = 3;
pub const MIN_EXTRACTED: usize = 3;
pub const MAX_EXTRACTED: usize = 10;

#[derive(Debug, Error)]
pub enum VerbalizeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("paragraph does not mention {missing:?}")]
    CoverageViolation { missing: Vec<String>, text: String },
    #[error("extraction produced {count} usable concepts, expected {MIN_EXTRACTED}..={MAX_EXTRACTED}")]
    ExtractionFailed { count: usize, concepts: Vec<String> },
    #[error("adjacency reply is {rows}x{cols}, expected {expected}x{expected}")]
    ShapeMismatch { expected: usize, rows: usize, cols: usize },
    #[error("adjacency entry ({i}, {j}) is not 0 or 1")]
    NonBinary { i: usize, j: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub text: String,
    pub source_concepts: Vec<String>,
}

/// Text normalized like concepts, without dropping articles.
fn normalize_text(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case-insensitive containment after normalization, accepting a plural
/// `s`/`es` on either side.
pub fn mentions(text: &str, concept: &str) -> bool {
    let text = normalize_text(text);
    let c = normalize_concept(concept);
    if c.is_empty() {
        return false;
    }
    let mut variants = vec![c.clone(), format!("{c}s"), format!("{c}es")];
    if let Some(stem) = c.strip_suffix("es") {
        variants.push(stem.to_string());
    }
    if let Some(stem) = c.strip_suffix('s') {
        variants.push(stem.to_string());
    }
    variants.iter().any(|v| !v.is_empty() && text.contains(v.as_str()))
}

pub fn missing_concepts(text: &str, concepts: &[String]) -> Vec<String> {
    concepts.iter().filter(|c| !mentions(text, c)).cloned().collect()
}

fn description(value: &serde_json::Map<String, Value>) -> Result<String, VerbalizeError> {
    value
        .get(KEY_DESCRIPTION)
        .and_then(Value::as_str)
        .map(|s| s.trim().to_string())
        .ok_or_else(|| VerbalizeError::Malformed(format!("{KEY_DESCRIPTION:?} is not a string")))
}

/// Single-shot verbalization with one coverage re-ask.
pub fn generate_text(
    dag: &Dag,
    assignment: &ConceptAssignment,
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<Paragraph, VerbalizeError> {
    let n = dag.n();
    if n < 2 {
        return Err(VerbalizeError::Precondition(format!("generation needs at least 2 nodes, got {n}")));
    }
    if assignment.len() != n {
        return Err(VerbalizeError::Precondition(format!("{} concepts for {n} nodes", assignment.len())));
    }
    let concepts = assignment.concepts().to_vec();
    let list = concept_list_binding(&concepts);
    let matrix = matrix_binding(dag);
    let reply = gateway.complete_json(
        Role::Phase3,
        PHASE3_VERBALIZE,
        &bindings([("Concepts", list.clone()), ("AdjacencyMatrix", matrix.clone())]),
        ctx,
    )?;
    let mut text = description(&reply.value)?;
    let mut missing = missing_concepts(&text, &concepts);
    if !missing.is_empty() {
        debug!("paragraph misses {missing:?}; asking for a revision");
        let reply = gateway.complete_json(
            Role::Phase3,
            PHASE3_COVERAGE_REVISION,
            &bindings([
                ("Concepts", list),
                ("AdjacencyMatrix", matrix),
                ("Text", text),
                ("Missing", missing.join("\n")),
            ]),
            ctx,
        )?;
        text = description(&reply.value)?;
        missing = missing_concepts(&text, &concepts);
        if !missing.is_empty() {
            return Err(VerbalizeError::CoverageViolation { missing, text });
        }
    }
    Ok(Paragraph { text, source_concepts: concepts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenIdConfig {
    pub k_gen: u32,
}

impl Default for GenIdConfig {
    fn default() -> Self {
        GenIdConfig { k_gen: DEFAULT_K_GEN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenIdStep {
    /// 0 for the input paragraph, then one per revision.
    pub revision: u32,
    pub text: String,
    pub extracted: Adjacency,
    pub missed: Vec<(usize, usize)>,
    pub spurious: Vec<(usize, usize)>,
    pub mismatch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenIdResult {
    pub paragraph: Paragraph,
    pub mismatch: Option<usize>,
    pub revisions: u32,
    pub extractions: u32,
    pub trace: Vec<GenIdStep>,
}

#[derive(Debug, Error)]
#[error("{source} (after {} recorded step(s))", trace.len())]
pub struct GenIdError {
    #[source]
    pub source: VerbalizeError,
    pub trace: Vec<GenIdStep>,
}

fn diagnose(target: &Adjacency, extracted: Adjacency, text: &str, revision: u32) -> Result<GenIdStep, VerbalizeError> {
    let mismatch = shd(target, &extracted)?;
    let n = target.n();
    let mut missed = Vec::new();
    let mut spurious = Vec::new();
    for i in 0..n {
        for j in 0..n {
            match (target.has_edge(i, j), extracted.has_edge(i, j)) {
                (true, false) => missed.push((i, j)),
                (false, true) => spurious.push((i, j)),
                _ => {}
            }
        }
    }
    Ok(GenIdStep { revision, text: text.to_string(), extracted, missed, spurious, mismatch })
}

fn pair_lines(pairs: &[(usize, usize)], concepts: &[String]) -> String {
    if pairs.is_empty() {
        return "(none)".into();
    }
    pairs.iter().map(|&(i, j)| format!("{} → {}", concepts[i], concepts[j])).collect::<Vec<_>>().join("\n")
}

/// Extract, diagnose and revise until the SHD between the extracted and
/// target graph stops decreasing, reaches 0, or `k_gen` revisions are
/// spent. Returns the lowest-mismatch paragraph seen.
pub fn gen_id_refine(
    dag: &Dag,
    assignment: &ConceptAssignment,
    paragraph: &Paragraph,
    config: GenIdConfig,
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<GenIdResult, GenIdError> {
    let mut trace = Vec::new();
    if config.k_gen == 0 {
        return Ok(GenIdResult { paragraph: paragraph.clone(), mismatch: None, revisions: 0, extractions: 0, trace });
    }
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => return Err(GenIdError { source: e.into(), trace }),
            }
        };
    }
    let concepts = assignment.concepts().to_vec();
    let extract = |text: &str| llm_causal_discovery(text, &concepts, gateway, ctx).map(|d| d.adjacency);
    let extracted = attempt!(extract(&paragraph.text));
    let step = attempt!(diagnose(dag, extracted, &paragraph.text, 0));
    let mut best = (paragraph.text.clone(), step.mismatch);
    let mut current = step.clone();
    trace.push(step);
    let mut revisions = 0;
    while best.1 > 0 && revisions < config.k_gen {
        let reply = attempt!(gateway
            .complete_json(
                Role::Phase3,
                GEN_ID_REVISION,
                &bindings([
                    ("Concepts", concept_list_binding(&concepts)),
                    ("AdjacencyMatrix", matrix_binding(dag)),
                    ("Text", current.text.clone()),
                    ("Missed", pair_lines(&current.missed, &concepts)),
                    ("Spurious", pair_lines(&current.spurious, &concepts)),
                ]),
                ctx,
            )
            .map_err(VerbalizeError::from));
        revisions += 1;
        let text = attempt!(description(&reply.value));
        let missing = missing_concepts(&text, &concepts);
        if !missing.is_empty() {
            debug!("revision {revisions} drops {missing:?}; keeping the previous paragraph");
            break;
        }
        let extracted = attempt!(extract(&text));
        let step = attempt!(diagnose(dag, extracted, &text, revisions));
        let improved = step.mismatch < best.1;
        trace.push(step.clone());
        if !improved {
            break;
        }
        best = (text, step.mismatch);
        current = step;
    }
    let extractions = trace.len() as u32;
    Ok(GenIdResult {
        paragraph: Paragraph { text: best.0, source_concepts: concepts },
        mismatch: Some(best.1),
        revisions,
        extractions,
        trace,
    })
}

/// Deduplicates by normalized form, drops empty and absent concepts.
pub fn clean_extracted(raw: &[String], text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    raw.iter()
        .map(|c| c.trim().to_string())
        .filter(|c| !normalize_concept(c).is_empty() && mentions(text, c))
        .filter(|c| seen.insert(normalize_concept(c)))
        .collect()
}

fn string_list(value: &serde_json::Map<String, Value>, key: &str) -> Result<Vec<String>, VerbalizeError> {
    value
        .get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .ok_or_else(|| VerbalizeError::Malformed(format!("{key:?} is not a list")))
}

/// Concepts named in a free text, 3 to 10 after cleaning, with one re-ask.
pub fn extract_concepts(text: &str, gateway: &Gateway, ctx: CallContext<'_>) -> Result<Vec<String>, VerbalizeError> {
    if text.trim().is_empty() {
        return Err(VerbalizeError::Precondition("empty text".into()));
    }
    let in_range = |c: &[String]| (MIN_EXTRACTED..=MAX_EXTRACTED).contains(&c.len());
    let reply = gateway.complete_json(Role::Discovery, CONCEPT_EXTRACTION, &bindings([("Text", text)]), ctx)?;
    let raw = string_list(&reply.value, KEY_EXTRACTED)?;
    let first = clean_extracted(&raw, text);
    if raw.len() <= MAX_EXTRACTED && in_range(&first) {
        return Ok(first);
    }
    debug!("extraction returned {} raw / {} usable concepts; asking again", raw.len(), first.len());
    let previous = if raw.is_empty() { "(none)".to_string() } else { raw.join("\n") };
    let reply = gateway.complete_json(
        Role::Discovery,
        CONCEPT_EXTRACTION_RETRY,
        &bindings([("Text", text.to_string()), ("Count", first.len().to_string()), ("Previous", previous)]),
        ctx,
    )?;
    let second = clean_extracted(&string_list(&reply.value, KEY_EXTRACTED)?, text);
    if in_range(&second) {
        Ok(second)
    } else {
        Err(VerbalizeError::ExtractionFailed { count: second.len(), concepts: second })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    /// May contain cycles.
    pub adjacency: Adjacency,
    pub clamped_diagonal: Vec<usize>,
    pub raw: String,
}

fn cell(v: &Value) -> Option<u8> {
    match v {
        Value::Number(x) => x.as_u64().filter(|&x| x <= 1).map(|x| x as u8),
        Value::Bool(b) => Some(*b as u8),
        Value::String(s) => match s.trim() {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        },
        _ => None,
    }
}

/// Reads a matrix given as nested arrays, digit strings per row, or one
/// newline-separated digit string.
pub fn parse_matrix(value: &Value, n: usize) -> Result<Vec<Vec<u8>>, VerbalizeError> {
    let rows: Vec<Vec<Option<u8>>> = match value {
        Value::Array(rows) => rows
            .iter()
            .map(|r| match r {
                Value::Array(cells) => Ok(cells.iter().map(cell).collect()),
                Value::String(s) => Ok(s.chars().filter(|c| !c.is_whitespace() && *c != ',').map(digit).collect()),
                _ => Err(VerbalizeError::Malformed("matrix rows must be arrays or strings".into())),
            })
            .collect::<Result<_, _>>()?,
        Value::String(s) => s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.chars().filter(|c| !c.is_whitespace() && *c != ',').map(digit).collect())
            .collect(),
        _ => return Err(VerbalizeError::Malformed(format!("{KEY_ADJACENCY:?} is not a matrix"))),
    };
    let cols = rows.iter().map(Vec::len).find(|&len| len != n).unwrap_or(n);
    if rows.len() != n || cols != n {
        return Err(VerbalizeError::ShapeMismatch { expected: n, rows: rows.len(), cols });
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| r.into_iter().enumerate().map(|(j, v)| v.ok_or(VerbalizeError::NonBinary { i, j })).collect())
        .collect()
}

fn digit(c: char) -> Option<u8> {
    match c {
        '0' => Some(0),
        '1' => Some(1),
        _ => None,
    }
}

/// Direct causal relations among `concepts` as read from `text`.
pub fn llm_causal_discovery(
    text: &str,
    concepts: &[String],
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<Discovery, VerbalizeError> {
    let n = concepts.len();
    let reply = gateway.complete_json(
        Role::Discovery,
        LLM_CAUSAL_DISCOVERY,
        &bindings([("Text", text.to_string()), ("ImportantConcepts", concept_list_binding(concepts))]),
        ctx,
    )?;
    let mut rows = parse_matrix(&reply.value[KEY_ADJACENCY], n)?;
    let mut clamped = Vec::new();
    for (k, row) in rows.iter_mut().enumerate() {
        if row[k] == 1 {
            row[k] = 0;
            clamped.push(k);
        }
    }
    if !clamped.is_empty() {
        warn!("discovery reply marks self-loops at {clamped:?}; cleared");
    }
    Ok(Discovery { adjacency: Adjacency::from_rows(rows)?, clamped_diagonal: clamped, raw: reply.raw })
}

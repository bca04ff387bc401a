//! Concept assignment: propose concepts for a DAG, verify every ordered
//! pair counterfactually, score the mismatch and refine until clean.

use std::collections::BTreeMap;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use causaltext_core::{Adjacency, Dag};

use crate::backend::TokenUsage;
use crate::cache::CacheKey;
use crate::gateway::{CallContext, Gateway, GatewayError};
use crate::profile::Role;
use crate::template::{
    assignment_binding, bindings, concept_list_binding, matrix_binding, KEY_CONCEPTS, KEY_VERDICT, PHASE2_ASSIGN,
    PHASE2_REFINE, PHASE2_SCHEMA_REVISION, PHASE2_VERIFY,
};

pub const DEFAULT_M: usize = 5;
pub const DEFAULT_TAU: f64 = 0.6;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_K_MAX: u32 = 10;
/// Valid completions required per pair, capped at `m`.
pub const DEFAULT_MIN_VALID: usize = 3;

const DETERMINERS: [&str; 3] = ["a", "an", "the"];

/// Lowercases, removes punctuation, collapses whitespace and drops one
/// leading article.
pub fn normalize_concept(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    if words.len() > 1 && DETERMINERS.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("schema violation: {reason}")]
    SchemaViolation { reason: String, concepts: Vec<String> },
    #[error("malformed assignment: {0}")]
    Malformed(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("pair ({i}, {j}): {valid} valid verifier completions, {needed} needed")]
    Verification { i: usize, j: usize, valid: usize, needed: usize },
}

/// One concept per node; distinct after [`normalize_concept`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptAssignment {
    concepts: Vec<String>,
}

impl ConceptAssignment {
    pub fn new(concepts: Vec<String>, n: usize) -> Result<Self, AssignmentError> {
        let violation = |reason: String| AssignmentError::SchemaViolation { reason, concepts: concepts.clone() };
        if concepts.len() != n {
            return Err(violation(format!("{} concepts for {n} nodes", concepts.len())));
        }
        if let Some(k) = concepts.iter().position(|c| normalize_concept(c).is_empty()) {
            return Err(violation(format!("node {k} has an empty concept")));
        }
        let dup = overlapping(&concepts);
        if !dup.is_empty() {
            return Err(violation(format!("nodes {dup:?} repeat an earlier concept")));
        }
        Ok(ConceptAssignment { concepts })
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, k: usize) -> &str {
        &self.concepts[k]
    }
}

/// Indices whose normalized concept equals that of an earlier index.
pub fn overlapping(concepts: &[String]) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    concepts.iter().enumerate().filter(|(_, c)| !seen.insert(normalize_concept(c))).map(|(k, _)| k).collect()
}

/// Ordered off-diagonal pairs split into required edges and non-edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSets {
    pub n: usize,
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
}

pub fn analyze_causal_structure(adj: &Adjacency) -> RelationSets {
    let n = adj.n();
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if adj.has_edge(i, j) {
                positive.push((i, j));
            } else {
                negative.push((i, j));
            }
        }
    }
    RelationSets { n, positive, negative }
}

impl RelationSets {
    /// All pairs, required edges first.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positive.iter().chain(&self.negative).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairVotes {
    pub i: usize,
    pub j: usize,
    pub yes: usize,
    pub valid: usize,
}

impl PairVotes {
    /// Fraction of valid completions judging `i` a direct cause of `j`.
    pub fn score(&self) -> f64 {
        if self.valid == 0 {
            0.0
        } else {
            self.yes as f64 / self.valid as f64
        }
    }
}

/// Aggregated verifier judgments `s_ij` for every verified pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTable {
    pub m: usize,
    pub pairs: Vec<PairVotes>,
}

impl VoteTable {
    /// Builds a table from exact scores; `m` is informational.
    pub fn from_scores(m: usize, scores: impl IntoIterator<Item = ((usize, usize), usize, usize)>) -> Self {
        let mut pairs: Vec<PairVotes> =
            scores.into_iter().map(|((i, j), yes, valid)| PairVotes { i, j, yes, valid }).collect();
        pairs.sort_by_key(|p| (p.i, p.j));
        VoteTable { m, pairs }
    }

    pub fn score(&self, i: usize, j: usize) -> Option<f64> {
        self.pairs.binary_search_by_key(&(i, j), |p| (p.i, p.j)).ok().map(|k| self.pairs[k].score())
    }

    fn score_or_zero(&self, (i, j): (usize, usize)) -> f64 {
        self.score(i, j).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub l_b_miss: f64,
    pub l_b_spur: f64,
    pub l_b: f64,
}

/// Missed-edge term over required edges plus `alpha` times the spurious
/// term over non-edges; an empty class contributes 0.
pub fn quantify_mismatch(votes: &VoteTable, relations: &RelationSets, alpha: f64) -> MismatchReport {
    let mean = |pairs: &[(usize, usize)], f: &dyn Fn(f64) -> f64| {
        if pairs.is_empty() {
            0.0
        } else {
            pairs.iter().map(|&p| f(votes.score_or_zero(p))).sum::<f64>() / pairs.len() as f64
        }
    };
    let l_b_miss = mean(&relations.positive, &|s| 1.0 - s);
    let l_b_spur = alpha * mean(&relations.negative, &|s| s);
    MismatchReport { l_b_miss, l_b_spur, l_b: l_b_miss + l_b_spur }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallacySet {
    /// Required edges with `s < tau`.
    pub missed: Vec<(usize, usize)>,
    /// Non-edges with `s >= tau`.
    pub spurious: Vec<(usize, usize)>,
}

impl FallacySet {
    pub fn is_empty(&self) -> bool {
        self.missed.is_empty() && self.spurious.is_empty()
    }

    pub fn len(&self) -> usize {
        self.missed.len() + self.spurious.len()
    }
}

pub fn fallacy_analysis(votes: &VoteTable, relations: &RelationSets, tau: f64) -> FallacySet {
    FallacySet {
        missed: relations.positive.iter().copied().filter(|&p| votes.score_or_zero(p) < tau).collect(),
        spurious: relations.negative.iter().copied().filter(|&p| votes.score_or_zero(p) >= tau).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub m: usize,
    pub tau: f64,
    pub alpha: f64,
    pub k_max: u32,
    pub min_valid: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            m: DEFAULT_M,
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            k_max: DEFAULT_K_MAX,
            min_valid: DEFAULT_MIN_VALID,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), AssignmentError> {
        let bad = |m: &str| Err(AssignmentError::Precondition(m.to_string()));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1");
        }
        Ok(())
    }
}

fn parse_assignment(value: &Map<String, Value>, n: usize) -> Result<Vec<String>, AssignmentError> {
    let malformed = |m: String| AssignmentError::Malformed(m);
    let items = value
        .get(KEY_CONCEPTS)
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(format!("{KEY_CONCEPTS:?} is not a list")))?;
    let mut slots: Vec<Option<String>> = vec![None; n];
    for (pos, item) in items.iter().enumerate() {
        let s = item.as_str().ok_or_else(|| malformed(format!("entry {pos} is not a string")))?.trim();
        let (k, concept) = match s.strip_prefix("Node ").and_then(|r| r.split_once(':')) {
            Some((k, c)) => {
                (k.trim().parse::<usize>().map_err(|_| malformed(format!("bad node label in {s:?}")))?, c.trim())
            }
            None => (pos, s),
        };
        if k >= n {
            return Err(malformed(format!("node {k} out of range for {n} nodes")));
        }
        if slots[k].replace(concept.to_string()).is_some() {
            return Err(malformed(format!("node {k} assigned twice")));
        }
    }
    slots.into_iter().enumerate().map(|(k, c)| c.ok_or_else(|| malformed(format!("node {k} has no concept")))).collect()
}

/// Asks the proposer for concepts; one minimal revision if concepts
/// overlap after normalization.
pub fn initial_assignment(
    dag: &Dag,
    domain: &str,
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<ConceptAssignment, AssignmentError> {
    let n = dag.n();
    let reply = gateway.complete_json(
        Role::Proposer,
        PHASE2_ASSIGN,
        &bindings([("Matrix", matrix_binding(dag)), ("Domain", domain.to_string()), ("N", n.to_string())]),
        ctx,
    )?;
    let concepts = parse_assignment(&reply.value, n)?;
    let dup = overlapping(&concepts);
    if dup.is_empty() {
        return ConceptAssignment::new(concepts, n);
    }
    debug!("revising overlapping concepts at nodes {dup:?}");
    let offending = dup.iter().map(|&k| format!("Node {k}: {}", concepts[k])).collect::<Vec<_>>().join("\n");
    let reply = gateway.complete_json(
        Role::Proposer,
        PHASE2_SCHEMA_REVISION,
        &bindings([
            ("N", n.to_string()),
            ("Domain", domain.to_string()),
            ("Assignment", assignment_binding(&concepts)),
            ("Offending", offending),
        ]),
        ctx,
    )?;
    ConceptAssignment::new(parse_assignment(&reply.value, n)?, n)
}

/// Reads a yes/no verdict; `None` if the reply holds neither.
fn parse_verdict(value: &Map<String, Value>) -> Option<bool> {
    match value.get(KEY_VERDICT)? {
        Value::Bool(b) => Some(*b),
        Value::Number(x) => x.as_u64().filter(|&v| v <= 1).map(|v| v == 1),
        Value::String(s) => {
            let s = s.trim().to_lowercase();
            if s.starts_with("yes") || s == "true" {
                Some(true)
            } else if s.starts_with("no") || s == "false" {
                Some(false)
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Outcome of one verification pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub votes: VoteTable,
    pub cache_hit: bool,
}

/// Queries the verifier `m` times for every ordered pair. Completions that
/// stay unparseable after re-asks are dropped; a pair needs
/// `min(min_valid, m)` valid completions.
pub fn counterfactual_verification(
    assignment: &ConceptAssignment,
    dag: &Adjacency,
    relations: &RelationSets,
    domain: &str,
    config: &LoopConfig,
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<Verification, AssignmentError> {
    if config.m == 0 {
        return Err(AssignmentError::Precondition("m must be at least 1".into()));
    }
    let compute = || -> Result<Value, AssignmentError> {
        let votes = verify_pairs(assignment, relations, domain, config, gateway, ctx)?;
        Ok(serde_json::to_value(votes).expect("vote tables serialize"))
    };
    let (value, cache_hit) = match gateway.cache() {
        Some(cache) => {
            let key = CacheKey::verifier(
                assignment.concepts(),
                dag,
                &gateway.backend_id(Role::Verifier)?,
                &gateway.templates().get(PHASE2_VERIFY).map_err(GatewayError::from)?.body,
                config.m,
            );
            cache.get_or_compute(&key, compute)?
        }
        None => (compute()?, false),
    };
    let votes: VoteTable =
        serde_json::from_value(value).map_err(|e| AssignmentError::Malformed(format!("cached vote table: {e}")))?;
    Ok(Verification { votes, cache_hit })
}

impl From<crate::cache::CacheError> for AssignmentError {
    fn from(e: crate::cache::CacheError) -> Self {
        AssignmentError::Gateway(GatewayError::Cache(e))
    }
}

fn verify_pairs(
    assignment: &ConceptAssignment,
    relations: &RelationSets,
    domain: &str,
    config: &LoopConfig,
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<VoteTable, AssignmentError> {
    let concepts = concept_list_binding(assignment.concepts());
    let jobs: Vec<((usize, usize), u32)> =
        relations.pairs().flat_map(|p| (0..config.m as u32).map(move |c| (p, c))).collect();
    let verdicts: Vec<Result<Option<bool>, GatewayError>> = gateway.install(|| {
        jobs.par_iter()
            .map(|&((i, j), c)| {
                let b = bindings([
                    ("Domain", domain.to_string()),
                    ("Concepts", concepts.clone()),
                    ("Cause", assignment.get(i).to_string()),
                    ("Effect", assignment.get(j).to_string()),
                ]);
                match gateway.complete_json(Role::Verifier, PHASE2_VERIFY, &b, ctx.with_index(c)) {
                    Ok(reply) => Ok(parse_verdict(&reply.value)),
                    Err(GatewayError::MalformedOutput { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let needed = config.min_valid.min(config.m);
    let mut tally: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (&(pair, _), v) in jobs.iter().zip(verdicts) {
        let t = tally.entry(pair).or_default();
        if let Some(yes) = v? {
            t.0 += yes as usize;
            t.1 += 1;
        }
    }
    for (&(i, j), &(_, valid)) in &tally {
        if valid < needed {
            return Err(AssignmentError::Verification { i, j, valid, needed });
        }
    }
    Ok(VoteTable::from_scores(config.m, tally.into_iter().map(|(p, (yes, valid))| (p, yes, valid))))
}

fn pair_lines(pairs: &[(usize, usize)], a: &ConceptAssignment) -> String {
    if pairs.is_empty() {
        return "(none)".into();
    }
    pairs
        .iter()
        .map(|&(i, j)| format!("Node {i} ({}) → Node {j} ({})", a.get(i), a.get(j)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the proposer for a minimal revision addressing `fallacies`.
pub fn refine_assignment(
    assignment: &ConceptAssignment,
    fallacies: &FallacySet,
    dag: &Dag,
    domain: &str,
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<ConceptAssignment, AssignmentError> {
    if fallacies.is_empty() {
        return Err(AssignmentError::Precondition("refinement needs at least one fallacy".into()));
    }
    let n = dag.n();
    let reply = gateway.complete_json(
        Role::Proposer,
        PHASE2_REFINE,
        &bindings([
            ("Matrix", matrix_binding(dag)),
            ("N", n.to_string()),
            ("Domain", domain.to_string()),
            ("Assignment", assignment_binding(assignment.concepts())),
            ("Missed", pair_lines(&fallacies.missed, assignment)),
            ("Spurious", pair_lines(&fallacies.spurious, assignment)),
        ]),
        ctx,
    )?;
    ConceptAssignment::new(parse_assignment(&reply.value, n)?, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: u32,
    pub assignment: ConceptAssignment,
    pub votes: VoteTable,
    pub mismatch: MismatchReport,
    pub fallacies: FallacySet,
    pub cache_hit: bool,
    /// Tokens spent in this iteration, refinement included.
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopOutcome {
    Success,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopResult {
    pub outcome: LoopOutcome,
    pub iterations: u32,
    /// The clean iterate on success, otherwise the lowest-`L_b` iterate.
    pub assignment: ConceptAssignment,
    /// Minimum `L_b` over the trace; the earliest iterate wins ties.
    pub best_l_b: f64,
    pub best_iteration: u32,
    /// `L_b` of the returned assignment.
    pub final_l_b: f64,
    pub initial_usage: TokenUsage,
    pub usage: TokenUsage,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Error)]
#[error("{source} (after {} recorded iteration(s))", trace.len())]
pub struct LoopError {
    #[source]
    pub source: AssignmentError,
    pub trace: Vec<IterationRecord>,
}

fn sample_usage(gateway: &Gateway, ctx: CallContext<'_>) -> TokenUsage {
    match ctx.sample {
        Some(id) => gateway.ledger().sample_usage(id),
        None => gateway.ledger().total(),
    }
}

/// Verify, score, stop if clean, otherwise refine; at most `k_max`
/// verification rounds. The last round is not followed by a refinement.
pub fn run_loop(
    dag: &Dag,
    domain: &str,
    config: &LoopConfig,
    gateway: &Gateway,
    ctx: CallContext<'_>,
) -> Result<LoopResult, LoopError> {
    let mut trace: Vec<IterationRecord> = Vec::new();
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => return Err(LoopError { source: e.into(), trace }),
            }
        };
    }
    attempt!(config.validate());
    let relations = analyze_causal_structure(dag);
    let start = sample_usage(gateway, ctx);
    let mut current = attempt!(initial_assignment(dag, domain, gateway, ctx));
    let initial_usage = usage_since(sample_usage(gateway, ctx), start);
    let mut best: Option<(f64, u32, ConceptAssignment)> = None;
    for k in 1..=config.k_max {
        let before = sample_usage(gateway, ctx);
        let v = attempt!(counterfactual_verification(&current, dag, &relations, domain, config, gateway, ctx));
        let mismatch = quantify_mismatch(&v.votes, &relations, config.alpha);
        let fallacies = fallacy_analysis(&v.votes, &relations, config.tau);
        debug!("iteration {k}: L_b = {:.4}, {} fallacies", mismatch.l_b, fallacies.len());
        if best.as_ref().is_none_or(|(b, _, _)| mismatch.l_b < *b) {
            best = Some((mismatch.l_b, k, current.clone()));
        }
        let done = fallacies.is_empty();
        let next = if done || k == config.k_max {
            None
        } else {
            let refined = refine_assignment(&current, &fallacies, dag, domain, gateway, ctx);
            if refined.is_err() {
                trace.push(IterationRecord {
                    iteration: k,
                    assignment: current.clone(),
                    votes: v.votes.clone(),
                    mismatch,
                    fallacies: fallacies.clone(),
                    cache_hit: v.cache_hit,
                    usage: usage_since(sample_usage(gateway, ctx), before),
                });
            }
            Some(attempt!(refined))
        };
        trace.push(IterationRecord {
            iteration: k,
            assignment: current.clone(),
            votes: v.votes,
            mismatch,
            fallacies,
            cache_hit: v.cache_hit,
            usage: usage_since(sample_usage(gateway, ctx), before),
        });
        if done {
            let (best_l_b, best_iteration, _) = best.expect("at least one iteration");
            info!("converged after {k} iteration(s)");
            return Ok(LoopResult {
                outcome: LoopOutcome::Success,
                iterations: k,
                assignment: current,
                best_l_b,
                best_iteration,
                final_l_b: mismatch.l_b,
                initial_usage,
                usage: usage_since(sample_usage(gateway, ctx), start),
                trace,
            });
        }
        if let Some(n) = next {
            current = n;
        }
    }
    let (best_l_b, best_iteration, assignment) = best.expect("k_max >= 1");
    Ok(LoopResult {
        outcome: LoopOutcome::Fail,
        iterations: config.k_max,
        assignment,
        best_l_b,
        best_iteration,
        final_l_b: best_l_b,
        initial_usage,
        usage: usage_since(sample_usage(gateway, ctx), start),
        trace,
    })
}

fn usage_since(now: TokenUsage, then: TokenUsage) -> TokenUsage {
    TokenUsage { input: now.input - then.input, output: now.output - then.output }
}

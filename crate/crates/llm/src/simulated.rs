//! A self-consistent offline world that answers every built-in template.
//!
//! The proposer picks distinct concepts from a fixed vocabulary and records
//! the target matrix for that concept list; the verifier answers from the
//! recorded matrix; paragraphs state each edge as "`A` shapes `B`." and
//! discovery reads those sentences back. Optional first-pass flaws and vote
//! noise exercise the refinement loop. The record of assignments is local
//! to the backend instance.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use causaltext_core::rng::stream;

use crate::backend::{estimate_tokens, BackendError, ChatBackend, ChatRequest, ChatResponse, TokenUsage};
use crate::template::{
    CONCEPT_EXTRACTION, CONCEPT_EXTRACTION_RETRY, GEN_ID_REVISION, KEY_ADJACENCY, KEY_CONCEPTS, KEY_DESCRIPTION,
    KEY_EXTRACTED, KEY_VERDICT, LLM_CAUSAL_DISCOVERY, PHASE2_ASSIGN, PHASE2_REFINE, PHASE2_SCHEMA_REVISION,
    PHASE2_VERIFY, PHASE3_COVERAGE_REVISION, PHASE3_VERBALIZE,
};

/// Concepts the simulated proposer draws from. No entry is a substring of
/// another, so containment checks are unambiguous.
pub const VOCABULARY: &[&str] = &[
    "rainfall",
    "soil moisture",
    "crop yield",
    "fertilizer use",
    "pest outbreak",
    "irrigation demand",
    "grain price",
    "farm income",
    "market demand",
    "shipping cost",
    "fuel price",
    "factory output",
    "wage level",
    "hiring rate",
    "consumer spending",
    "interest rate",
    "loan approval",
    "housing starts",
    "rent burden",
    "commute time",
    "traffic congestion",
    "air pollution",
    "asthma cases",
    "clinic visits",
    "vaccination coverage",
    "flu incidence",
    "school attendance",
    "exam scores",
    "tutoring hours",
    "study time",
    "sleep quality",
    "caffeine intake",
    "heart rate",
    "blood pressure",
    "exercise frequency",
    "body weight",
    "sugar consumption",
    "dental cavities",
    "screen time",
    "eye strain",
    "river level",
    "flood damage",
    "insurance claims",
    "repair spending",
    "tourism revenue",
    "hotel occupancy",
    "ticket sales",
    "stadium crowds",
    "noise complaints",
    "police patrols",
    "burglary reports",
    "street lighting",
    "power outages",
    "server downtime",
    "customer complaints",
    "refund requests",
    "product recalls",
    "supplier delays",
    "inventory shortage",
    "overtime shifts",
    "worker fatigue",
    "workplace accidents",
    "training budget",
    "employee turnover",
];

const VERB: &str = " shapes ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedConfig {
    pub seed: u64,
    /// Refinement rounds during which the verifier rejects the first
    /// required edge of an assignment.
    pub flawed_rounds: u32,
    /// Probability that a single verifier vote is flipped.
    pub vote_noise: f64,
}

impl Default for SimulatedConfig {
    fn default() -> Self {
        SimulatedConfig { seed: 0, flawed_rounds: 0, vote_noise: 0.0 }
    }
}

#[derive(Debug, Clone)]
struct World {
    rows: Vec<Vec<u8>>,
    flaw: Option<(usize, usize)>,
    rounds_left: u32,
}

pub struct SimulatedBackend {
    config: SimulatedConfig,
    worlds: Mutex<HashMap<String, World>>,
}

fn hash64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn list_key(concepts: &[String]) -> String {
    concepts.join("\u{1f}")
}

fn normalized(s: &str) -> String {
    s.trim().trim_end_matches('.').to_lowercase()
}

/// Lines after the line equal to `header`, up to the next blank line.
fn block<'a>(prompt: &'a str, header: &str) -> Vec<&'a str> {
    let mut lines = prompt.lines();
    for l in lines.by_ref() {
        if l.trim() == header {
            break;
        }
    }
    lines.take_while(|l| !l.trim().is_empty()).collect()
}

fn parse_rows(lines: &[&str]) -> Vec<Vec<u8>> {
    lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && l.chars().all(|c| c == '0' || c == '1'))
        .map(|l| l.bytes().map(|b| b - b'0').collect())
        .collect()
}

/// Strips a `k. ` or `Node k: ` prefix.
fn strip_label(line: &str) -> String {
    let t = line.trim();
    if let Some(rest) = t.strip_prefix("Node ") {
        if let Some((_, c)) = rest.split_once(": ") {
            return c.trim().to_string();
        }
    }
    match t.split_once(". ") {
        Some((k, c)) if k.chars().all(|ch| ch.is_ascii_digit()) => c.trim().to_string(),
        _ => t.to_string(),
    }
}

fn labelled(lines: &[&str]) -> Vec<String> {
    lines.iter().map(|l| strip_label(l)).collect()
}

fn first_edge(rows: &[Vec<u8>]) -> Option<(usize, usize)> {
    rows.iter().enumerate().find_map(|(i, r)| r.iter().position(|&v| v == 1).map(|j| (i, j)))
}

/// Paragraph stating every edge once and mentioning isolated concepts.
pub fn describe(concepts: &[String], rows: &[Vec<u8>]) -> String {
    let mut sentences = Vec::new();
    let mut mentioned = vec![false; concepts.len()];
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if v == 1 && i < concepts.len() && j < concepts.len() {
                sentences.push(format!("{}{VERB}{}.", concepts[i], concepts[j]));
                mentioned[i] = true;
                mentioned[j] = true;
            }
        }
    }
    for (c, m) in concepts.iter().zip(&mentioned) {
        if !m {
            sentences.push(format!("{c} is also observed."));
        }
    }
    sentences.join(" ")
}

/// Edges stated in a paragraph written by [`describe`].
pub fn read_edges(text: &str, concepts: &[String]) -> Vec<Vec<u8>> {
    let n = concepts.len();
    let index: HashMap<String, usize> = concepts.iter().enumerate().map(|(k, c)| (normalized(c), k)).collect();
    let mut rows = vec![vec![0u8; n]; n];
    for sentence in text.split('.') {
        if let Some((a, b)) = sentence.split_once(VERB) {
            if let (Some(&i), Some(&j)) = (index.get(&normalized(a)), index.get(&normalized(b))) {
                rows[i][j] = 1;
            }
        }
    }
    rows
}

impl SimulatedBackend {
    pub fn new(config: SimulatedConfig) -> Self {
        SimulatedBackend { config, worlds: Mutex::new(HashMap::new()) }
    }

    fn shuffled_vocabulary(&self, salt: &str) -> Vec<&'static str> {
        let mut v = VOCABULARY.to_vec();
        v.shuffle(&mut stream(self.config.seed, hash64(&["vocabulary", salt])));
        v
    }

    fn fresh(&self, taken: &[String], salt: &str) -> String {
        let used: Vec<String> = taken.iter().map(|c| normalized(c)).collect();
        self.shuffled_vocabulary(salt)
            .into_iter()
            .find(|c| !used.contains(&c.to_string()))
            .map(str::to_string)
            .unwrap_or_else(|| format!("{} variant", taken.len()))
    }

    fn register(&self, concepts: &[String], rows: Vec<Vec<u8>>, rounds_left: u32) {
        let flaw = if rounds_left > 0 { first_edge(&rows) } else { None };
        self.worlds.lock().expect("world lock").insert(list_key(concepts), World { rows, flaw, rounds_left });
    }

    fn world(&self, concepts: &[String]) -> Option<World> {
        self.worlds.lock().expect("world lock").get(&list_key(concepts)).cloned()
    }

    fn assignment_reply(concepts: &[String]) -> String {
        let nodes: Vec<String> = concepts.iter().enumerate().map(|(k, c)| format!("Node {k}: {c}")).collect();
        json!({ KEY_CONCEPTS: nodes }).to_string()
    }

    fn assign(&self, prompt: &str) -> Result<String, BackendError> {
        let rows = parse_rows(&block(prompt, "Adjacency Matrix:"));
        if rows.is_empty() {
            return Err(BackendError::Protocol("no adjacency matrix in prompt".into()));
        }
        // Distinct graphs in one run must not share a concept list.
        let mut attempt = 0u32;
        let concepts = loop {
            let salt = if attempt == 0 { prompt.to_string() } else { format!("{prompt}#{attempt}") };
            let vocab = self.shuffled_vocabulary(&salt);
            let concepts: Vec<String> = (0..rows.len())
                .map(|k| vocab.get(k).map_or_else(|| format!("{k} variant"), |c| c.to_string()))
                .collect();
            let mut worlds = self.worlds.lock().expect("world lock");
            let free = worlds.get(&list_key(&concepts)).is_none_or(|w| w.rows == rows);
            if free || attempt >= 64 {
                let flaw = if self.config.flawed_rounds > 0 { first_edge(&rows) } else { None };
                worlds.insert(list_key(&concepts), World { rows, flaw, rounds_left: self.config.flawed_rounds });
                break concepts;
            }
            attempt += 1;
        };
        Ok(Self::assignment_reply(&concepts))
    }

    fn refine(&self, prompt: &str) -> Result<String, BackendError> {
        let concepts = labelled(&block(prompt, &current_header(prompt)));
        let Some(world) = self.world(&concepts) else {
            return Ok(Self::assignment_reply(&concepts));
        };
        let mut next = concepts.clone();
        if let Some((_, j)) = world.flaw {
            next[j] = self.fresh(&concepts, prompt);
        }
        self.register(&next, world.rows, world.rounds_left.saturating_sub(1));
        Ok(Self::assignment_reply(&next))
    }

    fn schema_revision(&self, prompt: &str) -> Result<String, BackendError> {
        let concepts = labelled(&block(prompt, &current_header(prompt)));
        let offending: Vec<usize> =
            block(prompt, "These nodes have concepts that duplicate or nearly duplicate another node's concept:")
                .iter()
                .filter_map(|l| l.trim().strip_prefix("Node ")?.split_once(':')?.0.trim().parse().ok())
                .collect();
        let mut next = concepts.clone();
        for k in offending {
            if k < next.len() {
                next[k] = self.fresh(&next, &format!("{prompt}{k}"));
            }
        }
        if let Some(w) = self.world(&concepts) {
            self.register(&next, w.rows, w.rounds_left);
        }
        Ok(Self::assignment_reply(&next))
    }

    fn verify(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let prompt = request.payload.prompt();
        let concepts = labelled(&block(prompt, "Concepts in the scenario:"));
        let (cause, effect) =
            question_pair(prompt).ok_or_else(|| BackendError::Protocol("no question in prompt".into()))?;
        let i = concepts.iter().position(|c| *c == cause);
        let j = concepts.iter().position(|c| *c == effect);
        let mut yes = match (self.world(&concepts), i, j) {
            (Some(w), Some(i), Some(j)) => w.rows[i][j] == 1 && w.flaw != Some((i, j)),
            _ => false,
        };
        if self.config.vote_noise > 0.0 {
            let salt = hash64(&[prompt, &request.sample_index.to_string()]);
            if stream(self.config.seed, salt).gen::<f64>() < self.config.vote_noise {
                yes = !yes;
            }
        }
        Ok(json!({ KEY_VERDICT: if yes { "yes" } else { "no" }, "reason": "simulated judgment" }).to_string())
    }

    fn verbalize(prompt: &str) -> String {
        let concepts = labelled(&block(prompt, "Concepts:"));
        let rows = parse_rows(&block(prompt, "Adjacency matrix between concepts:"));
        json!({ KEY_DESCRIPTION: describe(&concepts, &rows) }).to_string()
    }

    fn discover(prompt: &str) -> String {
        let concepts = labelled(&block(prompt, "Important concepts appearing in the text:"));
        let text = block(prompt, "Text:").join(" ");
        json!({ KEY_ADJACENCY: read_edges(&text, &concepts) }).to_string()
    }

    fn extract(prompt: &str) -> String {
        let text = block(prompt, "Text:").join(" ").to_lowercase();
        let mut found: Vec<(usize, &str)> =
            VOCABULARY.iter().filter_map(|c| text.find(c).map(|pos| (pos, *c))).collect();
        found.sort();
        let concepts: Vec<&str> = found.into_iter().take(10).map(|(_, c)| c).collect();
        json!({ KEY_EXTRACTED: concepts }).to_string()
    }
}

fn current_header(prompt: &str) -> String {
    prompt.lines().find(|l| l.starts_with("Current concepts for the ")).unwrap_or("").trim().to_string()
}

fn question_pair(prompt: &str) -> Option<(String, String)> {
    let line = prompt.lines().find(|l| l.starts_with("Question: Is \""))?;
    let rest = line.strip_prefix("Question: Is \"")?;
    let (cause, rest) = rest.split_once("\" a direct cause of \"")?;
    let effect = rest.strip_suffix("\"?")?;
    Some((cause.to_string(), effect.to_string()))
}

impl ChatBackend for SimulatedBackend {
    fn id(&self) -> &str {
        "simulated"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let prompt = request.payload.prompt();
        let text = match request.template.as_str() {
            PHASE2_ASSIGN => self.assign(prompt)?,
            PHASE2_REFINE => self.refine(prompt)?,
            PHASE2_SCHEMA_REVISION => self.schema_revision(prompt)?,
            PHASE2_VERIFY => self.verify(request)?,
            PHASE3_VERBALIZE | PHASE3_COVERAGE_REVISION | GEN_ID_REVISION => Self::verbalize(prompt),
            LLM_CAUSAL_DISCOVERY => Self::discover(prompt),
            CONCEPT_EXTRACTION | CONCEPT_EXTRACTION_RETRY => Self::extract(prompt),
            other => return Err(BackendError::Protocol(format!("simulated backend has no answer for {other}"))),
        };
        Ok(ChatResponse { usage: TokenUsage { input: estimate_tokens(prompt), output: estimate_tokens(&text) }, text })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_substring_free() {
        for (a, x) in VOCABULARY.iter().enumerate() {
            for (b, y) in VOCABULARY.iter().enumerate() {
                if a != b {
                    assert!(!x.contains(y), "{y} inside {x}");
                }
            }
            assert!(!x.contains('.') && !x.contains(VERB.trim()));
        }
    }

    #[test]
    fn describe_and_read_back() {
        let concepts: Vec<String> = ["rainfall", "crop yield", "grain price", "eye strain"].map(String::from).to_vec();
        let rows = vec![vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![1, 0, 0, 0], vec![0, 0, 0, 0]];
        let text = describe(&concepts, &rows);
        assert!(text.contains("eye strain is also observed."));
        assert_eq!(read_edges(&text, &concepts), rows);
    }

    #[test]
    fn labels_strip() {
        assert_eq!(strip_label("Node 3: heart rate"), "heart rate");
        assert_eq!(strip_label("2. heart rate"), "heart rate");
        assert_eq!(strip_label("heart rate"), "heart rate");
        assert_eq!(
            question_pair("Question: Is \"a b\" a direct cause of \"c\"?"),
            Some(("a b".to_string(), "c".to_string()))
        );
    }
}

//! Chat-completion gateway with prompt templates, strict-JSON parsing,
//! response caching and token accounting, plus offline backends; the
//! concept assignment loop and verbalization built on it.

pub mod assignment;
pub mod backend;
pub mod cache;
pub mod gateway;
pub mod http;
pub mod json;
pub mod mock;
pub mod payload;
pub mod profile;
pub mod simulated;
pub mod template;
pub mod usage;
pub mod verbalize;

pub use assignment::{
    analyze_causal_structure, counterfactual_verification, fallacy_analysis, initial_assignment, normalize_concept,
    quantify_mismatch, refine_assignment, run_loop, AssignmentError, ConceptAssignment, FallacySet, IterationRecord,
    LoopConfig, LoopError, LoopOutcome, LoopResult, MismatchReport, PairVotes, RelationSets, VoteTable,
};
pub use backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, SharedBackend, TokenUsage};
pub use cache::{CacheError, CacheKey, CacheStats, ResponseCache};
pub use gateway::{CallContext, Completion, Gateway, GatewayBuilder, GatewayError, JsonCompletion, RoleBinding};
pub use http::{HttpBackend, RetryPolicy};
pub use mock::{FnBackend, MockScript, RuleScript, ScriptRule, ScriptedBackend};
pub use payload::{ChatMessage, ChatPayload, SYSTEM_MESSAGE};
pub use profile::{disjoint_verifier, BackendProfile, Decoding, Provider, Role};
pub use simulated::{SimulatedBackend, SimulatedConfig};
pub use template::{Bindings, PromptTemplate, TemplateError, TemplateSet};
pub use usage::{CallRecord, UsageLedger, UsageSummary};
pub use verbalize::{
    extract_concepts, gen_id_refine, generate_text, llm_causal_discovery, Discovery, GenIdConfig, GenIdError,
    GenIdResult, GenIdStep, Paragraph, VerbalizeError,
};

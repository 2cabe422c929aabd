//! ponder: prompt-driven Monte Carlo tree search for step-by-step reasoning.
//!
//! The crate is organized around one loop and the plumbing it needs:
//!
//! - [`tree`] — the search tree arena: UCT scoring, child selection,
//!   backpropagation, trace export.
//! - [`search`] — the controller with visit-decayed exploration and
//!   complexity-routed rollout policies.
//! - [`model`] — pluggable generation: HTTP chat-completions client with
//!   retry, a persistent response cache, and scripted replay backends.
//! - [`prompt`] — templates and parsers for step proposal, value scoring and
//!   answer extraction.
//! - [`baseline`] — the zero-shot chain-of-thought baseline.
//! - [`eval`] — dataset ingestion, strategy execution, accuracy reports.
//! - [`synthetic`] — reward-tree environments with known optima for
//!   model-free verification of search behavior.

pub mod baseline;
pub mod eval;
pub mod model;
pub mod prompt;
pub mod search;
pub mod synthetic;
pub mod tree;

pub use model::{GenerationRequest, GenerationResponse, ModelHandle};
pub use search::{run_search, MctsConfig, SearchResult, SimulationPolicy};
pub use tree::{NodeId, ReasoningState, SearchTree};

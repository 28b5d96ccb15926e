//! Boundary-granular supervision for tactic-level theorem provers.
//!
//! The crate turns verified proof scripts into state/tactic trajectories,
//! cuts trajectories into supervision segments under pluggable boundary
//! strategies, runs best-first proof search against black-box environment
//! and policy endpoints, and aggregates evaluation metrics.

pub mod boundary;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod edit_distance;
pub mod env;
pub mod jsonl;
pub mod metrics;
pub mod parser;
pub mod policy;
pub mod protocol;
pub mod replay;
pub mod search;
pub mod simenv;
pub mod tokenizer;
pub mod types;

pub use boundary::{build_dataset, extract_segments, select_boundaries, BoundarySet, SupervisionDataset};
pub use parser::{count_open_goals, parse_proof_script, parse_proof_state};
pub use search::{best_first_prove, whole_proof_prove, SearchConfig, SearchMode, SearchResult};
pub use types::{BoundaryStrategy, MacroAction, ProofState, StrategyKind, Tactic, Trajectory};

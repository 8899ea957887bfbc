//! Best-first AND-OR tree search for retrosynthesis-style planning problems.
//!
//! A target is solved by a tree of reactions whose leaves are all available
//! building blocks. [`search::run_search`] expands the frontier molecule
//! whose best plan looks cheapest, using a per-molecule cost estimate from
//! [`value`]. Comparison searchers live in [`baselines`], problem sources in
//! [`domains`] and the benchmark harness in [`bench`].

// `!(x >= 0.0)` is used on purpose so NaN is rejected along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod domains;
pub mod route;
pub mod search;
pub mod tree;
pub mod value;

pub use domains::{ExpansionModel, ExpansionResult, PlanningInstance, Proposal};
pub use route::{Route, RouteStep};
pub use search::{run_search, verify_admissible_halt, HaltMode, SearchConfig, SearchOutcome, SearchStatus};
pub use tree::SearchTree;
pub use value::{ValueEstimator, ValueOracle};

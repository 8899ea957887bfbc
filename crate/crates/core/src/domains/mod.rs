//! Planning-instance sources.
//!
//! A planning problem is a target molecule (or task), a set of available
//! building blocks, and a one-step expansion model that proposes at most `k`
//! reactions for any product. Everything in the search layer talks to the
//! domain only through [`ExpansionModel`] and [`BuildingBlocks`].

mod brute_force;
mod cache;
mod features;
mod htn;
mod random;
mod route_dataset;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use brute_force::brute_force_optimal;
pub use cache::{load_blocks, load_cache, parse_blocks, parse_cache};
pub use features::HashedFeaturizer;
pub use htn::{generate_htn, HtnInstance, HtnParams};
pub use random::{random_graph, RandomGraph, RandomGraphParams};
pub use route_dataset::{
    exclude_unchanged, extract_route_dataset, read_reactions, CostMode, DatasetCandidate, DatasetHeader,
    DatasetRecord, ReactionRecord, RouteDataset,
};

/// Default number of proposals kept per expansion (top-50 templates).
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: negative cost {cost} for reaction {reaction}")]
    NegativeCost {
        line: usize,
        reaction: String,
        cost: f64,
    },
    #[error("line {line}: reaction {reaction} has no reactants")]
    EmptyReactants { line: usize, reaction: String },
    #[error("route dataset did not converge after {0} sweeps")]
    NonConvergence(usize),
    #[error("unknown molecule {0} in feature lookup")]
    MissingFeatures(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One candidate reaction returned by a one-step model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub reaction: String,
    pub cost: f64,
    pub reactants: Vec<String>,
}

impl Proposal {
    pub fn new<S: Into<String>>(reaction: S, cost: f64, reactants: &[&str]) -> Self {
        Self {
            reaction: reaction.into(),
            cost,
            reactants: reactants.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Probability under the `cost = -ln p` convention.
    pub fn likelihood(&self) -> f64 {
        (-self.cost).exp()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub proposals: Vec<Proposal>,
}

impl ExpansionResult {
    pub fn new(proposals: Vec<Proposal>) -> Self {
        Self { proposals }
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn truncate(&mut self, k: usize) {
        self.proposals.truncate(k);
    }
}

/// A one-step model: product in, at most `k` reactions out.
///
/// Implementations must be pure per molecule; searchers assume calling
/// `expand` twice with the same id yields the same proposals.
pub trait ExpansionModel: Send + Sync {
    fn expand(&self, molecule: &str) -> Result<ExpansionResult, DomainError>;
}

/// Membership test for the available set.
pub trait BuildingBlocks: Send + Sync {
    fn is_available(&self, molecule: &str) -> bool;
}

impl BuildingBlocks for HashSet<String> {
    fn is_available(&self, molecule: &str) -> bool {
        self.contains(molecule)
    }
}

impl BuildingBlocks for BTreeSet<String> {
    fn is_available(&self, molecule: &str) -> bool {
        self.contains(molecule)
    }
}

/// In-memory expansion table: product id to ordered proposals.
///
/// Unknown products expand to an empty result (a dead end).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReactionTable {
    entries: BTreeMap<String, Vec<Proposal>>,
}

impl ReactionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, product: impl Into<String>, proposals: Vec<Proposal>) {
        self.entries.insert(product.into(), proposals);
    }

    pub fn push(&mut self, product: impl Into<String>, proposal: Proposal) {
        self.entries.entry(product.into()).or_default().push(proposal);
    }

    pub fn get(&self, product: &str) -> Option<&[Proposal]> {
        self.entries.get(product).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Proposal])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Every proposal flattened into a product/reactants/cost record.
    pub fn reactions(&self) -> Vec<ReactionRecord> {
        self.iter()
            .flat_map(|(product, proposals)| {
                proposals.iter().map(move |p| ReactionRecord {
                    id: p.reaction.clone(),
                    product: product.to_string(),
                    reactants: p.reactants.clone(),
                    cost: p.cost,
                })
            })
            .collect()
    }
}

impl ExpansionModel for ReactionTable {
    fn expand(&self, molecule: &str) -> Result<ExpansionResult, DomainError> {
        Ok(ExpansionResult::new(
            self.get(molecule).map(<[Proposal]>::to_vec).unwrap_or_default(),
        ))
    }
}

/// A single planning problem.
#[derive(Clone)]
pub struct PlanningInstance {
    pub id: String,
    pub target: String,
    pub stock: Arc<dyn BuildingBlocks>,
    pub model: Arc<dyn ExpansionModel>,
    /// Proposals beyond this many are dropped after every expansion call.
    pub top_k: usize,
    /// Ground-truth optimal total cost, when known.
    pub optimal_cost: Option<f64>,
    /// Ground-truth optimal route length, when known.
    pub optimal_length: Option<usize>,
}

impl PlanningInstance {
    pub fn new(
        id: impl Into<String>,
        target: impl Into<String>,
        stock: Arc<dyn BuildingBlocks>,
        model: Arc<dyn ExpansionModel>,
    ) -> Self {
        Self {
            id: id.into(),
            target: target.into(),
            stock,
            model,
            top_k: DEFAULT_TOP_K,
            optimal_cost: None,
            optimal_length: None,
        }
    }

    pub fn is_available(&self, molecule: &str) -> bool {
        self.stock.is_available(molecule)
    }

    /// One model call, truncated to `top_k`.
    pub fn expand(&self, molecule: &str) -> Result<ExpansionResult, DomainError> {
        let mut result = self.model.expand(molecule)?;
        result.truncate(self.top_k);
        Ok(result)
    }
}

impl fmt::Debug for PlanningInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlanningInstance")
            .field("id", &self.id)
            .field("target", &self.target)
            .field("top_k", &self.top_k)
            .field("optimal_cost", &self.optimal_cost)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// t <- R1(c=1){a} | R2(c=2){b, c}; a, b, c available.
    pub fn two_route_instance() -> PlanningInstance {
        let mut table = ReactionTable::new();
        table.insert(
            "t",
            vec![
                Proposal::new("R1", 1.0, &["a"]),
                Proposal::new("R2", 2.0, &["b", "c"]),
            ],
        );
        let stock: HashSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        PlanningInstance::new("two-route", "t", Arc::new(stock), Arc::new(table))
    }

    /// a <-(1)- b <-(1)- c, c available.
    pub fn chain_instance() -> PlanningInstance {
        let mut table = ReactionTable::new();
        table.insert("a", vec![Proposal::new("Ra", 1.0, &["b"])]);
        table.insert("b", vec![Proposal::new("Rb", 1.0, &["c"])]);
        let stock: HashSet<String> = ["c"].iter().map(|s| s.to_string()).collect();
        PlanningInstance::new("chain", "a", Arc::new(stock), Arc::new(table))
    }
}

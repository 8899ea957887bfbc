//! The best-first search loop: select the frontier molecule with the lowest
//! `vt`, expand it with one model call, update, repeat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{DomainError, PlanningInstance};
use crate::route::Route;
use crate::tree::{NodeId, SearchTree, TreeError};
use crate::value::ValueEstimator;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HaltMode {
    /// Stop as soon as the target is solved.
    First,
    /// Stop once the best solved cost is no larger than every frontier `vt`.
    Optimal,
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Maximum number of expansion-model calls.
    pub call_limit: usize,
    pub halt_mode: HaltMode,
    pub cycle_filter: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            call_limit: 500,
            halt_mode: HaltMode::First,
            cycle_filter: true,
        }
    }
}

impl SearchConfig {
    pub fn with_limit(mut self, call_limit: usize) -> Self {
        self.call_limit = call_limit;
        self
    }

    pub fn with_halt(mut self, halt_mode: HaltMode) -> Self {
        self.halt_mode = halt_mode;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Solved,
    Exhausted,
    LimitReached,
}

impl SearchStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SearchStatus::Solved => "solved",
            SearchStatus::Exhausted => "exhausted",
            SearchStatus::LimitReached => "limit_reached",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub molecule: String,
    pub vt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub route: Option<Route>,
    pub calls_used: usize,
    pub best_root_rn: f64,
    pub iterations_log: Vec<IterationRecord>,
}

impl SearchOutcome {
    pub fn solved(route: Route, calls_used: usize) -> Self {
        Self {
            status: SearchStatus::Solved,
            best_root_rn: route.total_cost,
            route: Some(route),
            calls_used,
            iterations_log: Vec::new(),
        }
    }

    pub fn unsolved(status: SearchStatus, calls_used: usize) -> Self {
        Self {
            status,
            route: None,
            calls_used,
            best_root_rn: f64::INFINITY,
            iterations_log: Vec::new(),
        }
    }

    pub fn is_solved(&self) -> bool {
        self.status == SearchStatus::Solved
    }
}

pub fn run_search(
    instance: &PlanningInstance,
    vm: &dyn ValueEstimator,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    run_search_observed(instance, vm, config, &mut |_, _| {})
}

/// As [`run_search`], calling `observer` with the tree and the expanded
/// node after every update.
pub fn run_search_observed(
    instance: &PlanningInstance,
    vm: &dyn ValueEstimator,
    config: &SearchConfig,
    observer: &mut dyn FnMut(&SearchTree<'_>, NodeId),
) -> Result<SearchOutcome, SearchError> {
    assert!(config.call_limit >= 1, "call_limit must be at least 1");
    let mut tree =
        SearchTree::new(&instance.target, instance.stock.as_ref(), vm).with_cycle_filter(config.cycle_filter);
    let mut log = Vec::new();
    let mut calls = 0;
    let status = loop {
        let min_vt = tree.min_frontier_vt();
        if tree.is_solved() {
            match config.halt_mode {
                HaltMode::First => break SearchStatus::Solved,
                HaltMode::Optimal if tree.solved_cost() <= min_vt => break SearchStatus::Solved,
                HaltMode::Optimal => {}
            }
        }
        if min_vt == f64::INFINITY {
            // nothing left that could lead anywhere
            break SearchStatus::Exhausted;
        }
        if calls == config.call_limit {
            // in optimal mode a route that is not yet proven is not returned
            break SearchStatus::LimitReached;
        }
        let m = tree.select_next()?;
        let molecule = tree.or_node(m)?.molecule.clone();
        log.push(IterationRecord {
            iteration: calls,
            molecule: molecule.clone(),
            vt: min_vt,
        });
        log::trace!("iteration {calls}: expanding {molecule} at vt {min_vt}");
        let result = instance.expand(&molecule)?;
        calls += 1;
        tree.expand(m, &result)?;
        tree.update(m);
        observer(&tree, m);
    };
    let route = if status == SearchStatus::Solved {
        Some(tree.extract_best_route()?)
    } else {
        None
    };
    Ok(SearchOutcome {
        status,
        route,
        calls_used: calls,
        best_root_rn: tree.root_rn(),
        iterations_log: log,
    })
}

/// True iff the outcome is solved with a route costing `optimal_cost`
/// within 1e-9.
pub fn verify_admissible_halt(outcome: &SearchOutcome, optimal_cost: f64) -> bool {
    match (&outcome.status, &outcome.route) {
        (SearchStatus::Solved, Some(r)) => (r.total_cost - optimal_cost).abs() <= 1e-9,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Arc;

    use super::*;
    use crate::domains::fixtures::{chain_instance, two_route_instance};
    use crate::domains::{Proposal, ReactionTable};
    use crate::value::ValueOracle;

    fn optimal() -> SearchConfig {
        SearchConfig::default().with_halt(HaltMode::Optimal)
    }

    #[test]
    fn two_route_optimal() {
        let inst = two_route_instance();
        let out = run_search(&inst, &ValueOracle::Zero, &optimal()).unwrap();
        assert_eq!(out.status, SearchStatus::Solved);
        let route = out.route.as_ref().unwrap();
        assert_eq!(route.reactions().collect::<Vec<_>>(), vec!["R1"]);
        assert_eq!(route.total_cost, 1.0);
        assert_eq!(out.calls_used, 1);
        assert!(verify_admissible_halt(&out, 1.0));
    }

    #[test]
    fn available_target_needs_no_calls() {
        let mut inst = two_route_instance();
        inst.target = "a".into();
        let out = run_search(&inst, &ValueOracle::Zero, &SearchConfig::default()).unwrap();
        assert_eq!(out.status, SearchStatus::Solved);
        assert_eq!(out.calls_used, 0);
        assert!(out.route.unwrap().is_empty());
    }

    #[test]
    fn limit_reached_on_deep_chain() {
        let inst = chain_instance();
        let out = run_search(&inst, &ValueOracle::Zero, &SearchConfig::default().with_limit(1)).unwrap();
        assert_eq!(out.status, SearchStatus::LimitReached);
        assert!(out.route.is_none());
        assert_eq!(out.calls_used, 1);
    }

    #[test]
    fn dead_target_is_exhausted() {
        let inst = PlanningInstance::new(
            "dead",
            "x",
            Arc::new(HashSet::<String>::new()),
            Arc::new(ReactionTable::new()),
        );
        let out = run_search(&inst, &ValueOracle::Zero, &SearchConfig::default()).unwrap();
        assert_eq!(out.status, SearchStatus::Exhausted);
        assert_eq!(out.calls_used, 1);
        assert_eq!(out.best_root_rn, f64::INFINITY);
    }

    #[test]
    fn inadmissible_oracle_is_detected() {
        // t <- R1(1){x} | R2(5){a}; x <- Rx(1){a}; a available.
        // With vm(x) = 10 the search settles for R2 at cost 5, optimum is 2.
        let mut table = ReactionTable::new();
        table.insert(
            "t",
            vec![Proposal::new("R1", 1.0, &["x"]), Proposal::new("R2", 5.0, &["a"])],
        );
        table.insert("x", vec![Proposal::new("Rx", 1.0, &["a"])]);
        let stock: HashSet<String> = ["a".to_string()].into();
        let inst = PlanningInstance::new("bad", "t", Arc::new(stock), Arc::new(table));
        let vm = |_: &str| 10.0;
        let out = run_search(&inst, &vm, &optimal()).unwrap();
        assert!(out.is_solved());
        assert!(!verify_admissible_halt(&out, 2.0));
        let zero = run_search(&inst, &ValueOracle::Zero, &optimal()).unwrap();
        assert!(verify_admissible_halt(&zero, 2.0));
    }

    #[test]
    fn first_and_optimal_modes_differ() {
        // the first solution found is the expensive direct one
        let mut table = ReactionTable::new();
        table.insert(
            "t",
            vec![Proposal::new("R1", 3.0, &["a"]), Proposal::new("R2", 0.5, &["x"])],
        );
        table.insert("x", vec![Proposal::new("Rx", 0.5, &["y"])]);
        table.insert("y", vec![Proposal::new("Ry", 0.5, &["a"])]);
        let stock: HashSet<String> = ["a".to_string()].into();
        let inst = PlanningInstance::new("modes", "t", Arc::new(stock), Arc::new(table));
        let first = run_search(&inst, &ValueOracle::Zero, &SearchConfig::default()).unwrap();
        assert_eq!(first.route.unwrap().total_cost, 3.0);
        let best = run_search(&inst, &ValueOracle::Zero, &optimal()).unwrap();
        assert_eq!(best.route.unwrap().total_cost, 1.5);
        assert_eq!(best.calls_used, 3);
    }

    #[test]
    fn deterministic_log() {
        let inst = chain_instance();
        let a = run_search(&inst, &ValueOracle::Zero, &optimal()).unwrap();
        let b = run_search(&inst, &ValueOracle::Zero, &optimal()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iterations_log.len(), a.calls_used);
    }
}

use crate::domains::PlanningInstance;
use crate::route::{Route, RouteStep};
use crate::search::{SearchConfig, SearchError, SearchOutcome, SearchStatus};

struct OutOfCalls;

/// Depth-first search that always tries the cheapest (most likely)
/// proposal first and backtracks on dead ends. Every expansion is a model
/// call; nothing is memoized.
pub fn greedy_dfs(instance: &PlanningInstance, config: &SearchConfig) -> Result<SearchOutcome, SearchError> {
    let mut calls = 0;
    let mut path = Vec::new();
    match dfs(instance, &instance.target, config, &mut path, &mut calls)? {
        Ok(Some(steps)) => Ok(SearchOutcome::solved(
            Route::from_steps(instance.target.clone(), steps),
            calls,
        )),
        Ok(None) => Ok(SearchOutcome::unsolved(SearchStatus::Exhausted, calls)),
        Err(OutOfCalls) => Ok(SearchOutcome::unsolved(SearchStatus::LimitReached, calls)),
    }
}

type Found = Result<Option<Vec<RouteStep>>, OutOfCalls>;

fn dfs(
    instance: &PlanningInstance,
    molecule: &str,
    config: &SearchConfig,
    path: &mut Vec<String>,
    calls: &mut usize,
) -> Result<Found, SearchError> {
    if instance.is_available(molecule) {
        return Ok(Ok(Some(Vec::new())));
    }
    if *calls == config.call_limit {
        return Ok(Err(OutOfCalls));
    }
    let mut proposals = instance.expand(molecule)?.proposals;
    *calls += 1;
    // stable, so equal costs keep the model's order
    proposals.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    path.push(molecule.to_string());
    let mut found = None;
    'proposals: for p in proposals {
        if config.cycle_filter && p.reactants.iter().any(|r| path.contains(r)) {
            continue;
        }
        let mut steps = vec![RouteStep {
            product: molecule.to_string(),
            reaction: p.reaction.clone(),
            cost: p.cost,
            reactants: p.reactants.clone(),
        }];
        for r in &p.reactants {
            match dfs(instance, r, config, path, calls)? {
                Ok(Some(sub)) => steps.extend(sub),
                Ok(None) => continue 'proposals,
                Err(OutOfCalls) => {
                    path.pop();
                    return Ok(Err(OutOfCalls));
                }
            }
        }
        found = Some(steps);
        break;
    }
    path.pop();
    Ok(Ok(found))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Arc;

    use super::*;
    use crate::domains::fixtures::two_route_instance;
    use crate::domains::{Proposal, ReactionTable};
    use crate::search::{run_search, HaltMode};
    use crate::value::ValueOracle;

    #[test]
    fn two_route_picks_cheapest() {
        let inst = two_route_instance();
        let out = greedy_dfs(&inst, &SearchConfig::default()).unwrap();
        assert_eq!(out.status, SearchStatus::Solved);
        assert_eq!(out.calls_used, 1);
        assert_eq!(out.route.unwrap().reactions().collect::<Vec<_>>(), vec!["R1"]);
    }

    #[test]
    fn available_target() {
        let mut inst = two_route_instance();
        inst.target = "b".into();
        let out = greedy_dfs(&inst, &SearchConfig::default()).unwrap();
        assert_eq!(out.calls_used, 0);
        assert!(out.route.unwrap().is_empty());
    }

    #[test]
    fn cheap_dead_end_costs_more_calls() {
        // t <- Rcheap(0.1){x1} | Rreal(0.5){a}; x1 <- x2 <- x3 <- nothing
        let mut table = ReactionTable::new();
        table.insert(
            "t",
            vec![
                Proposal::new("Rcheap", 0.1, &["x1"]),
                Proposal::new("Rreal", 0.5, &["a"]),
            ],
        );
        table.insert("x1", vec![Proposal::new("R1", 0.1, &["x2"])]);
        table.insert("x2", vec![Proposal::new("R2", 0.1, &["x3"])]);
        let stock: HashSet<String> = ["a".to_string()].into();
        let inst = PlanningInstance::new("trap", "t", Arc::new(stock), Arc::new(table));
        let greedy = greedy_dfs(&inst, &SearchConfig::default()).unwrap();
        let zero = run_search(
            &inst,
            &ValueOracle::Zero,
            &SearchConfig::default().with_halt(HaltMode::First),
        )
        .unwrap();
        assert!(greedy.is_solved() && zero.is_solved());
        assert_eq!(greedy.calls_used, 4);
        assert_eq!(zero.calls_used, 1);
        greedy.route.unwrap().validate(&inst).unwrap();
    }

    #[test]
    fn respects_limit() {
        let inst = crate::domains::fixtures::chain_instance();
        let out = greedy_dfs(&inst, &SearchConfig::default().with_limit(1)).unwrap();
        assert_eq!(out.status, SearchStatus::LimitReached);
        assert_eq!(out.calls_used, 1);
    }
}

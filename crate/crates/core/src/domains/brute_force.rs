use std::collections::{BTreeSet, HashMap};

use super::{DomainError, PlanningInstance};
use crate::route::{Route, RouteStep};

struct MemoEntry {
    cost: f64,
    steps: Vec<RouteStep>,
    touched: BTreeSet<String>,
}

type Memo = HashMap<(String, usize), MemoEntry>;

#[derive(Default)]
struct Solved {
    cost: f64,
    steps: Vec<RouteStep>,
    /// Ancestors outside this subtree that cut a proposal.
    deps: BTreeSet<String>,
    /// Every molecule referenced inside this subtree. A result with no deps
    /// can be reused under any path that avoids all of these.
    touched: BTreeSet<String>,
}

/// Exhaustive optimum over tree-shaped plans.
///
/// `opt(m) = 0` for available `m`, otherwise the minimum over proposals of
/// `c(R) + sum opt(reactant)`. A path may hold at most `depth_limit`
/// reactions, and proposals whose reactants repeat a molecule already on the
/// path are skipped, mirroring the search's cycle filter. Returns `+inf` and
/// no route when nothing is reachable within the cap. Ties go to the earlier
/// proposal.
pub fn brute_force_optimal(
    instance: &PlanningInstance,
    depth_limit: usize,
) -> Result<(f64, Option<Route>), DomainError> {
    assert!(depth_limit >= 1, "depth_limit must be at least 1");
    let mut memo = Memo::new();
    let mut path = Vec::new();
    let solved = solve(instance, &instance.target, depth_limit, &mut path, &mut memo)?;
    if solved.cost.is_finite() {
        Ok((
            solved.cost,
            Some(Route::from_steps(instance.target.clone(), solved.steps)),
        ))
    } else {
        Ok((f64::INFINITY, None))
    }
}

fn solve(
    instance: &PlanningInstance,
    molecule: &str,
    depth: usize,
    path: &mut Vec<String>,
    memo: &mut Memo,
) -> Result<Solved, DomainError> {
    let touched = BTreeSet::from([molecule.to_string()]);
    if instance.is_available(molecule) {
        return Ok(Solved {
            touched,
            ..Solved::default()
        });
    }
    if depth == 0 {
        return Ok(Solved {
            cost: f64::INFINITY,
            touched,
            ..Solved::default()
        });
    }
    let key = (molecule.to_string(), depth);
    if let Some(entry) = memo.get(&key) {
        if path.iter().all(|p| !entry.touched.contains(p)) {
            return Ok(Solved {
                cost: entry.cost,
                steps: entry.steps.clone(),
                deps: BTreeSet::new(),
                touched: entry.touched.clone(),
            });
        }
    }

    let result = instance.expand(molecule)?;
    path.push(molecule.to_string());
    let mut best = Solved {
        cost: f64::INFINITY,
        touched,
        ..Solved::default()
    };
    let mut deps = BTreeSet::new();
    for proposal in &result.proposals {
        best.touched.extend(proposal.reactants.iter().cloned());
        if let Some(hit) = proposal.reactants.iter().find(|r| path.contains(r)) {
            deps.insert(hit.clone());
            continue;
        }
        let mut cost = proposal.cost;
        let mut steps = vec![RouteStep {
            product: molecule.to_string(),
            reaction: proposal.reaction.clone(),
            cost: proposal.cost,
            reactants: proposal.reactants.clone(),
        }];
        for reactant in &proposal.reactants {
            let sub = solve(instance, reactant, depth - 1, path, memo)?;
            deps.extend(sub.deps);
            best.touched.extend(sub.touched);
            cost += sub.cost;
            if !cost.is_finite() {
                break;
            }
            steps.extend(sub.steps);
        }
        if cost < best.cost {
            best.cost = cost;
            best.steps = steps;
        }
    }
    path.pop();
    deps.remove(molecule);
    if deps.is_empty() {
        memo.insert(
            key,
            MemoEntry {
                cost: best.cost,
                steps: best.steps.clone(),
                touched: best.touched.clone(),
            },
        );
    }
    best.deps = deps;
    Ok(best)
}

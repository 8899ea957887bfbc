//! Monte Carlo tree search over sets of unresolved molecules.
//!
//! A state is the collection of molecules still to be made. A move picks a
//! reaction for the first of them (in id order) and replaces it by its
//! unavailable reactants. Selection uses PUCT with priors
//! `exp(-cost)` renormalized over the node's proposals.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domains::{PlanningInstance, Proposal};
use crate::route::{Route, RouteStep};
use crate::search::{SearchConfig, SearchError, SearchOutcome, SearchStatus};
use crate::value::ValueEstimator;

#[derive(Clone, Debug)]
pub struct MctsConfig {
    pub puct_c: f64,
    /// Maximum expansions per random rollout.
    pub rollout_depth: usize,
    pub rng_seed: u64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            puct_c: 1.0,
            rollout_depth: 5,
            rng_seed: 0,
        }
    }
}

/// One unresolved molecule occurrence.
#[derive(Clone, Debug)]
struct Pending {
    molecule: String,
    /// Ancestor molecules of this occurrence, for the cycle filter.
    lineage: Vec<String>,
    /// Occurrence id, unique along a root-to-leaf path.
    slot: usize,
}

#[derive(Clone, Debug)]
struct Move {
    slot: usize,
    step: RouteStep,
    /// Slot of each reactant, `None` when it is available.
    reactant_slots: Vec<Option<usize>>,
}

struct Node {
    parent: Option<usize>,
    state: Vec<Pending>,
    next_slot: usize,
    mv: Option<Move>,
    prior: f64,
    visits: u32,
    value_sum: f64,
    children: Vec<usize>,
    expanded: bool,
    exhausted: bool,
}

fn priors(proposals: &[Proposal]) -> Vec<f64> {
    let w: Vec<f64> = proposals.iter().map(Proposal::likelihood).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / proposals.len() as f64; proposals.len()]
    }
}

/// Index of the occurrence to resolve next: smallest molecule id, then slot.
fn first_pending(state: &[Pending]) -> usize {
    (0..state.len())
        .min_by(|&a, &b| {
            state[a]
                .molecule
                .cmp(&state[b].molecule)
                .then(state[a].slot.cmp(&state[b].slot))
        })
        .expect("state is nonempty")
}

/// Applies `p` to the occurrence at `idx`. Returns `None` when the cycle
/// filter rejects the proposal.
fn apply(
    instance: &PlanningInstance,
    state: &[Pending],
    next_slot: usize,
    idx: usize,
    p: &Proposal,
    cycle_filter: bool,
) -> Option<(Vec<Pending>, usize, Move)> {
    let target = &state[idx];
    if cycle_filter
        && p.reactants
            .iter()
            .any(|r| *r == target.molecule || target.lineage.contains(r))
    {
        return None;
    }
    let mut lineage = target.lineage.clone();
    lineage.push(target.molecule.clone());
    let mut next = next_slot;
    let mut new_state: Vec<Pending> = state
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != idx)
        .map(|(_, s)| s.clone())
        .collect();
    let mut slots = Vec::with_capacity(p.reactants.len());
    for r in &p.reactants {
        if instance.is_available(r) {
            slots.push(None);
        } else {
            slots.push(Some(next));
            new_state.push(Pending {
                molecule: r.clone(),
                lineage: lineage.clone(),
                slot: next,
            });
            next += 1;
        }
    }
    let mv = Move {
        slot: target.slot,
        step: RouteStep {
            product: target.molecule.clone(),
            reaction: p.reaction.clone(),
            cost: p.cost,
            reactants: p.reactants.clone(),
        },
        reactant_slots: slots,
    };
    Some((new_state, next, mv))
}

struct Mcts<'i> {
    instance: &'i PlanningInstance,
    vm: Option<&'i dyn ValueEstimator>,
    config: &'i SearchConfig,
    mcfg: &'i MctsConfig,
    nodes: Vec<Node>,
    calls: usize,
    rng: ChaCha8Rng,
}

enum Step {
    Found(usize),
    OutOfCalls,
    Continue,
}

impl Mcts<'_> {
    fn select_child(&self, id: usize) -> Option<usize> {
        let n = &self.nodes[id];
        let sqrt_n = (n.visits as f64).sqrt();
        let mut best: Option<(f64, usize)> = None;
        for &c in &n.children {
            let ch = &self.nodes[c];
            if ch.exhausted {
                continue;
            }
            let q = if ch.visits == 0 {
                0.0
            } else {
                ch.value_sum / ch.visits as f64
            };
            let score = q + self.mcfg.puct_c * ch.prior * sqrt_n / (1.0 + ch.visits as f64);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, c));
            }
        }
        best.map(|(_, c)| c)
    }

    /// Expands `id`; returns a terminal child if one appeared.
    fn expand(&mut self, id: usize) -> Result<Option<usize>, SearchError> {
        let idx = first_pending(&self.nodes[id].state);
        let molecule = self.nodes[id].state[idx].molecule.clone();
        let proposals = self.instance.expand(&molecule)?.proposals;
        self.calls += 1;
        let mut kids = Vec::new();
        let mut kid_priors = Vec::new();
        let mut kept = Vec::new();
        for p in &proposals {
            let n = &self.nodes[id];
            if let Some(applied) = apply(
                self.instance,
                &n.state,
                n.next_slot,
                idx,
                p,
                self.config.cycle_filter,
            ) {
                kept.push(p.clone());
                kids.push(applied);
            }
        }
        if !kept.is_empty() {
            kid_priors = priors(&kept);
        }
        let mut terminal = None;
        for ((state, next_slot, mv), prior) in kids.into_iter().zip(kid_priors) {
            let cid = self.nodes.len();
            if state.is_empty() && terminal.is_none() {
                terminal = Some(cid);
            }
            self.nodes.push(Node {
                parent: Some(id),
                state,
                next_slot,
                mv: Some(mv),
                prior,
                visits: 0,
                value_sum: 0.0,
                children: Vec::new(),
                expanded: false,
                exhausted: false,
            });
            self.nodes[id].children.push(cid);
        }
        self.nodes[id].expanded = true;
        if self.nodes[id].children.is_empty() {
            self.mark_exhausted(id);
        }
        Ok(terminal)
    }

    fn mark_exhausted(&mut self, id: usize) {
        let mut cur = Some(id);
        while let Some(i) = cur {
            let n = &self.nodes[i];
            let dead = n.expanded && n.children.iter().all(|&c| self.nodes[c].exhausted);
            if !dead {
                break;
            }
            self.nodes[i].exhausted = true;
            cur = self.nodes[i].parent;
        }
    }

    /// Leaf value in [0, 1].
    fn evaluate(&mut self, id: usize) -> Result<f64, SearchError> {
        let state = &self.nodes[id].state;
        if let Some(vm) = self.vm {
            let total: f64 = state.iter().map(|p| vm.estimate(&p.molecule)).sum();
            return Ok((-total).exp());
        }
        let mut state = state.clone();
        let mut next_slot = self.nodes[id].next_slot;
        for _ in 0..self.mcfg.rollout_depth {
            if state.is_empty() {
                return Ok(1.0);
            }
            if self.calls == self.config.call_limit {
                return Ok(0.0);
            }
            let idx = first_pending(&state);
            let proposals = self.instance.expand(&state[idx].molecule)?.proposals;
            self.calls += 1;
            let options: Vec<_> = proposals
                .iter()
                .filter_map(|p| apply(self.instance, &state, next_slot, idx, p, self.config.cycle_filter))
                .collect();
            if options.is_empty() {
                return Ok(0.0);
            }
            let weights: Vec<f64> = options.iter().map(|(_, _, m)| (-m.step.cost).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut x = self.rng.gen::<f64>() * total;
            let mut pick = options.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if x < *w {
                    pick = i;
                    break;
                }
                x -= w;
            }
            let (s, ns, _) = options.into_iter().nth(pick).unwrap();
            state = s;
            next_slot = ns;
        }
        Ok(if state.is_empty() { 1.0 } else { 0.0 })
    }

    fn backup(&mut self, id: usize, value: f64) {
        let mut cur = Some(id);
        while let Some(i) = cur {
            self.nodes[i].visits += 1;
            self.nodes[i].value_sum += value;
            cur = self.nodes[i].parent;
        }
    }

    fn iterate(&mut self) -> Result<Step, SearchError> {
        let mut id = 0;
        while self.nodes[id].expanded {
            match self.select_child(id) {
                Some(c) => id = c,
                None => return Ok(Step::Continue),
            }
        }
        if self.nodes[id].state.is_empty() {
            return Ok(Step::Found(id));
        }
        if self.calls == self.config.call_limit {
            return Ok(Step::OutOfCalls);
        }
        if let Some(t) = self.expand(id)? {
            return Ok(Step::Found(t));
        }
        if self.nodes[id].exhausted {
            self.backup(id, 0.0);
            return Ok(Step::Continue);
        }
        let v = self.evaluate(id)?;
        self.backup(id, v);
        Ok(Step::Continue)
    }

    fn route(&self, leaf: usize) -> Route {
        let mut moves: HashMap<usize, &Move> = HashMap::new();
        let mut cur = Some(leaf);
        while let Some(i) = cur {
            if let Some(m) = &self.nodes[i].mv {
                moves.insert(m.slot, m);
            }
            cur = self.nodes[i].parent;
        }
        let mut steps = Vec::new();
        let mut stack = vec![0];
        while let Some(slot) = stack.pop() {
            let m = moves[&slot];
            steps.push(m.step.clone());
            stack.extend(m.reactant_slots.iter().rev().flatten());
        }
        Route::from_steps(self.instance.target.clone(), steps)
    }
}

/// PUCT search; with `vm` the leaf value is `exp(-sum vm)` over the state,
/// otherwise a random rollout of at most `rollout_depth` model calls.
/// Returns the first complete route found.
pub fn mcts_search(
    instance: &PlanningInstance,
    vm: Option<&dyn ValueEstimator>,
    config: &SearchConfig,
    mcfg: &MctsConfig,
) -> Result<SearchOutcome, SearchError> {
    if instance.is_available(&instance.target) {
        return Ok(SearchOutcome::solved(Route::empty(instance.target.clone()), 0));
    }
    let mut s = Mcts {
        instance,
        vm,
        config,
        mcfg,
        nodes: vec![Node {
            parent: None,
            state: vec![Pending {
                molecule: instance.target.clone(),
                lineage: Vec::new(),
                slot: 0,
            }],
            next_slot: 1,
            mv: None,
            prior: 1.0,
            visits: 0,
            value_sum: 0.0,
            children: Vec::new(),
            expanded: false,
            exhausted: false,
        }],
        calls: 0,
        rng: ChaCha8Rng::seed_from_u64(mcfg.rng_seed),
    };
    loop {
        if s.nodes[0].exhausted {
            return Ok(SearchOutcome::unsolved(SearchStatus::Exhausted, s.calls));
        }
        match s.iterate()? {
            Step::Found(leaf) => return Ok(SearchOutcome::solved(s.route(leaf), s.calls)),
            Step::OutOfCalls => return Ok(SearchOutcome::unsolved(SearchStatus::LimitReached, s.calls)),
            Step::Continue => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Arc;

    use super::*;
    use crate::domains::fixtures::{chain_instance, two_route_instance};
    use crate::domains::{random_graph, RandomGraphParams, ReactionTable};

    #[test]
    fn two_route_any_seed() {
        let inst = two_route_instance();
        for seed in 0..20 {
            let m = MctsConfig {
                rng_seed: seed,
                ..MctsConfig::default()
            };
            let out = mcts_search(&inst, None, &SearchConfig::default(), &m).unwrap();
            assert_eq!(out.status, SearchStatus::Solved);
            assert!(out.calls_used <= 5);
            out.route.unwrap().validate(&inst).unwrap();
        }
    }

    #[test]
    fn available_target() {
        let mut inst = two_route_instance();
        inst.target = "a".into();
        let out = mcts_search(&inst, None, &SearchConfig::default(), &MctsConfig::default()).unwrap();
        assert_eq!(out.calls_used, 0);
        assert!(out.is_solved());
    }

    #[test]
    fn zero_exploration_exploits_best_mean() {
        let mut t = Mcts {
            instance: &two_route_instance(),
            vm: None,
            config: &SearchConfig::default(),
            mcfg: &MctsConfig {
                puct_c: 0.0,
                ..MctsConfig::default()
            },
            nodes: Vec::new(),
            calls: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        let leaf = |parent, visits, value_sum| Node {
            parent: Some(parent),
            state: Vec::new(),
            next_slot: 0,
            mv: None,
            prior: 1.0 / 3.0,
            visits,
            value_sum,
            children: Vec::new(),
            expanded: false,
            exhausted: false,
        };
        t.nodes.push(Node {
            parent: None,
            state: Vec::new(),
            next_slot: 0,
            mv: None,
            prior: 1.0,
            visits: 10,
            value_sum: 0.0,
            children: vec![1, 2, 3],
            expanded: true,
            exhausted: false,
        });
        t.nodes.push(leaf(0, 4, 1.0));
        t.nodes.push(leaf(0, 3, 2.1));
        t.nodes.push(leaf(0, 3, 1.5));
        assert_eq!(t.select_child(0), Some(2));
    }

    #[test]
    fn routes_are_valid_and_limits_hold() {
        for seed in 0..40 {
            let g = random_graph(&RandomGraphParams {
                rng_seed: seed,
                molecules: 12,
                blocks: 4,
                max_reactants: 2,
                dead_end_prob: 0.05,
                ..RandomGraphParams::default()
            });
            for limit in [5, 40] {
                let cfg = SearchConfig::default().with_limit(limit);
                let mcfg = MctsConfig {
                    rng_seed: seed,
                    ..MctsConfig::default()
                };
                let a = mcts_search(&g.instance, None, &cfg, &mcfg).unwrap();
                let b = mcts_search(&g.instance, None, &cfg, &mcfg).unwrap();
                assert_eq!(a, b);
                assert!(a.calls_used <= limit);
                if let Some(r) = &a.route {
                    r.validate(&g.instance).unwrap();
                }
            }
        }
    }

    #[test]
    fn chain_with_oracle() {
        let inst = chain_instance();
        let vm = |_: &str| 1.0;
        let out = mcts_search(&inst, Some(&vm), &SearchConfig::default(), &MctsConfig::default()).unwrap();
        assert!(out.is_solved());
        assert_eq!(out.calls_used, 2);
    }

    #[test]
    fn dead_target_exhausts() {
        let inst = PlanningInstance::new(
            "dead",
            "x",
            Arc::new(HashSet::<String>::new()),
            Arc::new(ReactionTable::new()),
        );
        let out = mcts_search(&inst, None, &SearchConfig::default(), &MctsConfig::default()).unwrap();
        assert_eq!(out.status, SearchStatus::Exhausted);
    }
}

//! Small random reaction hypergraphs for property tests.
//!
//! Unlike the HTN generator these may contain cycles, self loops, dead ends
//! and unsolvable targets.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PlanningInstance, Proposal, ReactionTable};

#[derive(Clone, Debug)]
pub struct RandomGraphParams {
    pub rng_seed: u64,
    /// Molecules `m0..m{n}`; `m0` is the target and never a block.
    pub molecules: usize,
    pub blocks: usize,
    pub max_proposals: usize,
    pub max_reactants: usize,
    /// Chance that a non-block molecule has no proposals at all.
    pub dead_end_prob: f64,
    /// Costs are drawn from `{0, 0.25, ..., max_cost}`.
    pub max_cost: f64,
}

impl Default for RandomGraphParams {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            molecules: 8,
            blocks: 3,
            max_proposals: 3,
            max_reactants: 3,
            dead_end_prob: 0.15,
            max_cost: 4.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub instance: PlanningInstance,
    pub table: Arc<ReactionTable>,
    pub blocks: Arc<BTreeSet<String>>,
}

pub fn random_graph(params: &RandomGraphParams) -> RandomGraph {
    assert!(
        params.molecules > params.blocks,
        "need at least one non-block molecule"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let ids: Vec<String> = (0..params.molecules).map(|i| format!("m{i}")).collect();
    let mut pool: Vec<usize> = (1..params.molecules).collect();
    pool.shuffle(&mut rng);
    let blocks: BTreeSet<String> = pool[..params.blocks].iter().map(|&i| ids[i].clone()).collect();
    let steps = (params.max_cost * 4.0).round() as u32;

    let mut table = ReactionTable::new();
    for (i, product) in ids.iter().enumerate() {
        if blocks.contains(product) {
            continue;
        }
        let n = if rng.gen_bool(params.dead_end_prob) {
            0
        } else {
            rng.gen_range(1..=params.max_proposals)
        };
        for j in 0..n {
            let k = rng.gen_range(1..=params.max_reactants);
            let reactants: Vec<String> = ids.choose_multiple(&mut rng, k).cloned().collect();
            let cost = rng.gen_range(0..=steps) as f64 / 4.0;
            table.push(
                product.clone(),
                Proposal {
                    reaction: format!("r{i}_{j}"),
                    cost,
                    reactants,
                },
            );
        }
    }
    let table = Arc::new(table);
    let blocks = Arc::new(blocks);
    let instance = PlanningInstance::new(
        format!("rand-{}", params.rng_seed),
        ids[0].clone(),
        blocks.clone(),
        table.clone(),
    );
    RandomGraph {
        instance,
        table,
        blocks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_block_free_target() {
        let p = RandomGraphParams::default();
        let a = random_graph(&p);
        let b = random_graph(&p);
        assert_eq!(a.table, b.table);
        assert!(!a.blocks.contains("m0"));
        assert_eq!(a.blocks.len(), 3);
    }
}

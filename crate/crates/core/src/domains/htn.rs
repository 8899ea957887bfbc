//! Synthetic hierarchical task planning instances.
//!
//! A task is completed by any one of its methods; a method has a cost and
//! requires all of its subtasks. Subtasks are either primitive (directly
//! executable, i.e. available) or compound tasks one level further down.
//! Tasks at level 0 are always primitive, so every instance is solvable and
//! the task tree is acyclic by construction.
//!
//! Ids encode the task's position and remaining depth, e.g.
//! `h7.m0s1.m2s0:L3` for a compound task and `h7.m1s0:P` for a primitive.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{brute_force_optimal, DomainError, PlanningInstance, Proposal, ReactionTable};
use crate::route::Route;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HtnParams {
    pub rng_seed: u64,
    /// Levels of methods below the root task.
    pub depth: usize,
    /// Inclusive range of methods per compound task.
    pub or_branch: (usize, usize),
    /// Inclusive range of subtasks per method.
    pub and_branch: (usize, usize),
    /// Chance that a subtask above level 0 is primitive.
    pub primitive_prob: f64,
    /// Half-open range method costs are drawn from.
    pub cost_range: (f64, f64),
}

impl Default for HtnParams {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            depth: 5,
            or_branch: (2, 3),
            and_branch: (2, 3),
            primitive_prob: 0.5,
            cost_range: (1.0, 10.0),
        }
    }
}

impl HtnParams {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }

    fn validate(&self) {
        assert!(self.depth >= 1, "depth must be at least 1");
        assert!(
            self.or_branch.0 >= 1 && self.or_branch.0 <= self.or_branch.1,
            "invalid or_branch range"
        );
        assert!(
            self.and_branch.0 >= 1 && self.and_branch.0 <= self.and_branch.1,
            "invalid and_branch range"
        );
        assert!(
            (0.0..=1.0).contains(&self.primitive_prob),
            "primitive_prob must lie in [0, 1]"
        );
        assert!(
            self.cost_range.0 >= 0.0 && self.cost_range.0 < self.cost_range.1,
            "invalid cost range"
        );
    }
}

/// A generated instance plus the raw material needed to rebuild or export it.
#[derive(Clone, Debug)]
pub struct HtnInstance {
    pub params: HtnParams,
    pub instance: PlanningInstance,
    pub table: Arc<ReactionTable>,
    pub primitives: Arc<BTreeSet<String>>,
    pub optimal_route: Route,
}

#[derive(Serialize, Deserialize)]
struct InstanceMeta {
    id: String,
    target: String,
    optimal_cost: f64,
    optimal_length: usize,
    params: HtnParams,
}

struct Builder {
    rng: ChaCha8Rng,
    params: HtnParams,
    table: ReactionTable,
    primitives: BTreeSet<String>,
}

impl Builder {
    fn task(&mut self, base: &str, level: usize) -> String {
        if level == 0 {
            let id = format!("{base}:P");
            self.primitives.insert(id.clone());
            return id;
        }
        let id = format!("{base}:L{level}");
        let n_methods = self
            .rng
            .gen_range(self.params.or_branch.0..=self.params.or_branch.1);
        let mut methods = Vec::with_capacity(n_methods);
        for i in 0..n_methods {
            let (lo, hi) = self.params.cost_range;
            let cost = self.rng.gen_range(lo..hi);
            let n_sub = self
                .rng
                .gen_range(self.params.and_branch.0..=self.params.and_branch.1);
            let mut subtasks = Vec::with_capacity(n_sub);
            for j in 0..n_sub {
                let sub_base = format!("{base}.m{i}s{j}");
                let primitive = self.rng.gen_bool(self.params.primitive_prob);
                let sub = if primitive {
                    self.task(&sub_base, 0)
                } else {
                    self.task(&sub_base, level - 1)
                };
                subtasks.push(sub);
            }
            methods.push(Proposal {
                reaction: format!("{base}/m{i}"),
                cost,
                reactants: subtasks,
            });
        }
        self.table.insert(id.clone(), methods);
        id
    }
}

/// Deterministic instance for `params.rng_seed`, with its optimum attached.
pub fn generate_htn(params: &HtnParams) -> HtnInstance {
    params.validate();
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
        params: params.clone(),
        table: ReactionTable::new(),
        primitives: BTreeSet::new(),
    };
    let root_base = format!("h{}", params.rng_seed);
    let target = b.task(&root_base, params.depth);
    let table = Arc::new(b.table);
    let primitives = Arc::new(b.primitives);
    let mut instance = PlanningInstance::new(
        format!("htn-{}", params.rng_seed),
        target,
        primitives.clone(),
        table.clone(),
    );
    let (cost, route) =
        brute_force_optimal(&instance, params.depth).expect("table-backed expansion cannot fail");
    let route = route.expect("generated instances are solvable");
    instance.optimal_cost = Some(cost);
    instance.optimal_length = Some(route.len());
    HtnInstance {
        params: params.clone(),
        instance,
        table,
        primitives,
        optimal_route: route,
    }
}

impl HtnInstance {
    /// Writes `cache.jsonl`, `blocks.txt` and `instance.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), DomainError> {
        std::fs::create_dir_all(dir)?;
        let cache = std::fs::File::create(dir.join("cache.jsonl"))?;
        self.table.write_jsonl(std::io::BufWriter::new(cache))?;
        let mut blocks = std::io::BufWriter::new(std::fs::File::create(dir.join("blocks.txt"))?);
        for p in self.primitives.iter() {
            writeln!(blocks, "{p}")?;
        }
        blocks.flush()?;
        let meta = InstanceMeta {
            id: self.instance.id.clone(),
            target: self.instance.target.clone(),
            optimal_cost: self.optimal_route.total_cost,
            optimal_length: self.optimal_route.len(),
            params: self.params.clone(),
        };
        std::fs::write(dir.join("instance.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_instance() {
        let p = HtnParams::default();
        let a = generate_htn(&p);
        let b = generate_htn(&p);
        assert_eq!(a.table, b.table);
        assert_eq!(a.primitives, b.primitives);
        assert_eq!(a.instance.target, b.instance.target);
        assert_eq!(a.instance.optimal_cost, b.instance.optimal_cost);
        let c = generate_htn(&p.with_seed(1));
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn depth_one_optimum_is_cheapest_root_method() {
        for seed in 0..20 {
            let p = HtnParams {
                depth: 1,
                ..HtnParams::default()
            }
            .with_seed(seed);
            let h = generate_htn(&p);
            let methods = h.table.get(&h.instance.target).unwrap();
            for m in methods {
                assert!(m.reactants.iter().all(|r| h.primitives.contains(r)));
            }
            let cheapest = methods.iter().map(|m| m.cost).fold(f64::INFINITY, f64::min);
            assert_eq!(h.instance.optimal_cost, Some(cheapest));
        }
    }

    #[test]
    fn generated_instances_are_solvable() {
        for seed in 0..30 {
            let h = generate_htn(&HtnParams::default().with_seed(seed));
            let cost = h.instance.optimal_cost.unwrap();
            assert!(cost.is_finite() && cost > 0.0);
            h.optimal_route.validate(&h.instance).unwrap();
        }
    }

    #[test]
    fn export_writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let h = generate_htn(&HtnParams::default().with_seed(3));
        h.write_to(dir.path()).unwrap();
        let table = super::super::load_cache(&dir.path().join("cache.jsonl")).unwrap();
        assert_eq!(&table, h.table.as_ref());
        let blocks = super::super::load_blocks(&dir.path().join("blocks.txt")).unwrap();
        assert_eq!(blocks.len(), h.primitives.len());
        assert!(dir.path().join("instance.json").exists());
    }
}

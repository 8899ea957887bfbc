//! Depth-first proof-number search, plain and with additive edge costs.
//!
//! Numbers follow the usual rules. A proved node has `(pn, dn) = (0, inf)`,
//! a disproved one `(inf, 0)`. AND nodes sum proof numbers and take the
//! minimum disproof number; OR nodes do the reverse. Under the additive-cost
//! rule an OR node instead takes `min(h + pn)` over its children, with `h` the
//! cost of the reaction, and counts as proved as soon as one child is.

use serde::Serialize;

use crate::domains::PlanningInstance;
use crate::route::{Route, RouteStep};
use crate::search::{SearchConfig, SearchError, SearchOutcome, SearchStatus};
use crate::value::ValueEstimator;

const INF: f64 = f64::INFINITY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PnsKind {
    Or,
    And,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PnsRule {
    Plain,
    AdditiveCost,
}

/// The numbers of one child as seen from its parent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnsChild {
    /// Edge cost; only read for OR parents under [`PnsRule::AdditiveCost`].
    pub h: f64,
    pub pn: f64,
    pub dn: f64,
}

/// Recomputes `(pn, dn)` of an internal node from its children.
pub fn pns_recompute(kind: PnsKind, rule: PnsRule, children: &[PnsChild]) -> (f64, f64) {
    match kind {
        PnsKind::And => (
            children.iter().map(|c| c.pn).sum(),
            children.iter().map(|c| c.dn).fold(INF, f64::min),
        ),
        PnsKind::Or => {
            let dn = children.iter().map(|c| c.dn).sum();
            let pn = match rule {
                PnsRule::Plain => children.iter().map(|c| c.pn).fold(INF, f64::min),
                PnsRule::AdditiveCost if children.iter().any(|c| c.pn == 0.0) => 0.0,
                PnsRule::AdditiveCost => children.iter().map(|c| c.h + c.pn).fold(INF, f64::min),
            };
            (pn, dn)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PnsNode {
    pub id: usize,
    pub kind: PnsKind,
    /// Molecule for OR nodes, reaction for AND nodes.
    pub label: String,
    /// Reaction cost for AND nodes, 0 for OR nodes.
    pub cost: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub pn: f64,
    pub dn: f64,
    pub expanded: bool,
    pub available: bool,
    /// Proof number given to the node while it is an unexpanded leaf.
    pub leaf_pn: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PnsTree {
    pub rule: PnsRule,
    pub nodes: Vec<PnsNode>,
}

impl PnsTree {
    fn child_numbers(&self, id: usize) -> Vec<PnsChild> {
        self.nodes[id]
            .children
            .iter()
            .map(|&c| PnsChild {
                h: self.nodes[c].cost,
                pn: self.nodes[c].pn,
                dn: self.nodes[c].dn,
            })
            .collect()
    }

    fn numbers(&self, id: usize) -> (f64, f64) {
        let n = &self.nodes[id];
        match n.kind {
            PnsKind::Or if n.available => (0.0, INF),
            PnsKind::Or if !n.expanded => (n.leaf_pn, 1.0),
            kind => pns_recompute(kind, self.rule, &self.child_numbers(id)),
        }
    }

    fn recompute(&mut self, id: usize) {
        let (pn, dn) = self.numbers(id);
        self.nodes[id].pn = pn;
        self.nodes[id].dn = dn;
    }

    /// Checks that every node's stored numbers equal a recomputation from
    /// its children, and that no node has both numbers at zero.
    pub fn verify_fixpoint(&self) -> Result<(), String> {
        for n in &self.nodes {
            let (pn, dn) = self.numbers(n.id);
            if (pn, dn) != (n.pn, n.dn) {
                return Err(format!(
                    "node {} stores ({}, {}) but recomputes to ({pn}, {dn})",
                    n.id, n.pn, n.dn
                ));
            }
            if n.pn == 0.0 && n.dn == 0.0 {
                return Err(format!("node {} has pn = dn = 0", n.id));
            }
            if n.pn == 0.0 && n.dn != INF || n.dn == 0.0 && n.pn != INF {
                return Err(format!("node {} is half proved: ({}, {})", n.id, n.pn, n.dn));
            }
        }
        Ok(())
    }

    fn route_steps(&self, id: usize, steps: &mut Vec<RouteStep>) {
        let n = &self.nodes[id];
        if n.available {
            return;
        }
        let mut best: Option<&PnsNode> = None;
        for &c in &n.children {
            let a = &self.nodes[c];
            if a.pn == 0.0 && best.is_none_or(|b| a.cost < b.cost) {
                best = Some(a);
            }
        }
        let a = best.expect("proved OR node has a proved child");
        steps.push(RouteStep {
            product: n.label.clone(),
            reaction: a.label.clone(),
            cost: a.cost,
            reactants: a.children.iter().map(|&c| self.nodes[c].label.clone()).collect(),
        });
        for &c in &a.children {
            self.route_steps(c, steps);
        }
    }
}

struct Dfpn<'i> {
    instance: &'i PlanningInstance,
    vm: Option<&'i dyn ValueEstimator>,
    config: &'i SearchConfig,
    tree: PnsTree,
    calls: usize,
    out_of_calls: bool,
}

impl Dfpn<'_> {
    fn add_or(&mut self, molecule: String, parent: Option<usize>) -> usize {
        let id = self.tree.nodes.len();
        let available = self.instance.is_available(&molecule);
        let leaf_pn = if available {
            0.0
        } else {
            1.0 + self.vm.map_or(0.0, |vm| vm.estimate(&molecule))
        };
        self.tree.nodes.push(PnsNode {
            id,
            kind: PnsKind::Or,
            label: molecule,
            cost: 0.0,
            parent,
            children: Vec::new(),
            pn: 0.0,
            dn: 0.0,
            expanded: false,
            available,
            leaf_pn,
        });
        self.tree.recompute(id);
        id
    }

    fn ancestors(&self, id: usize) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(i) = cur {
            let n = &self.tree.nodes[i];
            if n.kind == PnsKind::Or {
                out.push(n.label.as_str());
            }
            cur = n.parent;
        }
        out
    }

    fn expand(&mut self, id: usize) -> Result<(), SearchError> {
        let molecule = self.tree.nodes[id].label.clone();
        let result = self.instance.expand(&molecule)?;
        self.calls += 1;
        let banned: Vec<String> = if self.config.cycle_filter {
            self.ancestors(id).into_iter().map(String::from).collect()
        } else {
            Vec::new()
        };
        for p in result.proposals {
            if p.reactants.iter().any(|r| banned.contains(r)) {
                continue;
            }
            let and_id = self.tree.nodes.len();
            self.tree.nodes.push(PnsNode {
                id: and_id,
                kind: PnsKind::And,
                label: p.reaction,
                cost: p.cost,
                parent: Some(id),
                children: Vec::new(),
                pn: 0.0,
                dn: 0.0,
                expanded: true,
                available: false,
                leaf_pn: 0.0,
            });
            let kids: Vec<usize> = p
                .reactants
                .into_iter()
                .map(|r| self.add_or(r, Some(and_id)))
                .collect();
            self.tree.nodes[and_id].children = kids;
            self.tree.recompute(and_id);
            self.tree.nodes[id].children.push(and_id);
        }
        self.tree.nodes[id].expanded = true;
        self.tree.recompute(id);
        Ok(())
    }

    /// Picks the child to descend into and its thresholds.
    fn select(&self, id: usize, thpn: f64, thdn: f64) -> (usize, f64, f64) {
        let n = &self.tree.nodes[id];
        let additive = self.tree.rule == PnsRule::AdditiveCost;
        let mut best = (INF, usize::MAX);
        let mut second = INF;
        for &c in &n.children {
            let ch = &self.tree.nodes[c];
            let key = match n.kind {
                PnsKind::Or if additive => ch.cost + ch.pn,
                PnsKind::Or => ch.pn,
                PnsKind::And => ch.dn,
            };
            if best.1 == usize::MAX || key < best.0 {
                second = best.0;
                best = (key, c);
            } else if key < second {
                second = key;
            }
        }
        let c = &self.tree.nodes[best.1];
        match n.kind {
            PnsKind::Or => {
                let h = if additive { c.cost } else { 0.0 };
                let pn_th = thpn.min(second + 1.0) - h;
                let dn_th = if thdn == INF { INF } else { thdn - n.dn + c.dn };
                (best.1, pn_th, dn_th)
            }
            PnsKind::And => {
                let pn_th = if thpn == INF { INF } else { thpn - n.pn + c.pn };
                (best.1, pn_th, thdn.min(second + 1.0))
            }
        }
    }

    fn mid(&mut self, id: usize, thpn: f64, thdn: f64) -> Result<(), SearchError> {
        let n = &self.tree.nodes[id];
        if n.kind == PnsKind::Or && !n.expanded && !n.available {
            if self.calls == self.config.call_limit {
                self.out_of_calls = true;
                return Ok(());
            }
            self.expand(id)?;
        }
        loop {
            self.tree.recompute(id);
            let n = &self.tree.nodes[id];
            if n.pn >= thpn || n.dn >= thdn || self.out_of_calls {
                return Ok(());
            }
            let (c, cpn, cdn) = self.select(id, thpn, thdn);
            let before = (self.tree.nodes[c].pn, self.tree.nodes[c].dn, self.calls);
            self.mid(c, cpn, cdn)?;
            let after = (self.tree.nodes[c].pn, self.tree.nodes[c].dn, self.calls);
            if after == before {
                // threshold rounding left the child exactly where it was
                self.tree.recompute(id);
                return Ok(());
            }
        }
    }
}

/// Runs the search and also returns the final proof tree.
pub fn dfpn_search_tree(
    instance: &PlanningInstance,
    vm: Option<&dyn ValueEstimator>,
    config: &SearchConfig,
    rule: PnsRule,
) -> Result<(SearchOutcome, PnsTree), SearchError> {
    let mut s = Dfpn {
        instance,
        vm,
        config,
        tree: PnsTree {
            rule,
            nodes: Vec::new(),
        },
        calls: 0,
        out_of_calls: false,
    };
    s.add_or(instance.target.clone(), None);
    loop {
        let root = &s.tree.nodes[0];
        if root.pn == 0.0 || root.dn == 0.0 || s.out_of_calls {
            break;
        }
        let before = (root.pn, root.dn, s.calls);
        s.mid(0, INF, INF)?;
        let root = &s.tree.nodes[0];
        if (root.pn, root.dn, s.calls) == before {
            log::warn!("proof-number search stalled on {}", instance.id);
            break;
        }
    }
    let root = &s.tree.nodes[0];
    let outcome = if root.pn == 0.0 {
        let mut steps = Vec::new();
        s.tree.route_steps(0, &mut steps);
        SearchOutcome::solved(Route::from_steps(instance.target.clone(), steps), s.calls)
    } else if s.out_of_calls {
        SearchOutcome::unsolved(SearchStatus::LimitReached, s.calls)
    } else {
        SearchOutcome::unsolved(SearchStatus::Exhausted, s.calls)
    };
    Ok((outcome, s.tree))
}

pub fn dfpn_search(
    instance: &PlanningInstance,
    vm: Option<&dyn ValueEstimator>,
    config: &SearchConfig,
    rule: PnsRule,
) -> Result<SearchOutcome, SearchError> {
    dfpn_search_tree(instance, vm, config, rule).map(|(o, _)| o)
}

/// DFPN-E: additive reaction costs on OR nodes. With `vm`, unexpanded leaves
/// start at `1 + vm(m)` instead of 1.
pub fn dfpn_e_search(
    instance: &PlanningInstance,
    vm: Option<&dyn ValueEstimator>,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    dfpn_search(instance, vm, config, PnsRule::AdditiveCost)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Arc;

    use super::*;
    use crate::domains::fixtures::two_route_instance;
    use crate::domains::{random_graph, RandomGraphParams, ReactionTable};

    fn child(h: f64, pn: f64, dn: f64) -> PnsChild {
        PnsChild { h, pn, dn }
    }

    #[test]
    fn or_min_rule() {
        let kids = [child(0.0, 3.0, 1.0), child(0.0, 1.0, 1.0), child(0.0, 2.0, 1.0)];
        assert_eq!(pns_recompute(PnsKind::Or, PnsRule::Plain, &kids), (1.0, 3.0));
    }

    #[test]
    fn and_sum_rule() {
        let kids = [child(0.0, 1.0, 4.0), child(0.0, 2.0, 5.0)];
        assert_eq!(pns_recompute(PnsKind::And, PnsRule::Plain, &kids), (3.0, 4.0));
    }

    #[test]
    fn additive_or_rule() {
        let kids = [child(0.5, 2.0, 1.0), child(1.0, 1.0, 1.0)];
        assert_eq!(pns_recompute(PnsKind::Or, PnsRule::AdditiveCost, &kids).0, 2.0);
        // a proved child proves the parent regardless of its edge cost
        let kids = [child(3.0, 0.0, INF), child(0.1, 1.0, 1.0)];
        assert_eq!(
            pns_recompute(PnsKind::Or, PnsRule::AdditiveCost, &kids),
            (0.0, INF)
        );
    }

    #[test]
    fn two_route_solved() {
        let inst = two_route_instance();
        let (out, tree) =
            dfpn_search_tree(&inst, None, &SearchConfig::default(), PnsRule::AdditiveCost).unwrap();
        assert_eq!(out.status, SearchStatus::Solved);
        assert!(out.calls_used >= 1);
        out.route.unwrap().validate(&inst).unwrap();
        tree.verify_fixpoint().unwrap();
    }

    #[test]
    fn unsynthesizable_is_disproved() {
        let mut table = ReactionTable::new();
        table.insert("t", vec![crate::Proposal::new("R", 1.0, &["x"])]);
        let inst = PlanningInstance::new("dead", "t", Arc::new(HashSet::<String>::new()), Arc::new(table));
        let (out, tree) =
            dfpn_search_tree(&inst, None, &SearchConfig::default(), PnsRule::AdditiveCost).unwrap();
        assert_eq!(out.status, SearchStatus::Exhausted);
        assert_eq!(tree.nodes[0].pn, INF);
        assert_eq!(out.calls_used, 2);
    }

    #[test]
    fn random_graphs_keep_fixpoint() {
        for seed in 0..50 {
            let g = random_graph(&RandomGraphParams {
                rng_seed: seed,
                molecules: 12,
                ..RandomGraphParams::default()
            });
            for rule in [PnsRule::Plain, PnsRule::AdditiveCost] {
                for limit in [3, 50] {
                    let cfg = SearchConfig::default().with_limit(limit);
                    let (out, tree) = dfpn_search_tree(&g.instance, None, &cfg, rule).unwrap();
                    tree.verify_fixpoint().unwrap();
                    assert!(out.calls_used <= limit);
                    if let Some(r) = &out.route {
                        r.validate(&g.instance).unwrap();
                    }
                }
            }
        }
    }
}

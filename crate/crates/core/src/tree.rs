//! The AND-OR search tree and its incremental bookkeeping.
//!
//! OR nodes are molecules, AND nodes are reactions. Every node caches its
//! reaction number `rn`:
//!
//! * frontier OR node: the oracle estimate `vm`
//! * available OR node: 0
//! * expanded OR node: min over child reactions (`+inf` for a dead end)
//! * AND node: `cost + sum` of its children
//!
//! AND nodes also cache `vt`, the estimated cost of the best plan through
//! any of their child molecules:
//!
//! ```text
//! vt(R) = vt(parent) - rn(parent) + rn(R),   vt(root) = rn(root)
//! ```
//!
//! which unrolls to the reaction costs on the path to the root plus the rn
//! of every molecule hanging off that path.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::domains::{BuildingBlocks, ExpansionResult};
use crate::route::{Route, RouteStep};
use crate::value::ValueEstimator;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node {0} is already expanded")]
    ExpandOnExpandedNode(NodeId),
    #[error("node {0} is an available molecule")]
    ExpandOnAvailable(NodeId),
    #[error("node {0} is not a molecule node")]
    NotAnOrNode(NodeId),
    #[error("the frontier is empty")]
    EmptyFrontier,
    #[error("no route found: the root is not solved")]
    NoRouteFound,
    #[error("reaction {reaction} has negative cost {cost}")]
    NegativeCost { reaction: String, cost: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct OrNode {
    pub id: NodeId,
    pub molecule: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub rn: f64,
    pub is_expanded: bool,
    pub is_available: bool,
    pub is_solved: bool,
    pub vm_estimate: f64,
    /// Cheapest solved plan below this node, `+inf` while unsolved.
    pub solved_cost: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AndNode {
    pub id: NodeId,
    pub reaction: String,
    pub cost: f64,
    pub parent: NodeId,
    pub children: Vec<NodeId>,
    pub rn: f64,
    pub vt: f64,
    pub is_solved: bool,
    pub solved_cost: f64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Or(OrNode),
    And(AndNode),
}

impl Node {
    pub fn rn(&self) -> f64 {
        match self {
            Node::Or(n) => n.rn,
            Node::And(n) => n.rn,
        }
    }

    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Or(n) => &n.children,
            Node::And(n) => &n.children,
        }
    }

    pub fn parent(&self) -> Option<NodeId> {
        match self {
            Node::Or(n) => n.parent,
            Node::And(n) => Some(n.parent),
        }
    }

    pub fn is_solved(&self) -> bool {
        match self {
            Node::Or(n) => n.is_solved,
            Node::And(n) => n.is_solved,
        }
    }

    pub fn as_or(&self) -> Option<&OrNode> {
        match self {
            Node::Or(n) => Some(n),
            Node::And(_) => None,
        }
    }

    pub fn as_and(&self) -> Option<&AndNode> {
        match self {
            Node::And(n) => Some(n),
            Node::Or(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Key(f64, NodeId);

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Adds `delta` to a cached value; `+inf` absorbs everything.
fn shift(v: f64, delta: f64) -> f64 {
    if v == f64::INFINITY || delta == f64::INFINITY {
        f64::INFINITY
    } else {
        v + delta
    }
}

/// `new - old` with the convention that an unchanged infinity moves by 0.
fn diff(new: f64, old: f64) -> f64 {
    if new == old {
        0.0
    } else if new == f64::INFINITY {
        f64::INFINITY
    } else {
        new - old
    }
}

/// `vt` of an AND child given its parent's `vt` and `rn`.
fn child_vt(parent_vt: f64, parent_rn: f64, child_rn: f64) -> f64 {
    if parent_vt == f64::INFINITY || child_rn == f64::INFINITY {
        f64::INFINITY
    } else {
        parent_vt - parent_rn + child_rn
    }
}

/// Flat dump of the tree for debugging.
#[derive(Debug, Serialize)]
pub struct Snapshot<'t> {
    pub root: NodeId,
    pub expansions: usize,
    pub nodes: &'t [Node],
}

pub struct SearchTree<'a> {
    nodes: Vec<Node>,
    root: NodeId,
    heap: BinaryHeap<Reverse<Key>>,
    frontier_len: usize,
    expansion_count: usize,
    stock: &'a dyn BuildingBlocks,
    vm: &'a dyn ValueEstimator,
    cycle_filter: bool,
    visited: Vec<NodeId>,
}

impl<'a> SearchTree<'a> {
    pub fn new(target: &str, stock: &'a dyn BuildingBlocks, vm: &'a dyn ValueEstimator) -> Self {
        assert!(!target.is_empty(), "target must be a nonempty id");
        let mut tree = SearchTree {
            nodes: Vec::new(),
            root: 0,
            heap: BinaryHeap::new(),
            frontier_len: 0,
            expansion_count: 0,
            stock,
            vm,
            cycle_filter: true,
            visited: Vec::new(),
        };
        tree.add_or(target.to_string(), None);
        tree.push_frontier(0, tree.nodes[0].rn());
        tree
    }

    /// Turns the ancestor-cycle filter on or off (on by default).
    pub fn with_cycle_filter(mut self, on: bool) -> Self {
        self.cycle_filter = on;
        self
    }

    fn add_or(&mut self, molecule: String, parent: Option<NodeId>) -> NodeId {
        let id = self.nodes.len();
        let is_available = self.stock.is_available(&molecule);
        let (vm, rn) = if is_available {
            (0.0, 0.0)
        } else {
            let v = self.vm.estimate(&molecule);
            debug_assert!(v >= 0.0, "oracle returned {v} for {molecule}");
            (v, v)
        };
        if !is_available {
            self.frontier_len += 1;
        }
        self.nodes.push(Node::Or(OrNode {
            id,
            molecule,
            parent,
            children: Vec::new(),
            rn,
            is_expanded: false,
            is_available,
            is_solved: is_available,
            vm_estimate: vm,
            solved_cost: if is_available { 0.0 } else { f64::INFINITY },
        }));
        id
    }

    fn push_frontier(&mut self, id: NodeId, vt: f64) {
        if let Node::Or(n) = &self.nodes[id] {
            if !n.is_expanded && !n.is_available {
                self.heap.push(Reverse(Key(vt, id)));
            }
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expansion_count(&self) -> usize {
        self.expansion_count
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier_len
    }

    /// Frontier node ids in creation order.
    pub fn frontier(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter_map(Node::as_or)
            .filter(|n| !n.is_expanded && !n.is_available)
            .map(|n| n.id)
            .collect()
    }

    pub fn or_node(&self, id: NodeId) -> Result<&OrNode, TreeError> {
        self.nodes[id].as_or().ok_or(TreeError::NotAnOrNode(id))
    }

    pub fn is_solved(&self) -> bool {
        self.nodes[self.root].is_solved()
    }

    /// Cost of the cheapest solved plan for the root.
    pub fn solved_cost(&self) -> f64 {
        self.or_node(self.root).map_or(f64::INFINITY, |n| n.solved_cost)
    }

    pub fn root_rn(&self) -> f64 {
        self.nodes[self.root].rn()
    }

    /// Cached `vt` of an OR node.
    pub fn vt(&self, m: NodeId) -> f64 {
        match self.nodes[m].parent() {
            None => self.nodes[m].rn(),
            Some(p) => self.nodes[p].as_and().expect("OR parents are AND nodes").vt,
        }
    }

    /// Node ids touched by the last `update`, in visit order.
    pub fn last_update_visits(&self) -> &[NodeId] {
        &self.visited
    }

    fn ancestor_molecules(&self, m: NodeId) -> HashSet<&str> {
        let mut out = HashSet::new();
        let mut cur = Some(m);
        while let Some(id) = cur {
            if let Node::Or(n) = &self.nodes[id] {
                out.insert(n.molecule.as_str());
            }
            cur = self.nodes[id].parent();
        }
        out
    }

    /// Drops stale heap entries and returns the best live one.
    fn peek_frontier(&mut self) -> Option<Key> {
        while let Some(&Reverse(key)) = self.heap.peek() {
            let live = match &self.nodes[key.1] {
                Node::Or(n) => !n.is_expanded && self.vt(key.1).total_cmp(&key.0).is_eq(),
                Node::And(_) => false,
            };
            if live {
                return Some(key);
            }
            self.heap.pop();
        }
        None
    }

    /// Frontier node with minimal `vt`, ties to the lowest id.
    pub fn select_next(&mut self) -> Result<NodeId, TreeError> {
        self.peek_frontier().map(|k| k.1).ok_or(TreeError::EmptyFrontier)
    }

    /// Minimal `vt` over the frontier, `+inf` when it is empty.
    pub fn min_frontier_vt(&mut self) -> f64 {
        self.peek_frontier().map_or(f64::INFINITY, |k| k.0)
    }

    /// Hangs one AND node per proposal under `m`, with one OR child per
    /// reactant. Proposals that would repeat an ancestor molecule are dropped
    /// when the cycle filter is on. Cached values are left for `update`.
    pub fn expand(&mut self, m: NodeId, result: &ExpansionResult) -> Result<Vec<NodeId>, TreeError> {
        let node = self.or_node(m)?;
        if node.is_available {
            return Err(TreeError::ExpandOnAvailable(m));
        }
        if node.is_expanded {
            return Err(TreeError::ExpandOnExpandedNode(m));
        }
        for p in &result.proposals {
            if !(p.cost >= 0.0) {
                return Err(TreeError::NegativeCost {
                    reaction: p.reaction.clone(),
                    cost: p.cost,
                });
            }
        }
        let kept: Vec<_> = if self.cycle_filter {
            let seen = self.ancestor_molecules(m);
            result
                .proposals
                .iter()
                .filter(|p| p.reactants.iter().all(|r| !seen.contains(r.as_str())))
                .cloned()
                .collect()
        } else {
            result.proposals.clone()
        };

        if let Node::Or(n) = &mut self.nodes[m] {
            n.is_expanded = true;
        }
        self.frontier_len -= 1;
        self.expansion_count += 1;

        let mut created = Vec::new();
        for p in kept {
            let and_id = self.nodes.len();
            self.nodes.push(Node::And(AndNode {
                id: and_id,
                reaction: p.reaction,
                cost: p.cost,
                parent: m,
                children: Vec::new(),
                rn: f64::NAN,
                vt: f64::NAN,
                is_solved: false,
                solved_cost: f64::INFINITY,
            }));
            created.push(and_id);
            let mut kids = Vec::with_capacity(p.reactants.len());
            for r in p.reactants {
                let or_id = self.add_or(r, Some(and_id));
                created.push(or_id);
                kids.push(or_id);
            }
            if let Node::And(a) = &mut self.nodes[and_id] {
                a.children = kids;
            }
            if let Node::Or(n) = &mut self.nodes[m] {
                n.children.push(and_id);
            }
        }
        Ok(created)
    }

    fn or_rn_from_children(&self, id: NodeId) -> f64 {
        self.nodes[id]
            .children()
            .iter()
            .map(|&c| self.nodes[c].rn())
            .fold(f64::INFINITY, f64::min)
    }

    fn and_rn_from_children(&self, a: &AndNode) -> f64 {
        a.cost + a.children.iter().map(|&c| self.nodes[c].rn()).sum::<f64>()
    }

    fn set_rn(&mut self, id: NodeId, rn: f64) {
        match &mut self.nodes[id] {
            Node::Or(n) => n.rn = rn,
            Node::And(n) => n.rn = rn,
        }
    }

    fn set_vt(&mut self, and_id: NodeId, vt: f64) {
        if let Node::And(a) = &mut self.nodes[and_id] {
            a.vt = vt;
        }
        let kids = self.nodes[and_id].children().to_vec();
        for c in kids {
            self.push_frontier(c, vt);
        }
    }

    /// Brings every cached value in line after `expand(m)`.
    ///
    /// The new reaction numbers at `m` are pushed up the ancestor path until
    /// one stops changing. Then the `vt` values are rewritten top-down along
    /// that path, and every subtree hanging off it is shifted by the change
    /// of its attachment point. Solved flags and solved costs are refreshed
    /// by a separate upward pass.
    pub fn update(&mut self, m: NodeId) {
        self.visited.clear();
        self.visited.push(m);

        // fresh reactions under m
        let fresh: Vec<NodeId> = self.nodes[m].children().to_vec();
        for &a in &fresh {
            let (rn, solved, cost) = {
                let and = self.nodes[a]
                    .as_and()
                    .expect("children of OR nodes are AND nodes");
                let solved = and.children.iter().all(|&c| self.nodes[c].is_solved());
                (self.and_rn_from_children(and), solved, and.cost)
            };
            self.visited.push(a);
            if let Node::And(and) = &mut self.nodes[a] {
                and.rn = rn;
                and.is_solved = solved;
                and.solved_cost = if solved { cost } else { f64::INFINITY };
            }
        }

        // rn, bottom-up: path[i] is an OR node, path[i + 1] its AND parent
        let mut path = vec![m];
        let mut old_rn = vec![self.nodes[m].rn()];
        let new = self.or_rn_from_children(m);
        self.set_rn(m, new);
        let mut delta = diff(new, old_rn[0]);
        let mut cur = m;
        while delta != 0.0 {
            let Some(and_id) = self.nodes[cur].parent() else {
                break;
            };
            let or_id = self.nodes[and_id].parent().expect("AND nodes have parents");
            self.visited.push(and_id);
            self.visited.push(or_id);
            let and_old = self.nodes[and_id].rn();
            let and_new = self.and_rn_from_children(self.nodes[and_id].as_and().unwrap());
            self.set_rn(and_id, and_new);
            let or_old = self.nodes[or_id].rn();
            let or_new = self.or_rn_from_children(or_id);
            self.set_rn(or_id, or_new);
            path.push(and_id);
            old_rn.push(and_old);
            path.push(or_id);
            old_rn.push(or_old);
            delta = diff(or_new, or_old);
            cur = or_id;
        }

        // vt, top-down along the changed path. The stored vt of each AND
        // child is still the old value, so the shift for its subtree is the
        // difference to the recomputed one.
        let mut i = path.len() - 1;
        let mut vt_x = self.vt(path[i]);
        loop {
            let x = path[i];
            let rn_x = self.nodes[x].rn();
            let on_path = if i >= 2 { Some(path[i - 1]) } else { None };
            let kids = self.nodes[x].children().to_vec();
            for c in kids {
                let new_vt = child_vt(vt_x, rn_x, self.nodes[c].rn());
                if i == 0 {
                    self.set_vt(c, new_vt);
                    continue;
                }
                let d = diff(new_vt, self.nodes[c].as_and().unwrap().vt);
                if d == 0.0 {
                    continue;
                }
                self.visited.push(c);
                self.set_vt(c, new_vt);
                let skip = if Some(c) == on_path {
                    Some(path[i - 2])
                } else {
                    None
                };
                for s in self.nodes[c].children().to_vec() {
                    if Some(s) != skip {
                        self.shift_subtree(s, d);
                    }
                }
            }
            if i == 0 {
                break;
            }
            vt_x = self.nodes[path[i - 1]].as_and().unwrap().vt;
            i -= 2;
        }

        self.propagate_solved(m);
    }

    /// Adds `delta` to the `vt` of every AND node under OR node `s`.
    fn shift_subtree(&mut self, s: NodeId, delta: f64) {
        self.visited.push(s);
        let mut stack: Vec<NodeId> = self.nodes[s].children().to_vec();
        while let Some(a) = stack.pop() {
            self.visited.push(a);
            let vt = shift(self.nodes[a].as_and().unwrap().vt, delta);
            self.set_vt(a, vt);
            for &o in self.nodes[a].children() {
                self.visited.push(o);
                stack.extend_from_slice(self.nodes[o].children());
            }
        }
    }

    fn propagate_solved(&mut self, m: NodeId) {
        let mut cur = Some(m);
        while let Some(id) = cur {
            let changed = match &self.nodes[id] {
                Node::Or(n) => {
                    let best = n
                        .children
                        .iter()
                        .map(|&c| self.nodes[c].as_and().unwrap().solved_cost)
                        .fold(if n.is_available { 0.0 } else { f64::INFINITY }, f64::min);
                    let solved = n.is_available || n.children.iter().any(|&c| self.nodes[c].is_solved());
                    let changed = solved != n.is_solved || best != n.solved_cost;
                    if let Node::Or(n) = &mut self.nodes[id] {
                        n.is_solved = solved;
                        n.solved_cost = best;
                    }
                    changed
                }
                Node::And(a) => {
                    let solved = a.children.iter().all(|&c| self.nodes[c].is_solved());
                    let best = if solved {
                        a.cost
                            + a.children
                                .iter()
                                .map(|&c| self.nodes[c].as_or().unwrap().solved_cost)
                                .sum::<f64>()
                    } else {
                        f64::INFINITY
                    };
                    let changed = solved != a.is_solved || best != a.solved_cost;
                    if let Node::And(a) = &mut self.nodes[id] {
                        a.is_solved = solved;
                        a.solved_cost = best;
                    }
                    changed
                }
            };
            if !changed && id != m {
                break;
            }
            cur = self.nodes[id].parent();
        }
    }

    /// Reaction number recomputed from scratch.
    pub fn rn_reference(&self, id: NodeId) -> f64 {
        match &self.nodes[id] {
            Node::Or(n) if n.is_available => 0.0,
            Node::Or(n) if !n.is_expanded => n.vm_estimate,
            Node::Or(n) => n
                .children
                .iter()
                .map(|&c| self.rn_reference(c))
                .fold(f64::INFINITY, f64::min),
            Node::And(a) => a.cost + a.children.iter().map(|&c| self.rn_reference(c)).sum::<f64>(),
        }
    }

    /// `vt` of OR node `m` recomputed from scratch: reaction costs on the
    /// path to the root, plus `rn` of `m` and of every molecule hanging off
    /// that path.
    pub fn vt_reference(&self, m: NodeId) -> f64 {
        let mut total = self.rn_reference(m);
        let mut below = m;
        let mut cur = self.nodes[m].parent();
        while let Some(a) = cur {
            let and = self.nodes[a].as_and().expect("OR parents are AND nodes");
            total += and.cost;
            for &s in &and.children {
                if s != below {
                    total += self.rn_reference(s);
                }
            }
            below = and.parent;
            cur = self.nodes[and.parent].parent();
        }
        total
    }

    /// The cheapest solved plan: at each molecule, the solved reaction with
    /// the smallest solved cost, ties to the lowest id.
    pub fn extract_best_route(&self) -> Result<Route, TreeError> {
        if !self.is_solved() {
            return Err(TreeError::NoRouteFound);
        }
        let mut steps = Vec::new();
        self.collect_steps(self.root, &mut steps);
        let target = self.or_node(self.root)?.molecule.clone();
        Ok(Route::from_steps(target, steps))
    }

    fn collect_steps(&self, or_id: NodeId, steps: &mut Vec<RouteStep>) {
        let n = self.nodes[or_id].as_or().unwrap();
        if n.is_available {
            return;
        }
        let mut best: Option<&AndNode> = None;
        for &c in &n.children {
            let a = self.nodes[c].as_and().unwrap();
            if a.is_solved && best.is_none_or(|b| a.solved_cost < b.solved_cost) {
                best = Some(a);
            }
        }
        let a = best.expect("solved OR node has a solved child");
        steps.push(RouteStep {
            product: n.molecule.clone(),
            reaction: a.reaction.clone(),
            cost: a.cost,
            reactants: a
                .children
                .iter()
                .map(|&c| self.nodes[c].as_or().unwrap().molecule.clone())
                .collect(),
        });
        for &c in &a.children {
            self.collect_steps(c, steps);
        }
    }

    /// Checks every cached value against the from-scratch definitions:
    /// `rn`, `vt`, solved flags and frontier membership. `tol` is an
    /// absolute tolerance for the floating-point comparisons.
    pub fn verify_caches(&self, tol: f64) -> Result<(), String> {
        let close = |a: f64, b: f64| a == b || (a - b).abs() <= tol;
        for node in &self.nodes {
            let id = match node {
                Node::Or(n) => n.id,
                Node::And(a) => a.id,
            };
            let r = self.rn_reference(id);
            if !close(node.rn(), r) {
                return Err(format!("node {id}: cached rn {} vs reference {r}", node.rn()));
            }
            match node {
                Node::Or(n) => {
                    let v = self.vt_reference(id);
                    if !close(self.vt(id), v) {
                        return Err(format!("node {id}: cached vt {} vs reference {v}", self.vt(id)));
                    }
                    let solved = n.is_available || n.children.iter().any(|&c| self.nodes[c].is_solved());
                    if solved != n.is_solved {
                        return Err(format!("node {id}: solved flag {} is stale", n.is_solved));
                    }
                    if n.is_available && (n.rn != 0.0 || !n.children.is_empty()) {
                        return Err(format!("available node {id} has rn {} or children", n.rn));
                    }
                    if n.is_expanded && n.children.is_empty() && n.rn != f64::INFINITY {
                        return Err(format!("dead end {id} has finite rn {}", n.rn));
                    }
                }
                Node::And(a) => {
                    let solved = a.children.iter().all(|&c| self.nodes[c].is_solved());
                    if solved != a.is_solved {
                        return Err(format!("node {id}: solved flag {} is stale", a.is_solved));
                    }
                }
            }
        }
        let live = self.frontier();
        if live.len() != self.frontier_len {
            return Err(format!(
                "frontier count {} but {} unexpanded nodes",
                self.frontier_len,
                live.len()
            ));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            root: self.root,
            expansions: self.expansion_count,
            nodes: &self.nodes,
        }
    }

    /// JSON dump of every node. Infinite numbers are written as `null`.
    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("tree snapshot serializes")
    }
}

//! Comparison searchers over the same expansion interface.

mod greedy;
mod mcts;
mod pns;

pub use greedy::greedy_dfs;
pub use mcts::{mcts_search, MctsConfig};
pub use pns::{
    dfpn_e_search, dfpn_search, dfpn_search_tree, pns_recompute, PnsChild, PnsKind, PnsNode, PnsRule, PnsTree,
};

//! File-backed expansion caches.
//!
//! A cache is UTF-8 JSON Lines, one product per line:
//!
//! ```text
//! {"mol": "t", "proposals": [{"rxn": "R1", "prob": 0.9, "reactants": ["a"]}]}
//! ```
//!
//! Each proposal carries exactly one of `cost` (>= 0) or `prob` (in (0, 1]);
//! probabilities become costs through `cost = -ln p`. Building-block lists
//! are plain text, one id per line.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainError, Proposal, ReactionTable};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheLine {
    mol: String,
    proposals: Vec<CacheProposal>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheProposal {
    rxn: String,
    #[serde(default)]
    cost: Option<f64>,
    #[serde(default)]
    prob: Option<f64>,
    reactants: Vec<String>,
}

#[derive(Serialize)]
struct CacheLineOut<'a> {
    mol: &'a str,
    proposals: Vec<CacheProposalOut<'a>>,
}

#[derive(Serialize)]
struct CacheProposalOut<'a> {
    rxn: &'a str,
    cost: f64,
    reactants: &'a [String],
}

pub fn parse_cache<R: BufRead>(reader: R) -> Result<ReactionTable, DomainError> {
    let mut table = ReactionTable::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| DomainError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut proposals = Vec::with_capacity(parsed.proposals.len());
        for p in parsed.proposals {
            let cost = match (p.cost, p.prob) {
                (Some(c), None) => c,
                (None, Some(prob)) => {
                    if !(prob > 0.0 && prob <= 1.0) {
                        return Err(DomainError::Parse {
                            line: line_no,
                            message: format!("probability {prob} of {} outside (0, 1]", p.rxn),
                        });
                    }
                    // -ln(1) is -0.0; normalise the sign
                    -prob.ln() + 0.0
                }
                _ => {
                    return Err(DomainError::Parse {
                        line: line_no,
                        message: format!("reaction {} needs exactly one of cost/prob", p.rxn),
                    })
                }
            };
            if !(cost >= 0.0) || !cost.is_finite() {
                return Err(DomainError::NegativeCost {
                    line: line_no,
                    reaction: p.rxn,
                    cost,
                });
            }
            if p.reactants.is_empty() {
                return Err(DomainError::EmptyReactants {
                    line: line_no,
                    reaction: p.rxn,
                });
            }
            let mut reactants = p.reactants;
            dedup_in_order(&mut reactants);
            proposals.push(Proposal {
                reaction: p.rxn,
                cost,
                reactants,
            });
        }
        table.insert(parsed.mol, proposals);
    }
    Ok(table)
}

fn dedup_in_order(v: &mut Vec<String>) {
    let mut seen = HashSet::new();
    v.retain(|s| seen.insert(s.clone()));
}

pub fn load_cache(path: &Path) -> Result<ReactionTable, DomainError> {
    parse_cache(BufReader::new(std::fs::File::open(path)?))
}

pub fn parse_blocks<R: BufRead>(reader: R) -> Result<HashSet<String>, DomainError> {
    let mut set = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            set.insert(id.to_string());
        }
    }
    Ok(set)
}

pub fn load_blocks(path: &Path) -> Result<HashSet<String>, DomainError> {
    parse_blocks(BufReader::new(std::fs::File::open(path)?))
}

impl ReactionTable {
    /// Writes the table as a cache file (costs, never probabilities).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), DomainError> {
        for (mol, proposals) in self.iter() {
            let line = CacheLineOut {
                mol,
                proposals: proposals
                    .iter()
                    .map(|p| CacheProposalOut {
                        rxn: &p.reaction,
                        cost: p.cost,
                        reactants: &p.reactants,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

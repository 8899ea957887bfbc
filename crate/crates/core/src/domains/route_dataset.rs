//! Best-route extraction over a reaction hypergraph.
//!
//! Given known reactions and a set of building blocks, every molecule gets
//! the cost of its cheapest derivation: `v(m) = 0` for blocks, otherwise the
//! minimum over producing reactions of `c + sum v(reactants)`. The values are
//! found by Bellman-Ford style sweeps until nothing changes. Each
//! synthesizable non-block molecule then becomes one training tuple.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BuildingBlocks, DomainError, HashedFeaturizer};
use crate::value::{RouteTuple, TupleCandidate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionRecord {
    #[serde(rename = "rxn")]
    pub id: String,
    pub product: String,
    pub reactants: Vec<String>,
    #[serde(default = "unit_cost")]
    pub cost: f64,
}

fn unit_cost() -> f64 {
    1.0
}

/// How reaction costs enter `v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Every reaction costs 1, so `v` is the route length.
    Unit,
    /// Reaction costs as given.
    Cost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub mode: CostMode,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetCandidate {
    pub reaction: String,
    pub cost: f64,
    pub reactants: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub target: String,
    pub v: f64,
    pub best_reaction: usize,
    pub candidates: Vec<DatasetCandidate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteDataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
    /// Features of every molecule referenced by a record.
    pub features: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FeatureLine {
    mol: String,
    features: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BodyLine {
    Record(DatasetRecord),
    Features(FeatureLine),
}

/// Solves the fixpoint and builds one record per synthesizable non-block
/// molecule. Candidates are every producing reaction, ordered by reaction
/// id; ties for the best go to the lowest id.
pub fn extract_route_dataset(
    reactions: &[ReactionRecord],
    blocks: &dyn BuildingBlocks,
    mode: CostMode,
    featurizer: &HashedFeaturizer,
) -> Result<RouteDataset, DomainError> {
    let cost_of = |r: &ReactionRecord| match mode {
        CostMode::Unit => 1.0,
        CostMode::Cost => r.cost,
    };
    for r in reactions {
        if !(cost_of(r) >= 0.0) {
            return Err(DomainError::NegativeCost {
                line: 0,
                reaction: r.id.clone(),
                cost: r.cost,
            });
        }
        if r.reactants.is_empty() {
            return Err(DomainError::EmptyReactants {
                line: 0,
                reaction: r.id.clone(),
            });
        }
    }

    let values = solve_values(reactions, blocks, &cost_of)?;

    let mut producers: BTreeMap<&str, Vec<&ReactionRecord>> = BTreeMap::new();
    for r in reactions {
        producers.entry(r.product.as_str()).or_default().push(r);
    }

    let mut records = Vec::new();
    let mut referenced = BTreeSet::new();
    for (product, mut rxns) in producers {
        if blocks.is_available(product) {
            continue;
        }
        let v = values[product];
        if !v.is_finite() {
            continue;
        }
        rxns.sort_by(|a, b| a.id.cmp(&b.id));
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        let candidates: Vec<DatasetCandidate> = rxns
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let total = path_cost(cost_of(r), r, &values);
                if total < best_cost {
                    best_cost = total;
                    best = i;
                }
                DatasetCandidate {
                    reaction: r.id.clone(),
                    cost: cost_of(r),
                    reactants: r.reactants.clone(),
                }
            })
            .collect();
        debug_assert_eq!(best_cost, v);
        referenced.insert(product.to_string());
        for c in &candidates {
            referenced.extend(c.reactants.iter().cloned());
        }
        records.push(DatasetRecord {
            target: product.to_string(),
            v,
            best_reaction: best,
            candidates,
        });
    }

    let features = referenced
        .into_iter()
        .map(|m| {
            let f = featurizer.features(&m);
            (m, f)
        })
        .collect();
    Ok(RouteDataset {
        header: DatasetHeader {
            mode,
            feature_dim: featurizer.dim,
        },
        records,
        features,
    })
}

/// `c + v(r1) + v(r2) + ...` summed left to right, the same order the
/// brute-force oracle uses, so both agree bit for bit.
fn path_cost(cost: f64, r: &ReactionRecord, values: &HashMap<&str, f64>) -> f64 {
    r.reactants.iter().fold(cost, |acc, m| acc + values[m.as_str()])
}

/// Bellman-Ford sweeps over the hypergraph. Unreachable molecules stay at
/// `+inf`.
fn solve_values<'a>(
    reactions: &'a [ReactionRecord],
    blocks: &dyn BuildingBlocks,
    cost_of: &dyn Fn(&ReactionRecord) -> f64,
) -> Result<HashMap<&'a str, f64>, DomainError> {
    let mut values: HashMap<&str, f64> = HashMap::new();
    for r in reactions {
        for m in std::iter::once(&r.product).chain(&r.reactants) {
            values.entry(m.as_str()).or_insert(if blocks.is_available(m) {
                0.0
            } else {
                f64::INFINITY
            });
        }
    }
    let max_sweeps = values.len() + 1;
    for _ in 0..max_sweeps {
        let mut changed = false;
        for r in reactions {
            if blocks.is_available(&r.product) {
                continue;
            }
            let total = path_cost(cost_of(r), r, &values);
            let slot = values
                .get_mut(r.product.as_str())
                .expect("every product has a slot");
            if total < *slot {
                *slot = total;
                changed = true;
            }
        }
        if !changed {
            return Ok(values);
        }
    }
    Err(DomainError::NonConvergence(max_sweeps))
}

/// Keeps the records of `extended` whose target is new or whose value
/// changed relative to `base`.
pub fn exclude_unchanged(base: &RouteDataset, extended: &RouteDataset) -> RouteDataset {
    let old: HashMap<&str, f64> = base.records.iter().map(|r| (r.target.as_str(), r.v)).collect();
    let records: Vec<DatasetRecord> = extended
        .records
        .iter()
        .filter(|r| old.get(r.target.as_str()).is_none_or(|&v| v != r.v))
        .cloned()
        .collect();
    let mut referenced = BTreeSet::new();
    for r in &records {
        referenced.insert(r.target.as_str());
        for c in &r.candidates {
            referenced.extend(c.reactants.iter().map(String::as_str));
        }
    }
    let features = extended
        .features
        .iter()
        .filter(|(k, _)| referenced.contains(k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    RouteDataset {
        header: extended.header.clone(),
        records,
        features,
    }
}

pub fn read_reactions(path: &Path) -> Result<Vec<ReactionRecord>, DomainError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DomainError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl RouteDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value_of(&self, molecule: &str) -> Option<f64> {
        self.records.iter().find(|r| r.target == molecule).map(|r| r.v)
    }

    fn lookup(&self, m: &str) -> Result<Vec<f64>, DomainError> {
        self.features
            .get(m)
            .cloned()
            .ok_or_else(|| DomainError::MissingFeatures(m.to_string()))
    }

    /// Resolves ids into feature vectors for the trainer.
    pub fn to_tuples(&self) -> Result<Vec<RouteTuple>, DomainError> {
        self.records
            .iter()
            .map(|r| {
                let candidates = r
                    .candidates
                    .iter()
                    .map(|c| {
                        Ok(TupleCandidate {
                            cost: c.cost,
                            reactant_features: c
                                .reactants
                                .iter()
                                .map(|m| self.lookup(m))
                                .collect::<Result<_, _>>()?,
                        })
                    })
                    .collect::<Result<_, DomainError>>()?;
                Ok(RouteTuple {
                    target_features: self.lookup(&r.target)?,
                    v: r.v,
                    best_reaction: r.best_reaction,
                    candidates,
                })
            })
            .collect()
    }

    /// Header line, then records, then feature lines for any molecule whose
    /// vector differs from the hashed default.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), DomainError> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        let hashed = HashedFeaturizer::new(self.header.feature_dim);
        for (mol, f) in &self.features {
            if *f != hashed.features(mol) {
                serde_json::to_writer(
                    &mut out,
                    &FeatureLine {
                        mol: mol.clone(),
                        features: f.clone(),
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, DomainError> {
        let mut lines = reader.lines().enumerate();
        let header: DatasetHeader = loop {
            match lines.next() {
                None => {
                    return Err(DomainError::Parse {
                        line: 1,
                        message: "missing dataset header".into(),
                    })
                }
                Some((_, l)) if l.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
                Some((idx, l)) => {
                    break serde_json::from_str(&l?).map_err(|e| DomainError::Parse {
                        line: idx + 1,
                        message: e.to_string(),
                    })?
                }
            }
        };
        if header.feature_dim == 0 {
            return Err(DomainError::Parse {
                line: 1,
                message: "feature_dim must be positive".into(),
            });
        }
        let mut records = Vec::new();
        let mut features = BTreeMap::new();
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| DomainError::Parse {
                line: idx + 1,
                message,
            };
            match serde_json::from_str::<BodyLine>(&line).map_err(|e| parse_err(e.to_string()))? {
                BodyLine::Record(r) => {
                    if r.best_reaction >= r.candidates.len() || !(r.v >= 0.0) || !r.v.is_finite() {
                        return Err(parse_err(format!("invalid record for {}", r.target)));
                    }
                    records.push(r);
                }
                BodyLine::Features(f) => {
                    if f.features.len() != header.feature_dim {
                        return Err(parse_err(format!("feature width mismatch for {}", f.mol)));
                    }
                    features.insert(f.mol, f.features);
                }
            }
        }
        let hashed = HashedFeaturizer::new(header.feature_dim);
        for r in &records {
            let ids = std::iter::once(&r.target).chain(r.candidates.iter().flat_map(|c| c.reactants.iter()));
            for m in ids {
                features.entry(m.clone()).or_insert_with(|| hashed.features(m));
            }
        }
        Ok(Self {
            header,
            records,
            features,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        Self::read_jsonl(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), DomainError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

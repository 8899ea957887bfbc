//! Algorithm x instance x budget grids.
//!
//! Time is measured only in expansion-model calls. Rows come back sorted by
//! (algorithm, instance position, budget) whatever order the worker pool
//! finished them in, so the CSV is a pure function of the configuration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{dfpn_e_search, greedy_dfs, mcts_search, MctsConfig};
use crate::domains::{
    extract_route_dataset, generate_htn, CostMode, DomainError, HashedFeaturizer, HtnParams, PlanningInstance,
};
use crate::search::{run_search, HaltMode, SearchConfig, SearchError, SearchOutcome, SearchStatus};
use crate::value::{train, TrainConfig, TrainedModel, ValueError, ValueEstimator, ValueOracle};

/// Relative tolerance for cost ties and ratio checks.
pub const COST_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Usage(String),
    #[error("no reference route for instance {0}")]
    MissingReference(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Retrostar,
    Retrostar0,
    DfpnE,
    DfpnEPlus,
    Mcts,
    MctsPlus,
    Greedy,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Retrostar,
        Algorithm::Retrostar0,
        Algorithm::DfpnE,
        Algorithm::DfpnEPlus,
        Algorithm::Mcts,
        Algorithm::MctsPlus,
        Algorithm::Greedy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Retrostar => "retrostar",
            Algorithm::Retrostar0 => "retrostar0",
            Algorithm::DfpnE => "dfpn_e",
            Algorithm::DfpnEPlus => "dfpn_e_plus",
            Algorithm::Mcts => "mcts",
            Algorithm::MctsPlus => "mcts_plus",
            Algorithm::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .iter()
            .find(|a| a.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.as_str()).collect();
                format!("unknown algorithm {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// Where the value estimates come from.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleSpec {
    Zero,
    Table(std::path::PathBuf),
    Model(std::path::PathBuf),
}

impl FromStr for OracleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "zero" {
            Ok(OracleSpec::Zero)
        } else if let Some(p) = s.strip_prefix("table:") {
            Ok(OracleSpec::Table(p.into()))
        } else if let Some(p) = s.strip_prefix("model:") {
            Ok(OracleSpec::Model(p.into()))
        } else {
            Err(format!("expected zero, table:PATH or model:PATH, got {s:?}"))
        }
    }
}

impl OracleSpec {
    pub fn load(&self) -> Result<ValueOracle, ValueError> {
        match self {
            OracleSpec::Zero => Ok(ValueOracle::Zero),
            OracleSpec::Table(p) => ValueOracle::load_table(p),
            OracleSpec::Model(p) => ValueOracle::load_model(p),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub algorithms: Vec<Algorithm>,
    pub instances: Vec<PlanningInstance>,
    pub call_limits: Vec<usize>,
    pub halt_mode: HaltMode,
    /// Used by `retrostar`, `dfpn_e_plus` and `mcts_plus`.
    pub oracle: Arc<ValueOracle>,
    pub mcts: MctsConfig,
    pub rng_seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl BenchmarkConfig {
    pub fn new(
        algorithms: Vec<Algorithm>,
        instances: Vec<PlanningInstance>,
        call_limits: Vec<usize>,
    ) -> Self {
        Self {
            algorithms,
            instances,
            call_limits,
            halt_mode: HaltMode::First,
            oracle: Arc::new(ValueOracle::Zero),
            mcts: MctsConfig::default(),
            rng_seed: 0,
            threads: 0,
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.algorithms.is_empty() {
            return Err(BenchError::Usage("no algorithms selected".into()));
        }
        if self.call_limits.is_empty() {
            return Err(BenchError::Usage("no call budgets given".into()));
        }
        if self.call_limits.contains(&0) {
            return Err(BenchError::Usage("call budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub algorithm: Algorithm,
    pub instance: String,
    pub budget: usize,
    pub status: String,
    pub calls_used: usize,
    pub route_cost: Option<f64>,
    pub route_length: Option<usize>,
    pub optimal_cost: Option<f64>,
    pub approx_ratio: Option<f64>,
}

impl BenchmarkRow {
    pub fn solved(&self) -> bool {
        self.status == SearchStatus::Solved.as_str()
    }
}

/// Header of the CSV written by [`write_csv`].
pub const CSV_HEADER: [&str; 9] = [
    "algorithm",
    "instance",
    "budget",
    "status",
    "calls_used",
    "route_cost",
    "route_length",
    "optimal_cost",
    "approx_ratio",
];

pub fn run_algorithm(
    algorithm: Algorithm,
    instance: &PlanningInstance,
    config: &SearchConfig,
    oracle: &ValueOracle,
    mcts: &MctsConfig,
) -> Result<SearchOutcome, SearchError> {
    let vm: &dyn ValueEstimator = oracle;
    match algorithm {
        Algorithm::Retrostar => run_search(instance, oracle, config),
        Algorithm::Retrostar0 => run_search(instance, &ValueOracle::Zero, config),
        Algorithm::DfpnE => dfpn_e_search(instance, None, config),
        Algorithm::DfpnEPlus => dfpn_e_search(instance, Some(vm), config),
        Algorithm::Mcts => mcts_search(instance, None, config, mcts),
        Algorithm::MctsPlus => mcts_search(instance, Some(vm), config, mcts),
        Algorithm::Greedy => greedy_dfs(instance, config),
    }
}

fn make_row(
    algorithm: Algorithm,
    instance: &PlanningInstance,
    budget: usize,
    result: Result<SearchOutcome, SearchError>,
) -> BenchmarkRow {
    let mut row = BenchmarkRow {
        algorithm,
        instance: instance.id.clone(),
        budget,
        status: "error".into(),
        calls_used: 0,
        route_cost: None,
        route_length: None,
        optimal_cost: instance.optimal_cost,
        approx_ratio: None,
    };
    match result {
        Err(e) => log::error!("{algorithm} on {}: {e}", instance.id),
        Ok(out) => {
            row.calls_used = out.calls_used;
            row.status = out.status.as_str().into();
            if let Some(route) = &out.route {
                if let Err(e) = route.validate(instance) {
                    log::error!("{algorithm} on {} returned an invalid route: {e}", instance.id);
                    row.status = "error".into();
                    return row;
                }
                row.route_cost = Some(route.total_cost);
                row.route_length = Some(route.len());
                row.approx_ratio = instance
                    .optimal_cost
                    .filter(|&o| o > 0.0)
                    .map(|o| route.total_cost / o);
            }
        }
    }
    row
}

/// Runs every (algorithm, instance, budget) combination.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>, BenchError> {
    config.validate()?;
    let mut jobs = Vec::new();
    for &a in &config.algorithms {
        for i in 0..config.instances.len() {
            for &b in &config.call_limits {
                jobs.push((a, i, b));
            }
        }
    }
    let started = Instant::now();
    let work = || {
        jobs.par_iter()
            .map(|&(a, i, b)| {
                let instance = &config.instances[i];
                let search = SearchConfig::default().with_limit(b).with_halt(config.halt_mode);
                let mcts = MctsConfig {
                    rng_seed: config.rng_seed.wrapping_add(i as u64),
                    ..config.mcts.clone()
                };
                let result = run_algorithm(a, instance, &search, &config.oracle, &mcts);
                ((a, i, b), make_row(a, instance, b, result))
            })
            .collect::<Vec<_>>()
    };
    let mut keyed = if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| BenchError::Pool(e.to_string()))?
            .install(work)
    } else {
        work()
    };
    keyed.sort_by_key(|x| x.0);
    log::info!(
        "{} runs in {:.2}s wall clock",
        keyed.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

pub fn write_csv<W: Write>(rows: &[BenchmarkRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    /// (budget, success rate) in budget order.
    pub success: Vec<(usize, f64)>,
    pub mean_calls: f64,
    /// Instances where this algorithm matched the best cost among all
    /// algorithms at the largest budget.
    pub best_cost: usize,
    pub best_length: usize,
    pub avg_ar: Option<f64>,
    pub max_ar: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub instances: usize,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl Summary {
    pub fn get(&self, a: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|s| s.algorithm == a)
    }

    pub fn success_rate(&self, a: Algorithm, budget: usize) -> Option<f64> {
        self.get(a)?
            .success
            .iter()
            .find(|(b, _)| *b == budget)
            .map(|&(_, r)| r)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= COST_TOL * a.abs().max(b.abs()).max(1.0)
}

pub fn summarize(rows: &[BenchmarkRow]) -> Summary {
    let algorithms: BTreeSet<Algorithm> = rows.iter().map(|r| r.algorithm).collect();
    let budgets: BTreeSet<usize> = rows.iter().map(|r| r.budget).collect();
    let instances: BTreeSet<&str> = rows.iter().map(|r| r.instance.as_str()).collect();
    let top = budgets.iter().next_back().copied().unwrap_or(0);

    // best cost and length per instance at the largest budget
    let mut best: HashMap<&str, (f64, usize)> = HashMap::new();
    for r in rows.iter().filter(|r| r.budget == top && r.solved()) {
        let e = best.entry(&r.instance).or_insert((f64::INFINITY, usize::MAX));
        e.0 = e.0.min(r.route_cost.unwrap());
        e.1 = e.1.min(r.route_length.unwrap());
    }

    let mut out = Vec::new();
    for a in algorithms {
        let mine: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.algorithm == a).collect();
        let success = budgets
            .iter()
            .map(|&b| {
                let at: Vec<_> = mine.iter().filter(|r| r.budget == b).collect();
                let ok = at.iter().filter(|r| r.solved()).count();
                (
                    b,
                    if at.is_empty() {
                        0.0
                    } else {
                        ok as f64 / at.len() as f64
                    },
                )
            })
            .collect();
        let mean_calls = if mine.is_empty() {
            0.0
        } else {
            mine.iter().map(|r| r.calls_used as f64).sum::<f64>() / mine.len() as f64
        };
        let top_rows: Vec<_> = mine.iter().filter(|r| r.budget == top && r.solved()).collect();
        let best_cost = top_rows
            .iter()
            .filter(|r| close(r.route_cost.unwrap(), best[r.instance.as_str()].0))
            .count();
        let best_length = top_rows
            .iter()
            .filter(|r| r.route_length.unwrap() == best[r.instance.as_str()].1)
            .count();
        let ars: Vec<f64> = top_rows.iter().filter_map(|r| r.approx_ratio).collect();
        let (avg_ar, max_ar) = if ars.is_empty() {
            (None, None)
        } else {
            (
                Some(ars.iter().sum::<f64>() / ars.len() as f64),
                Some(ars.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            )
        };
        out.push(AlgorithmSummary {
            algorithm: a,
            success,
            mean_calls,
            best_cost,
            best_length,
            avg_ar,
            max_ar,
        });
    }
    Summary {
        instances: instances.len(),
        algorithms: out,
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let budgets: Vec<usize> = self
            .algorithms
            .first()
            .map(|s| s.success.iter().map(|&(b, _)| b).collect())
            .unwrap_or_default();
        write!(f, "{:<12}", "algorithm")?;
        for b in &budgets {
            write!(f, " {:>7}", format!("@{b}"))?;
        }
        writeln!(
            f,
            " {:>10} {:>9} {:>9} {:>8} {:>8}",
            "mean_calls", "best_cost", "best_len", "avg_ar", "max_ar"
        )?;
        let ar = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        for s in &self.algorithms {
            write!(f, "{:<12}", s.algorithm.as_str())?;
            for (_, r) in &s.success {
                write!(f, " {:>6.1}%", r * 100.0)?;
            }
            writeln!(
                f,
                " {:>10.2} {:>9} {:>9} {:>8} {:>8}",
                s.mean_calls,
                s.best_cost,
                s.best_length,
                ar(s.avg_ar),
                ar(s.max_ar)
            )?;
        }
        write!(f, "{} instances", self.instances)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RouteComparison {
    pub algorithm: Algorithm,
    /// Strictly fewer reactions than the reference.
    pub shorter: usize,
    /// Strictly lower cost than the reference.
    pub better: usize,
    /// Reference solved, algorithm not.
    pub unsolved: usize,
}

/// Tallies routes against a per-instance reference `(cost, length)`, using
/// each algorithm's rows at its largest budget. Unsolved instances count as
/// neither shorter nor better.
pub fn compare_routes(
    rows: &[BenchmarkRow],
    reference: &HashMap<String, (f64, usize)>,
) -> Result<Vec<RouteComparison>, BenchError> {
    let mut last: BTreeMap<(Algorithm, &str), &BenchmarkRow> = BTreeMap::new();
    for r in rows {
        let e = last.entry((r.algorithm, r.instance.as_str())).or_insert(r);
        if r.budget > e.budget {
            *e = r;
        }
    }
    let mut tallies: BTreeMap<Algorithm, RouteComparison> = BTreeMap::new();
    for ((a, inst), r) in last {
        let &(ref_cost, ref_len) = reference
            .get(inst)
            .ok_or_else(|| BenchError::MissingReference(inst.to_string()))?;
        let t = tallies.entry(a).or_insert(RouteComparison {
            algorithm: a,
            shorter: 0,
            better: 0,
            unsolved: 0,
        });
        if !r.solved() {
            t.unsolved += 1;
            continue;
        }
        let (cost, len) = (r.route_cost.unwrap(), r.route_length.unwrap());
        if len < ref_len {
            t.shorter += 1;
        }
        if cost < ref_cost && !close(cost, ref_cost) {
            t.better += 1;
        }
    }
    Ok(tallies.into_values().collect())
}

/// Pairs `(algorithm, instance, smaller budget)` where a success at a
/// smaller budget turned into a failure at a larger one.
pub fn budget_violations(rows: &[BenchmarkRow]) -> Vec<(Algorithm, String, usize)> {
    let mut by_key: BTreeMap<(Algorithm, &str), Vec<&BenchmarkRow>> = BTreeMap::new();
    for r in rows {
        by_key.entry((r.algorithm, &r.instance)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((a, inst), mut rs) in by_key {
        rs.sort_by_key(|r| r.budget);
        for w in rs.windows(2) {
            if w[0].solved() && !w[1].solved() {
                out.push((a, inst.to_string(), w[0].budget));
            }
        }
    }
    out
}

/// HTN instances for seeds `seeds`, each carrying its brute-force optimum.
pub fn htn_instances(params: &HtnParams, seeds: Range<u64>) -> Vec<PlanningInstance> {
    seeds
        .into_par_iter()
        .map(|s| generate_htn(&params.with_seed(s)).instance)
        .collect()
}

/// Fits a value network on best-route tuples extracted from HTN instances
/// generated with `seeds`.
pub fn train_htn_oracle(
    params: &HtnParams,
    seeds: Range<u64>,
    feature_dim: usize,
    config: &TrainConfig,
) -> Result<(ValueOracle, TrainedModel), BenchError> {
    let mut reactions = Vec::new();
    let mut blocks = BTreeSet::new();
    for s in seeds {
        let h = generate_htn(&params.with_seed(s));
        reactions.extend(h.table.reactions());
        blocks.extend(h.primitives.iter().cloned());
    }
    let featurizer = HashedFeaturizer::new(feature_dim);
    let dataset = extract_route_dataset(&reactions, &blocks, CostMode::Cost, &featurizer)?;
    let tuples = dataset.to_tuples()?;
    let trained = train(&tuples, config)?;
    Ok((ValueOracle::learned(trained.model.clone()), trained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::fixtures::two_route_instance;

    fn row(a: Algorithm, inst: &str, budget: usize, cost: Option<f64>, len: Option<usize>) -> BenchmarkRow {
        BenchmarkRow {
            algorithm: a,
            instance: inst.into(),
            budget,
            status: if cost.is_some() { "solved" } else { "limit_reached" }.into(),
            calls_used: 1,
            route_cost: cost,
            route_length: len,
            optimal_cost: None,
            approx_ratio: None,
        }
    }

    #[test]
    fn htn_grid_rows_and_ordering() {
        let instances = htn_instances(&HtnParams::default(), 0..200);
        let config = BenchmarkConfig::new(
            vec![Algorithm::Retrostar0, Algorithm::Greedy],
            instances,
            vec![15, 35],
        );
        let rows = run_benchmark(&config).unwrap();
        assert_eq!(rows.len(), 800);
        let s = summarize(&rows);
        assert!(s.success_rate(Algorithm::Retrostar0, 15) > s.success_rate(Algorithm::Greedy, 15));
        assert!(budget_violations(&rows).is_empty());
    }

    #[test]
    fn parse_names() {
        assert_eq!("dfpn_e_plus".parse::<Algorithm>(), Ok(Algorithm::DfpnEPlus));
        assert!("astar".parse::<Algorithm>().is_err());
        assert_eq!("zero".parse::<OracleSpec>(), Ok(OracleSpec::Zero));
        assert_eq!(
            "table:v.json".parse::<OracleSpec>(),
            Ok(OracleSpec::Table("v.json".into()))
        );
        assert!("bogus".parse::<OracleSpec>().is_err());
    }

    #[test]
    fn empty_algorithm_list_is_usage_error() {
        let cfg = BenchmarkConfig::new(vec![], vec![two_route_instance()], vec![10]);
        assert!(matches!(run_benchmark(&cfg), Err(BenchError::Usage(_))));
    }

    #[test]
    fn grid_rows_sorted_and_valid() {
        let cfg = BenchmarkConfig::new(
            vec![Algorithm::Greedy, Algorithm::Retrostar0],
            vec![two_route_instance()],
            vec![5, 1],
        );
        let rows = run_benchmark(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].algorithm, Algorithm::Retrostar0);
        assert_eq!(rows[0].budget, 1);
        assert!(rows.iter().all(|r| r.solved() && r.route_cost == Some(1.0)));
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
    }

    #[test]
    fn comparison_tallies() {
        let rows = vec![
            row(Algorithm::Greedy, "i1", 10, Some(1.0), Some(2)),
            row(Algorithm::Greedy, "i2", 10, Some(1.5), Some(3)),
            row(Algorithm::Greedy, "i3", 10, None, None),
        ];
        let reference = HashMap::from([
            ("i1".to_string(), (1.5, 2)),
            ("i2".to_string(), (1.5, 4)),
            ("i3".to_string(), (2.0, 1)),
        ]);
        let c = compare_routes(&rows, &reference).unwrap();
        assert_eq!(
            c,
            vec![RouteComparison {
                algorithm: Algorithm::Greedy,
                shorter: 1,
                better: 1,
                unsolved: 1
            }]
        );
        let partial = HashMap::from([("i1".to_string(), (1.5, 2))]);
        assert!(matches!(
            compare_routes(&rows, &partial),
            Err(BenchError::MissingReference(_))
        ));
    }

    #[test]
    fn summary_counts_ties_as_best() {
        let rows = vec![
            row(Algorithm::Greedy, "i1", 10, Some(2.0), Some(2)),
            row(Algorithm::Retrostar0, "i1", 10, Some(2.0), Some(3)),
            row(Algorithm::Greedy, "i2", 10, None, None),
            row(Algorithm::Retrostar0, "i2", 10, Some(1.0), Some(1)),
        ];
        let s = summarize(&rows);
        let g = s.get(Algorithm::Greedy).unwrap();
        let r = s.get(Algorithm::Retrostar0).unwrap();
        assert_eq!((g.best_cost, g.best_length), (1, 1));
        assert_eq!((r.best_cost, r.best_length), (2, 1));
        assert_eq!(s.success_rate(Algorithm::Greedy, 10), Some(0.5));
    }

    #[test]
    fn violations_detected() {
        let rows = vec![
            row(Algorithm::Greedy, "i1", 10, Some(2.0), Some(2)),
            row(Algorithm::Greedy, "i1", 20, None, None),
        ];
        assert_eq!(
            budget_violations(&rows),
            vec![(Algorithm::Greedy, "i1".to_string(), 10)]
        );
    }
}

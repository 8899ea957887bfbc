//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retrostar::baselines::{dfpn_search_tree, PnsRule};
use retrostar::bench::{
    htn_instances, run_benchmark, summarize, train_htn_oracle, write_csv, Algorithm, BenchmarkConfig,
};
use retrostar::domains::{
    brute_force_optimal, extract_route_dataset, random_graph, CostMode, HashedFeaturizer, HtnParams,
    PlanningInstance, RandomGraphParams,
};
use retrostar::value::RouteTuple;
use retrostar::value::{objective, objective_and_gradient, LearnedModel, TrainConfig, TupleCandidate};
use retrostar::{run_search, HaltMode, SearchConfig, SearchTree, ValueOracle};

type Check = Box<dyn Fn() -> Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Seeds and generator settings for the success-rate comparison.
const EVAL_SEEDS: std::ops::Range<u64> = 0..200;
const TRAIN_SEEDS: std::ops::Range<u64> = 10_000..10_100;
const BUDGETS: [usize; 5] = [15, 20, 25, 30, 35];

fn hard_htn() -> HtnParams {
    HtnParams {
        primitive_prob: 0.3,
        ..HtnParams::default()
    }
}

fn oracle_train_config() -> TrainConfig {
    TrainConfig {
        hidden_dim: 32,
        epochs: 30,
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

fn optimality() -> Outcome {
    let started = Instant::now();
    let params = HtnParams::default();
    let instances = htn_instances(&params, 0..200);
    let config = SearchConfig::default()
        .with_limit(1_000_000)
        .with_halt(HaltMode::Optimal);
    let mut ratios = Vec::new();
    for inst in &instances {
        let out = run_search(inst, &ValueOracle::Zero, &config).expect("search failed");
        let opt = inst.optimal_cost.expect("generator stores the optimum");
        match out.route {
            Some(r) if out.is_solved() && r.validate(inst).is_ok() => ratios.push(r.total_cost / opt),
            _ => return outcome(false, format!("{} not solved optimally", inst.id)),
        }
    }
    let elapsed = started.elapsed();
    let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pass = ratios.len() >= 200
        && (avg - 1.0).abs() <= 1e-9
        && (max - 1.0).abs() <= 1e-9
        && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} instances, avg AR {avg:.12}, max AR {max:.12}, {:.2}s",
            ratios.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn incremental_update() -> Outcome {
    let started = Instant::now();
    let mut steps = 0;
    for seed in 0..100u64 {
        let g = random_graph(&RandomGraphParams {
            rng_seed: seed,
            molecules: 14,
            blocks: 4,
            max_reactants: 2,
            dead_end_prob: 0.05,
            ..RandomGraphParams::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vm: HashMap<String, f64> = (0..14)
            .map(|i| (format!("m{i}"), rng.gen_range(0..=12) as f64 / 4.0))
            .collect();
        let oracle = ValueOracle::table(vm).unwrap();
        // keep expanding past the first solution so late updates are covered too
        let mut tree = SearchTree::new(&g.instance.target, g.blocks.as_ref(), &oracle);
        for _ in 0..60 {
            if tree.frontier_len() == 0 || tree.min_frontier_vt() == f64::INFINITY {
                break;
            }
            let m = tree.select_next().unwrap();
            let molecule = tree.or_node(m).unwrap().molecule.clone();
            tree.expand(m, &g.instance.expand(&molecule).unwrap()).unwrap();
            tree.update(m);
            steps += 1;
            if let Err(e) = tree.verify_caches(1e-9) {
                return outcome(false, format!("seed {seed}, step {steps}: {e}"));
            }
        }
    }
    let elapsed = started.elapsed();
    outcome(
        elapsed < Duration::from_secs(60),
        format!(
            "100 searches, {steps} updates checked, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn efficiency(oracle: Arc<ValueOracle>) -> Outcome {
    let instances = htn_instances(&hard_htn(), EVAL_SEEDS);
    let mut config = BenchmarkConfig::new(
        vec![Algorithm::Retrostar, Algorithm::Retrostar0, Algorithm::DfpnE],
        instances,
        BUDGETS.to_vec(),
    );
    config.halt_mode = HaltMode::Optimal;
    config.oracle = oracle;
    let rows = run_benchmark(&config).expect("benchmark failed");
    let summary = summarize(&rows);
    let rate = |a, b| summary.success_rate(a, b).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for b in BUDGETS {
        let (r, r0, d) = (
            rate(Algorithm::Retrostar, b),
            rate(Algorithm::Retrostar0, b),
            rate(Algorithm::DfpnE, b),
        );
        pass &= r >= r0 && r0 >= d;
        detail.push(format!("@{b} {r:.3}/{r0:.3}/{d:.3}"));
    }
    let tight = BUDGETS[0];
    pass &= rate(Algorithm::Retrostar, tight) > rate(Algorithm::Retrostar0, tight)
        && rate(Algorithm::Retrostar0, tight) > rate(Algorithm::DfpnE, tight);
    outcome(pass, format!("retrostar/retrostar0/dfpn_e {}", detail.join(" ")))
}

fn dataset_fixpoint() -> Outcome {
    let mut checked = 0;
    for seed in 0..100u64 {
        let params = RandomGraphParams {
            rng_seed: seed,
            ..RandomGraphParams::default()
        };
        let g = random_graph(&params);
        let dataset = extract_route_dataset(
            &g.table.reactions(),
            g.blocks.as_ref(),
            CostMode::Cost,
            &HashedFeaturizer::new(16),
        )
        .expect("extraction failed");
        for i in 0..params.molecules {
            let m = format!("m{i}");
            let inst = PlanningInstance::new(
                m.clone(),
                m.clone(),
                g.instance.stock.clone(),
                g.instance.model.clone(),
            );
            let (bf, _) = brute_force_optimal(&inst, params.molecules).unwrap();
            let v = if g.blocks.contains(&m) {
                Some(0.0)
            } else {
                dataset.value_of(&m)
            };
            let agree = match v {
                Some(v) => v == bf,
                None => bf == f64::INFINITY,
            };
            if !agree {
                return outcome(
                    false,
                    format!("seed {seed}, {m}: dataset {v:?} vs brute force {bf}"),
                );
            }
            checked += 1;
        }
    }
    outcome(true, format!("100 graphs, {checked} molecules agree exactly"))
}

fn random_tuples(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<RouteTuple> {
    let feat = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=4);
            let candidates = (0..k)
                .map(|_| TupleCandidate {
                    cost: rng.gen_range(0.0..3.0),
                    reactant_features: (0..rng.gen_range(1..=3)).map(|_| feat(rng)).collect(),
                })
                .collect();
            RouteTuple {
                target_features: feat(rng),
                v: rng.gen_range(0.0..6.0),
                best_reaction: rng.gen_range(0..k),
                candidates,
            }
        })
        .collect()
}

/// Smallest distance of any hinge argument from its kink.
fn kink_distance(model: &LearnedModel, t: &RouteTuple, epsilon: f64) -> f64 {
    t.candidates
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != t.best_reaction)
        .map(|(_, c)| {
            let sum_v: f64 = c.reactant_features.iter().map(|f| model.predict(f)).sum();
            (t.v + epsilon - c.cost - sum_v).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

fn gradients() -> Outcome {
    let config = TrainConfig::default();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LearnedModel::new(6, 5, seed);
        let tuples: Vec<RouteTuple> = random_tuples(&mut rng, 6, 40)
            .into_iter()
            .filter(|t| kink_distance(&model, t, config.epsilon) > 1e-3)
            .collect();
        let (_, grad) = objective_and_gradient(&model, &tuples, &config).unwrap();
        let base = model.params();
        for (i, &g) in grad.iter().enumerate() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[i] = base[i] + step;
            probe.set_params(&p);
            let up = objective(&probe, &tuples, &config).unwrap();
            p[i] = base[i] - step;
            probe.set_params(&p);
            let down = objective(&probe, &tuples, &config).unwrap();
            let fd = (up - down) / (2.0 * step);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            compared += 1;
        }
    }
    outcome(
        worst < 1e-4,
        format!("{compared} partial derivatives, max relative error {worst:.2e}"),
    )
}

fn pns_invariants() -> Outcome {
    let mut trees = 0;
    for seed in 0..100u64 {
        let g = random_graph(&RandomGraphParams {
            rng_seed: seed,
            molecules: 12,
            ..RandomGraphParams::default()
        });
        let rule = if seed % 2 == 0 {
            PnsRule::Plain
        } else {
            PnsRule::AdditiveCost
        };
        let limit = [3, 10, 50][(seed % 3) as usize];
        let config = SearchConfig::default().with_limit(limit);
        let (_, tree) = dfpn_search_tree(&g.instance, None, &config, rule).expect("search failed");
        if let Err(e) = tree.verify_fixpoint() {
            return outcome(false, format!("seed {seed}: {e}"));
        }
        trees += 1;
    }
    outcome(true, format!("{trees} trees, both rules"))
}

fn determinism(oracle: Arc<ValueOracle>) -> Outcome {
    let csv = || {
        let mut config = BenchmarkConfig::new(
            Algorithm::ALL.to_vec(),
            htn_instances(&HtnParams::default(), 0..40),
            vec![10, 35],
        );
        config.oracle = oracle.clone();
        config.rng_seed = 7;
        let rows = run_benchmark(&config).expect("benchmark failed");
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        out
    };
    let (a, b) = (csv(), csv());
    outcome(
        a == b && !a.is_empty(),
        format!("two runs, {} bytes each, identical: {}", a.len(), a == b),
    )
}

fn smoke() -> Outcome {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let out = Command::new(env!("CARGO_BIN_EXE_retrostar"))
        .arg("solve")
        .arg("--cache")
        .arg(demo.join("cache.jsonl"))
        .arg("--blocks")
        .arg(demo.join("blocks.txt"))
        .args(["--target", "phenacetin", "--halt", "optimal"])
        .output()
        .expect("failed to launch the binary");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let pass = out.status.success() && stdout.contains("status: solved") && stdout.contains("phenacetin <=");
    outcome(
        pass,
        format!(
            "exit {:?}, {} lines printed",
            out.status.code(),
            stdout.lines().count()
        ),
    )
}

fn main() -> ExitCode {
    let (oracle, trained) = train_htn_oracle(&hard_htn(), TRAIN_SEEDS, 256, &oracle_train_config())
        .expect("training the value oracle failed");
    println!(
        "value oracle: objective {:.3} -> {:.3}",
        trained.initial_objective,
        trained.final_objective()
    );
    let oracle = Arc::new(oracle);

    let checks: Vec<(&str, Check)> = vec![
        ("optimality", Box::new(optimality)),
        ("incremental update soundness", Box::new(incremental_update)),
        (
            "efficiency ordering",
            Box::new({
                let o = oracle.clone();
                move || efficiency(o.clone())
            }),
        ),
        ("route-dataset fixpoint", Box::new(dataset_fixpoint)),
        ("trainer gradients", Box::new(gradients)),
        ("pns fixpoint and exclusivity", Box::new(pns_invariants)),
        (
            "determinism",
            Box::new({
                let o = oracle.clone();
                move || determinism(o.clone())
            }),
        ),
        ("solve smoke test", Box::new(smoke)),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let r = check();
        println!("{} {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

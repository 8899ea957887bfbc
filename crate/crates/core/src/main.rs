use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use retrostar::baselines::MctsConfig;
use retrostar::bench::{
    run_algorithm, run_benchmark, summarize, write_csv, Algorithm, BenchError, BenchmarkConfig, OracleSpec,
};
use retrostar::domains::{
    extract_route_dataset, generate_htn, load_blocks, load_cache, read_reactions, CostMode, HashedFeaturizer,
    HtnParams, PlanningInstance, RouteDataset,
};
use retrostar::value::{train, TrainConfig};
use retrostar::{HaltMode, SearchConfig};

#[derive(Parser)]
#[command(
    name = "retrostar",
    version,
    about = "Best-first AND-OR planning with learned cost estimates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an algorithm x instance x budget grid and write a CSV.
    Run(RunArgs),
    /// Plan a single target and print the route.
    Solve(SolveArgs),
    /// Build a best-route dataset from a reactions file.
    ExtractRoutes(ExtractArgs),
    /// Fit a value network on a route dataset.
    TrainValue(TrainArgs),
    /// Write synthetic task-decomposition instances to disk.
    GenHtn(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Halt {
    First,
    Optimal,
}

impl From<Halt> for HaltMode {
    fn from(h: Halt) -> Self {
        match h {
            Halt::First => HaltMode::First,
            Halt::Optimal => HaltMode::Optimal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Unit,
    Cost,
}

#[derive(Args)]
struct HtnArgs {
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Methods per task, `LO-HI` or a single number.
    #[arg(long, default_value = "2-3", value_parser = parse_range)]
    or_branch: (usize, usize),
    /// Subtasks per method, `LO-HI` or a single number.
    #[arg(long, default_value = "2-3", value_parser = parse_range)]
    and_branch: (usize, usize),
    #[arg(long, default_value_t = 0.5)]
    primitive_prob: f64,
    #[arg(long, default_value_t = 1.0)]
    cost_min: f64,
    #[arg(long, default_value_t = 10.0)]
    cost_max: f64,
}

impl HtnArgs {
    fn params(&self, seed: u64) -> Result<HtnParams> {
        let p = HtnParams {
            rng_seed: seed,
            depth: self.depth,
            or_branch: self.or_branch,
            and_branch: self.and_branch,
            primitive_prob: self.primitive_prob,
            cost_range: (self.cost_min, self.cost_max),
        };
        if p.depth == 0 || p.or_branch.0 == 0 || p.and_branch.0 == 0 {
            bail!(BenchError::Usage("depth and branching must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p.primitive_prob) {
            bail!(BenchError::Usage("--primitive-prob must lie in [0, 1]".into()));
        }
        if !(p.cost_range.0 >= 0.0 && p.cost_range.0 < p.cost_range.1) {
            bail!(BenchError::Usage("need 0 <= --cost-min < --cost-max".into()));
        }
        Ok(p)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated algorithm names.
    #[arg(long, default_value = "retrostar0", value_delimiter = ',')]
    algo: Vec<Algorithm>,
    /// Comma-separated call budgets.
    #[arg(long, default_value = "500", value_delimiter = ',')]
    limit: Vec<usize>,
    #[arg(long, value_enum, default_value = "first")]
    halt: Halt,
    /// zero, table:PATH or model:PATH
    #[arg(long, default_value = "zero")]
    oracle: OracleSpec,
    /// Expansion cache (JSON Lines). Needs --blocks and --targets.
    #[arg(long, requires_all = ["blocks", "targets"], conflicts_with = "htn")]
    cache: Option<PathBuf>,
    #[arg(long)]
    blocks: Option<PathBuf>,
    /// File with one target id per line.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Generate this many HTN instances, seeds starting at --seed.
    #[arg(long)]
    htn: Option<u64>,
    #[command(flatten)]
    htn_params: HtnArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 1.0)]
    puct_c: f64,
    #[arg(long, default_value_t = 5)]
    rollout_depth: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "retrostar")]
    algo: Algorithm,
    #[arg(long, default_value_t = 500)]
    limit: usize,
    #[arg(long, value_enum, default_value = "first")]
    halt: Halt,
    #[arg(long, default_value = "zero")]
    oracle: OracleSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    /// Reactions as JSON Lines: {"rxn", "product", "reactants", "cost"}.
    #[arg(long)]
    reactions: PathBuf,
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long, value_enum, default_value = "cost")]
    mode: Mode,
    #[arg(long, default_value_t = 2048)]
    feature_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Route dataset written by extract-routes.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[command(flatten)]
    htn_params: HtnArgs,
    /// One sub-directory per instance is created here.
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once('-').unwrap_or((s, s));
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    if lo > hi {
        return Err(format!("empty range {s:?}"));
    }
    Ok((lo, hi))
}

fn read_targets(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

fn cache_instances(cache: &Path, blocks: &Path, targets: &[String]) -> Result<Vec<PlanningInstance>> {
    let table = Arc::new(load_cache(cache).with_context(|| format!("loading {}", cache.display()))?);
    let stock: Arc<HashSet<String>> =
        Arc::new(load_blocks(blocks).with_context(|| format!("loading {}", blocks.display()))?);
    Ok(targets
        .iter()
        .map(|t| PlanningInstance::new(t.clone(), t.clone(), stock.clone(), table.clone()))
        .collect())
}

fn run(args: RunArgs) -> Result<()> {
    let instances = match (&args.cache, args.htn) {
        (Some(cache), _) => {
            let targets = read_targets(args.targets.as_deref().unwrap())?;
            cache_instances(cache, args.blocks.as_deref().unwrap(), &targets)?
        }
        (None, Some(n)) => (args.seed..args.seed + n)
            .map(|s| Ok(generate_htn(&args.htn_params.params(s)?).instance))
            .collect::<Result<_>>()?,
        (None, None) => bail!(BenchError::Usage("give either --cache or --htn".into())),
    };
    let mut config = BenchmarkConfig::new(args.algo, instances, args.limit);
    config.halt_mode = args.halt.into();
    config.oracle = Arc::new(args.oracle.load()?);
    config.mcts = MctsConfig {
        puct_c: args.puct_c,
        rollout_depth: args.rollout_depth,
        rng_seed: args.seed,
    };
    config.rng_seed = args.seed;
    config.threads = args.threads;
    let rows = run_benchmark(&config)?;
    match &args.out {
        Some(p) => write_csv(&rows, BufWriter::new(File::create(p)?))?,
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    eprintln!("{}", summarize(&rows));
    Ok(())
}

fn solve(args: SolveArgs, stdout: &mut dyn Write) -> Result<()> {
    let instance = cache_instances(&args.cache, &args.blocks, std::slice::from_ref(&args.target))?.remove(0);
    let oracle = args.oracle.load()?;
    let config = SearchConfig::default()
        .with_limit(args.limit)
        .with_halt(args.halt.into());
    let mcts = MctsConfig {
        rng_seed: args.seed,
        ..MctsConfig::default()
    };
    let out = run_algorithm(args.algo, &instance, &config, &oracle, &mcts)?;
    writeln!(stdout, "status: {}", out.status.as_str())?;
    writeln!(stdout, "calls: {}", out.calls_used)?;
    if let Some(route) = &out.route {
        route.validate(&instance)?;
        writeln!(stdout, "cost: {}", route.total_cost)?;
        writeln!(stdout, "length: {}", route.len())?;
        write!(stdout, "{}", route.render())?;
    }
    Ok(())
}

fn extract_routes(args: ExtractArgs) -> Result<()> {
    if args.feature_dim == 0 {
        bail!(BenchError::Usage("--feature-dim must be positive".into()));
    }
    let reactions = read_reactions(&args.reactions)?;
    let blocks = load_blocks(&args.blocks)?;
    let mode = match args.mode {
        Mode::Unit => CostMode::Unit,
        Mode::Cost => CostMode::Cost,
    };
    let dataset = extract_route_dataset(
        &reactions,
        &blocks,
        mode,
        &HashedFeaturizer::new(args.feature_dim),
    )?;
    dataset.save(&args.out)?;
    eprintln!("{} route tuples written to {}", dataset.len(), args.out.display());
    Ok(())
}

fn train_value(args: TrainArgs) -> Result<()> {
    let dataset = RouteDataset::load(&args.dataset)?;
    let tuples = dataset.to_tuples()?;
    let config = TrainConfig {
        epsilon: args.epsilon,
        lambda: args.lambda,
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        hidden_dim: args.hidden,
        rng_seed: args.seed,
    };
    let trained = train(&tuples, &config)?;
    trained.model.save(&args.out)?;
    eprintln!(
        "objective {:.6} -> {:.6} over {} tuples",
        trained.initial_objective,
        trained.final_objective(),
        tuples.len()
    );
    Ok(())
}

fn gen_htn(args: GenArgs) -> Result<()> {
    for s in args.seed..args.seed + args.count {
        let h = generate_htn(&args.htn_params.params(s)?);
        let dir = args.out.join(format!("htn-{s}"));
        h.write_to(&dir)?;
        eprintln!(
            "{}: optimum {} over {} steps",
            dir.display(),
            h.optimal_route.total_cost,
            h.optimal_route.len()
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => run(a),
        Command::Solve(a) => solve(a, &mut std::io::stdout().lock()),
        Command::ExtractRoutes(a) => extract_routes(a),
        Command::TrainValue(a) => train_value(a),
        Command::GenHtn(a) => gen_htn(a),
    }
}

/// 2 for configuration mistakes, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e
        .chain()
        .any(|c| matches!(c.downcast_ref(), Some(BenchError::Usage(_))));
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RETROSTAR_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

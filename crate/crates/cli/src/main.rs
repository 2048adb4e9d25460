use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use fleetcount::abstraction::build_abstraction;
use fleetcount::abstraction::check_epsilon;
use fleetcount::control::{write_counts_csv, write_plans_csv, SubsystemPlan};
use fleetcount::model::SwitchedModel;
use fleetcount::scenario::{self, ScenarioConfig, ScenarioError, SolverChoice, PRESETS};
use fleetcount::sim::{write_density_csv, write_deviations_csv};
use fleetcount::synthesis::{PrefixSuffixSolution, Verdict};

#[derive(Parser)]
#[command(name = "fleetcount", version, about = "Counting-constraint synthesis for fleets of switched systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the abstraction and print its size and margin ledger.
    Abstract(Common),
    /// Solve the prefix-suffix program and write solution.json.
    Synthesize(SynthArgs),
    /// Extract plans from a solution, simulate the fleet and verify both levels.
    Simulate(SimArgs),
    /// Synthesize then simulate.
    Run(SynthArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Shipped scenario.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS), conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the prefix horizon `T`.
    #[arg(long)]
    horizon: Option<usize>,
    /// Overrides the total fleet size, split evenly over the classes.
    #[arg(long = "n")]
    fleet: Option<usize>,
    /// Common divisor of the initial histogram and bounds.
    #[arg(long)]
    scale: Option<u64>,
    /// Solver wall-clock budget in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Internal,
    Relaxed,
    Mps,
}

impl From<SolverArg> for SolverChoice {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Internal => SolverChoice::Internal,
            SolverArg::Relaxed => SolverChoice::Relaxed,
            SolverArg::Mps => SolverChoice::Mps,
        }
    }
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Solver strategy; defaults to the scenario's choice.
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Solution file from an external solver, read with `--solver mps`.
    #[arg(long)]
    import: Option<PathBuf>,
    /// Number of simulated steps for `run`; defaults to the scenario's horizon.
    #[arg(long)]
    sim_horizon: Option<usize>,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    /// Solution to simulate; defaults to `<out-dir>/solution.json`.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Number of simulated steps; defaults to the scenario's horizon.
    #[arg(long)]
    sim_horizon: Option<usize>,
}

/// Process outcome mapped to exit codes 0 to 3.
enum Status {
    Ok,
    Violation,
    Inconclusive,
}

fn load_config(c: &Common) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = match (&c.preset, &c.config) {
        (Some(name), _) => scenario::preset(name).ok_or_else(|| ScenarioError::Config(format!("unknown preset {name}")))?,
        (None, Some(path)) => ScenarioConfig::load(path)?,
        (None, None) => return Err(ScenarioError::Config("one of --preset or --config is required".into())),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.horizon {
        cfg.synthesis.horizon = t;
    }
    if let Some(n) = c.fleet {
        cfg.set_total_n(n);
    }
    if c.scale.is_some() {
        cfg.synthesis.scale = c.scale;
    }
    if c.time_limit.is_some() {
        cfg.synthesis.time_limit = c.time_limit;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_abstract(c: &Common) -> anyhow::Result<Status> {
    let cfg = load_config(c)?;
    std::fs::create_dir_all(&c.out_dir)?;
    let mut docs = Vec::new();
    let mut certified = true;
    for cc in &cfg.classes {
        let model = SwitchedModel::new(cc.model.modes.clone(), cc.model.domain.clone()).map_err(ScenarioError::from)?;
        let abs = build_abstraction(&model, cc.abstraction.tau, cc.abstraction.eta).map_err(ScenarioError::from)?;
        let eps = cc.abstraction.epsilon.unwrap_or(abs.epsilon);
        println!("class {}: {} states, {} modes, eps* = {:.6}", cc.name, abs.n_states(), abs.n_modes(), abs.epsilon);
        let ledger = check_epsilon(&model, cc.abstraction.tau, cc.abstraction.eta, eps);
        println!("  {:<8} {:>12} {:>12} {:>12} {:>12} {:>10}  holds", "mode", "kl", "disturbance", "quantization", "total", "epsilon");
        for r in &ledger {
            println!(
                "  {:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>10.6}  {}",
                r.mode, r.kl_term, r.disturbance_term, r.quantization_term, r.total, r.epsilon, r.holds
            );
        }
        certified &= eps.is_finite() && ledger.iter().all(|r| r.holds);
        docs.push(abs.to_document());
    }
    let path = c.out_dir.join("abstraction.json");
    serde_json::to_writer(BufWriter::new(File::create(&path)?), &docs)?;
    println!("wrote {}", path.display());
    if !certified {
        return Err(ScenarioError::Config("the bisimilarity inequality fails for at least one mode".into()).into());
    }
    Ok(Status::Ok)
}

fn synthesize(args: &SynthArgs, cfg: &ScenarioConfig, prep: &scenario::Prepared) -> anyhow::Result<(Status, Option<PrefixSuffixSolution>)> {
    let out = &args.common.out_dir;
    std::fs::create_dir_all(out)?;
    let solver = args.solver.map(SolverChoice::from).unwrap_or(cfg.synthesis.solver);
    let syn = scenario::synthesize(prep, solver, Some(out), args.import.as_deref())?;
    let r = &syn.report;
    println!("program: {} columns, {} rows, {} nonzeros", r.n_cols, r.n_rows, r.nnz);
    println!(
        "solver: {:?} after {} nodes, {} iterations, {:.2} s ({})",
        syn.status, syn.stats.nodes, syn.stats.iterations, syn.stats.wall_time, syn.stats.engine
    );
    if let Some(p) = &syn.exported {
        println!("wrote {}", p.display());
    }
    println!("verdict: {}", syn.verdict);
    let Some(sol) = syn.solution else {
        let status = match (syn.verdict, &syn.exported, &args.import) {
            (_, Some(_), None) => Status::Ok,
            (Verdict::NoDiscreteSolution | Verdict::NoContinuousSolution, _, _) => Status::Violation,
            _ => Status::Inconclusive,
        };
        return Ok((status, None));
    };
    let path = out.join("solution.json");
    serde_json::to_writer(BufWriter::new(File::create(&path)?), &sol)?;
    println!("wrote {}", path.display());
    Ok((Status::Ok, Some(sol)))
}

fn simulate(out: &Path, prep: &scenario::Prepared, sol: &PrefixSuffixSolution, horizon: usize) -> anyhow::Result<Status> {
    std::fs::create_dir_all(out)?;
    let sim = scenario::simulate(prep, sol, horizon)?;
    let plans: Vec<&[SubsystemPlan]> = sim.plans.iter().map(|p| p.as_slice()).collect();
    write_plans_csv(&out.join("plan.csv"), &plans)?;
    let bounds: Vec<f64> = prep.continuous.iter().map(|c| c.bound).collect();
    write_counts_csv(BufWriter::new(File::create(out.join("counts.csv"))?), &sim.continuous.counts, &bounds)?;
    write_density_csv(BufWriter::new(File::create(out.join("density.csv"))?), &sim.density, &sim.bins)?;
    let steps = sim.traces.iter().map(|t| t.deviations.len()).max().unwrap_or(0);
    let dev: Vec<f64> = (0..steps).map(|k| sim.traces.iter().filter_map(|t| t.deviations.get(k)).copied().fold(0.0, f64::max)).collect();
    write_deviations_csv(BufWriter::new(File::create(out.join("deviations.csv"))?), &dev)?;
    for (l, c) in prep.continuous.iter().enumerate() {
        println!(
            "constraint {} ({}): max discrete count {}, max continuous count {}, bound {}",
            l, c.name, sim.discrete.max_counts[l], sim.continuous.max_counts[l], c.bound
        );
    }
    for (p, (d, e)) in prep.classes.iter().zip(&sim.deviation) {
        println!("class {}: max deviation {d:.6} against margin {e:.6}", p.name);
    }
    println!("wrote plan.csv, counts.csv, density.csv, deviations.csv to {}", out.display());
    if let Some(v) = sim.discrete.first_violation.as_ref().or(sim.continuous.first_violation.as_ref()) {
        println!("violation: constraint {} reaches {} > {} at step {}", v.constraint, v.count, v.bound, v.step);
    }
    if sim.passed() {
        println!("verification passed");
        Ok(Status::Ok)
    } else {
        println!("verification failed");
        Ok(Status::Violation)
    }
}

fn cmd_synthesize(args: &SynthArgs, then_simulate: bool) -> anyhow::Result<Status> {
    let cfg = load_config(&args.common)?;
    let prep = scenario::prepare(&cfg)?;
    for c in &prep.classes {
        println!("class {}: {} states, {} alive, {} cycles, eps {}", c.name, c.abstraction.n_states(), c.graph.n_alive(), c.cycles.len(), c.epsilon);
    }
    let (status, sol) = synthesize(args, &cfg, &prep)?;
    match (then_simulate, sol) {
        (true, Some(sol)) => simulate(&args.common.out_dir, &prep, &sol, args.sim_horizon.unwrap_or(cfg.simulation.horizon)),
        _ => Ok(status),
    }
}

fn cmd_simulate(args: &SimArgs) -> anyhow::Result<Status> {
    let cfg = load_config(&args.common)?;
    let path = args.solution.clone().unwrap_or_else(|| args.common.out_dir.join("solution.json"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display())).map_err(|e| ScenarioError::Config(format!("{e:#}")))?;
    let sol: PrefixSuffixSolution = serde_json::from_str(&text).map_err(ScenarioError::from)?;
    let prep = scenario::prepare(&cfg)?;
    simulate(&args.common.out_dir, &prep, &sol, args.sim_horizon.unwrap_or(cfg.simulation.horizon))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Abstract(c) => cmd_abstract(c),
        Command::Synthesize(a) => cmd_synthesize(a, false),
        Command::Run(a) => cmd_synthesize(a, true),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match res {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violation) => ExitCode::from(1),
        Ok(Status::Inconclusive) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ScenarioError>().is_some_and(|s| s.is_config())
                || e.downcast_ref::<serde_json::Error>().is_some();
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

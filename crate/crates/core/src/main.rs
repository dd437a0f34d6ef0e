use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use bofn::acquisition::{Method, SaaConfig};
use bofn::benchmarks::{self, PROBLEM_IDS};
use bofn::harness::{log10_regret, run_experiment, write_results, ExperimentConfig};
use bofn::selfcheck;

#[derive(Parser)]
#[command(name = "bofn", version, about = "Bayesian optimization of function networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated BO experiments on a registered problem.
    Run(RunArgs),
    /// List registered problems.
    Problems,
    /// Run the invariant and oracle self-test suite.
    Check,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_problem)]
    problem: String,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Evaluations after the initial design.
    #[arg(long, value_parser = positive("budget"))]
    budget: usize,
    #[arg(long, default_value_t = 1, value_parser = positive("replications"))]
    replications: usize,
    #[arg(long, default_value_t = 0, value_parser = parse_seed)]
    seed: u64,
    #[arg(long, default_value_t = 128, value_parser = positive("mc-samples"))]
    mc_samples: usize,
    #[arg(long, default_value_t = 10, value_parser = positive("restarts"))]
    restarts: usize,
    #[arg(long, default_value_t = 1, value_parser = positive("workers"))]
    workers: usize,
    /// Directory for trace CSVs, summary and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn positive(name: &'static str) -> impl Fn(&str) -> Result<usize, String> + Clone {
    move |s| match s.trim().parse::<i128>() {
        Ok(v) if v >= 1 && v <= usize::MAX as i128 => Ok(v as usize),
        Ok(v) => Err(format!("{name} must be a positive integer, got {v}")),
        Err(_) => Err(format!("{name} must be a positive integer, got '{s}'")),
    }
}

fn parse_seed(s: &str) -> Result<u64, String> {
    s.trim().parse::<u64>().map_err(|_| format!("seed must be an integer in [0, {}], got '{s}'", u64::MAX))
}

fn parse_problem(s: &str) -> Result<String, String> {
    if PROBLEM_IDS.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("unknown problem '{s}'; expected one of {}", PROBLEM_IDS.join(", ")))
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|_| format!("unknown method '{s}'; expected ei-fn, ei or random"))
}

fn run(args: RunArgs) -> Result<(), String> {
    let mut cfg = ExperimentConfig::new(&args.problem, args.method, args.budget, args.replications, args.seed);
    cfg.saa = SaaConfig {
        mc_samples: args.mc_samples,
        restarts: args.restarts,
        raw_candidates: SaaConfig::default().raw_candidates.max(args.restarts),
        seed: args.seed,
    };
    cfg.workers = args.workers;
    cfg.output_dir = args.out.clone();
    cfg.validate().map_err(|e| e.to_string())?;
    let reference = benchmarks::problem(&cfg.problem_id).map_err(|e| e.to_string())?.reference_optimum();

    let started = Instant::now();
    let traces = run_experiment(&cfg).map_err(|e| e.to_string())?;
    for t in &traces {
        let regret = reference
            .map(|r| log10_regret(r, t.final_best()).map_or("below 1e-12".into(), |l| format!("{l:.3}")))
            .unwrap_or_else(|| "n/a".into());
        println!("rep {:>3}  seed {:>20}  best {:>14.8}  log10 regret {}", t.rep_index, t.seed, t.final_best(), regret);
    }
    let mean = traces.iter().map(|t| t.final_best()).sum::<f64>() / traces.len() as f64;
    println!("mean final best {mean:.8} over {} replications in {:.1}s", traces.len(), started.elapsed().as_secs_f64());
    if let Some(dir) = &args.out {
        let files = write_results(&traces, &cfg, dir).map_err(|e| e.to_string())?;
        println!("wrote {} files to {}", files.len(), dir.display());
    }
    Ok(())
}

fn problems() -> Result<(), String> {
    println!("{:<18} {:>4} {:>6} {:>22}  constraint", "id", "dim", "nodes", "reference optimum");
    for id in PROBLEM_IDS {
        let p = benchmarks::problem(id).map_err(|e| e.to_string())?;
        let opt = p.reference_optimum().map_or("unknown".to_string(), |v| format!("{v:.12}"));
        let constraint = p.constraint().map_or("box".to_string(), |c| format!("sum(x) <= {}", c.cap()));
        println!("{id:<18} {:>4} {:>6} {opt:>22}  {constraint}", p.dim(), p.node_count());
    }
    Ok(())
}

fn check() -> Result<(), String> {
    let outcomes = selfcheck::run_all();
    for c in &outcomes {
        println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = outcomes.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(format!("{failed} of {} checks failed", outcomes.len()));
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Problems => problems(),
        Command::Check => check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

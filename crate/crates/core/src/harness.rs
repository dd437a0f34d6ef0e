//! Experiment orchestration: initial designs, the BO loop per method,
//! replications and run artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::acquisition::{suggest, uniform_feasible_point, FlatGpModel, Method, SaaConfig, SuggestModel};
use crate::benchmarks::{self, BenchmarkError};
use crate::netmodel::{EvaluationLog, NetworkModel};
use crate::network::{evaluate_network, NetworkProblem};
use crate::numerics::{mix_seed, project};

/// Regrets at or below this are reported as blank log-regret.
pub const REGRET_FLOOR: f64 = 1e-12;

const DESIGN_STREAM: u64 = 1;
const SUGGEST_STREAM: u64 = 2;
const FIT_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("replication {rep}, iteration {iter}: {message}")]
    Iteration { rep: usize, iter: usize, message: String },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub problem_id: String,
    pub method: Method,
    /// Evaluations after the initial design.
    pub budget: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub saa: SaaConfig,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(
        problem_id: impl Into<String>,
        method: Method,
        budget: usize,
        replications: usize,
        base_seed: u64,
    ) -> Self {
        Self {
            problem_id: problem_id.into(),
            method,
            budget,
            replications,
            base_seed,
            saa: SaaConfig::default(),
            workers: 1,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.budget == 0 {
            return Err(HarnessError::Config("budget must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        self.saa.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        benchmarks::problem(&self.problem_id)?;
        Ok(())
    }

    /// Seed of replication `rep`.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        self.base_seed.wrapping_add(rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub best: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub problem_id: String,
    pub method: Method,
    pub rep_index: usize,
    pub seed: u64,
    pub initial_size: usize,
    pub rows: Vec<TraceRow>,
    pub incumbent: Vec<f64>,
    pub incumbent_value: f64,
}

impl RunTrace {
    pub fn best_so_far(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.best).collect()
    }

    pub fn final_best(&self) -> f64 {
        self.rows.last().map_or(f64::NEG_INFINITY, |r| r.best)
    }

    /// Best value after `budget` post-design evaluations.
    pub fn best_after(&self, budget: usize) -> f64 {
        let i = (self.initial_size + budget).min(self.rows.len());
        self.rows[i - 1].best
    }
}

/// `2(D+1)` uniform feasible points; depends on `seed` only, so every method
/// shares it for a given replication.
pub fn initial_design(problem: &NetworkProblem, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, DESIGN_STREAM));
    (0..2 * (problem.dim() + 1))
        .map(|_| uniform_feasible_point(problem.bounds(), problem.constraint(), &mut rng))
        .collect()
}

/// Runs one replication on the registered problem.
pub fn run_replication(cfg: &ExperimentConfig, rep: usize) -> Result<RunTrace, HarnessError> {
    let problem = benchmarks::problem(&cfg.problem_id)?;
    run_replication_on(&problem, cfg, rep)
}

/// Runs one replication on an explicit problem instance.
pub fn run_replication_on(
    problem: &NetworkProblem,
    cfg: &ExperimentConfig,
    rep: usize,
) -> Result<RunTrace, HarnessError> {
    let seed = cfg.replication_seed(rep);
    let fail = |iter: usize, message: String| HarnessError::Iteration { rep, iter, message };
    let mut rows = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut record = |rows: &mut Vec<TraceRow>, x: Vec<f64>, h: Vec<f64>, started: Instant| {
        best = best.max(*h.last().unwrap());
        rows.push(TraceRow { iter: rows.len(), x, h, best, wall_ms: started.elapsed().as_secs_f64() * 1e3 });
    };

    let design = initial_design(problem, seed);
    let initial_size = design.len();
    let mut log = EvaluationLog::new();
    for x in design {
        let started = Instant::now();
        let h = evaluate_network(problem, &x).map_err(|e| fail(rows.len(), e.to_string()))?;
        log.push(x.clone(), h.clone());
        record(&mut rows, x, h, started);
    }

    let fit_seed = mix_seed(seed, FIT_STREAM);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SUGGEST_STREAM));
    let mut network = match cfg.method {
        Method::EiFn => Some(
            NetworkModel::new(problem.clone(), fit_seed)
                .ingest_batch(log.points(), log.node_values())
                .map_err(|e| fail(initial_size, e.to_string()))?,
        ),
        _ => None,
    };

    for _ in 0..cfg.budget {
        let iter = rows.len();
        let started = Instant::now();
        let x = match cfg.method {
            Method::EiFn => {
                let model = network.as_ref().expect("network model");
                suggest(Method::EiFn, SuggestModel::Network(model), &cfg.saa, &mut rng)
            }
            Method::Ei => {
                let flat = FlatGpModel::fit(problem, &log, fit_seed).map_err(|e| fail(iter, e.to_string()))?;
                suggest(Method::Ei, SuggestModel::Flat(&flat, problem), &cfg.saa, &mut rng)
            }
            Method::Random => suggest(Method::Random, SuggestModel::Problem(problem), &cfg.saa, &mut rng),
        }
        .map_err(|e| fail(iter, e.to_string()))?;
        let x = project(&x, problem.bounds(), problem.constraint());
        let h = evaluate_network(problem, &x).map_err(|e| fail(iter, e.to_string()))?;
        log.push(x.clone(), h.clone());
        if let Some(model) = network.as_mut() {
            *model = model.ingest(&x, &h).map_err(|e| fail(iter, e.to_string()))?;
        }
        record(&mut rows, x, h, started);
    }

    let incumbent = log.incumbent_point().expect("nonempty log").to_vec();
    Ok(RunTrace {
        problem_id: cfg.problem_id.clone(),
        method: cfg.method,
        rep_index: rep,
        seed,
        initial_size,
        rows,
        incumbent,
        incumbent_value: log.g_star().expect("nonempty log"),
    })
}

/// All replications, run in parallel on `cfg.workers` threads; the result
/// is ordered by replication index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunTrace>, HarnessError> {
    cfg.validate()?;
    let problem = benchmarks::problem(&cfg.problem_id)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..cfg.replications).into_par_iter().map(|rep| run_replication_on(&problem, cfg, rep)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub iter: usize,
    pub mean_best: f64,
    pub se_best: f64,
    pub mean_log10_regret: Option<f64>,
    pub se_log10_regret: Option<f64>,
}

/// `log10(reference − best)`, or `None` when the regret is at or below
/// [`REGRET_FLOOR`].
pub fn log10_regret(reference: f64, best: f64) -> Option<f64> {
    let r = reference - best;
    (r > REGRET_FLOOR).then(|| r.log10())
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-iteration mean and standard error of best-so-far across traces and,
/// given a reference optimum, of log10 regret over traces where it is
/// defined.
pub fn summarize(traces: &[RunTrace], reference: Option<f64>) -> Vec<SummaryRow> {
    let len = traces.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let bests: Vec<f64> = traces.iter().map(|t| t.rows[i].best).collect();
            let (mean_best, se_best) = mean_se(&bests);
            let regrets: Vec<f64> =
                reference.map(|r| bests.iter().filter_map(|b| log10_regret(r, *b)).collect()).unwrap_or_default();
            let (mean_log10_regret, se_log10_regret) = if regrets.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_se(&regrets);
                (Some(m), Some(s))
            };
            SummaryRow { iter: i, mean_best, se_best, mean_log10_regret, se_log10_regret }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    library_version: &'static str,
    config: &'a ExperimentConfig,
    problem: ManifestProblem,
    replications: Vec<ManifestReplication>,
}

#[derive(Debug, Serialize)]
struct ManifestProblem {
    id: String,
    dim: usize,
    nodes: usize,
    reference_optimum: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ManifestReplication {
    rep_index: usize,
    seed: u64,
    trace_file: String,
    final_best: f64,
    incumbent: Vec<f64>,
}

fn trace_file_name(trace: &RunTrace) -> String {
    format!("{}_{}_rep{:03}.csv", trace.problem_id, trace.method, trace.rep_index)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv { path: path.to_path_buf(), source }
}

/// Writes one trace CSV per replication, `manifest.json` and `summary.csv`
/// into `dir`. Returns the written paths.
pub fn write_results(traces: &[RunTrace], cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::Config("no traces to write".into()));
    }
    let problem = benchmarks::problem(&cfg.problem_id)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    for trace in traces {
        let path = dir.join(trace_file_name(trace));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        let mut header = vec!["iter".to_string()];
        header.extend((0..problem.dim()).map(|d| format!("x_{d}")));
        header.extend((1..=problem.node_count()).map(|k| format!("h_{k}")));
        header.extend(["best".to_string(), "wall_ms".to_string()]);
        w.write_record(&header).map_err(csv_err(&path))?;
        for row in &trace.rows {
            let mut rec = vec![row.iter.to_string()];
            rec.extend(row.x.iter().chain(&row.h).map(|v| v.to_string()));
            rec.push(row.best.to_string());
            rec.push(format!("{:.3}", row.wall_ms));
            w.write_record(&rec).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["iter", "mean_best", "se_best", "mean_log10_regret", "se_log10_regret"]).map_err(csv_err(&path))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for row in summarize(traces, problem.reference_optimum()) {
        w.write_record([
            row.iter.to_string(),
            row.mean_best.to_string(),
            row.se_best.to_string(),
            opt(row.mean_log10_regret),
            opt(row.se_log10_regret),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    let manifest = Manifest {
        library_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        problem: ManifestProblem {
            id: cfg.problem_id.clone(),
            dim: problem.dim(),
            nodes: problem.node_count(),
            reference_optimum: problem.reference_optimum(),
        },
        replications: traces
            .iter()
            .map(|t| ManifestReplication {
                rep_index: t.rep_index,
                seed: t.seed,
                trace_file: trace_file_name(t),
                final_best: t.final_best(),
                incumbent: t.incumbent.clone(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(problem: &str, method: Method, budget: usize, reps: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(problem, method, budget, reps, 17);
        cfg.saa = SaaConfig { mc_samples: 32, restarts: 2, raw_candidates: 64, seed: 0 };
        cfg
    }

    #[test]
    fn design_size_and_determinism() {
        let p = benchmarks::dropwave_network().unwrap();
        let a = initial_design(&p, 3);
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|x| p.is_feasible(x)));
        assert_eq!(a, initial_design(&p, 3));
        assert_ne!(a, initial_design(&p, 4));
        let m = benchmarks::manufacturing_network().unwrap();
        assert!(initial_design(&m, 0).iter().all(|x| m.is_feasible(x)));
    }

    #[test]
    fn random_trace_structure() {
        let t = run_replication(&quick("dropwave", Method::Random, 10, 1), 0).unwrap();
        assert_eq!(t.rows.len(), 16);
        assert!(t.rows.windows(2).all(|w| w[1].best >= w[0].best));
        assert_eq!(t.final_best(), t.incumbent_value);
    }

    #[test]
    fn methods_share_the_initial_design() {
        let a = run_replication(&quick("prop2_chain", Method::Random, 1, 1), 0).unwrap();
        let b = run_replication(&quick("prop2_chain", Method::Ei, 1, 1), 0).unwrap();
        let c = run_replication(&quick("prop2_chain", Method::EiFn, 1, 1), 0).unwrap();
        for i in 0..a.initial_size {
            assert_eq!(a.rows[i].x, b.rows[i].x);
            assert_eq!(a.rows[i].x, c.rows[i].x);
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        for method in Method::ALL {
            let cfg = quick("prop2_chain", method, 3, 1);
            let strip = |t: RunTrace| t.rows.into_iter().map(|r| (r.x, r.h, r.best)).collect::<Vec<_>>();
            assert_eq!(strip(run_replication(&cfg, 0).unwrap()), strip(run_replication(&cfg, 0).unwrap()));
        }
    }

    #[test]
    fn config_validation() {
        assert!(quick("dropwave", Method::Ei, 0, 1).validate().is_err());
        assert!(quick("dropwave", Method::Ei, 1, 0).validate().is_err());
        assert!(quick("nope", Method::Ei, 1, 1).validate().is_err());
        let mut cfg = quick("dropwave", Method::Ei, 1, 1);
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn regret_guard() {
        assert_eq!(log10_regret(1.0, 1.0), None);
        assert_eq!(log10_regret(1.0, 1.0 - 1e-13), None);
        assert!((log10_regret(1.0, 0.99).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn writes_expected_files_and_summary() {
        let cfg = quick("dropwave", Method::Random, 4, 3);
        let traces = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_results(&traces, &cfg, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 5);
        let summary = summarize(&traces, Some(1.0));
        for (i, row) in summary.iter().enumerate() {
            let mean = traces.iter().map(|t| t.rows[i].best).sum::<f64>() / 3.0;
            assert!((row.mean_best - mean).abs() < 1e-15);
        }
        let mut rdr = csv::Reader::from_path(dir.path().join(trace_file_name(&traces[0]))).unwrap();
        let header = rdr.headers().unwrap().clone();
        assert_eq!(header.iter().collect::<Vec<_>>(), ["iter", "x_0", "x_1", "h_1", "h_2", "best", "wall_ms"]);
        let first: Vec<f64> = rdr.records().next().unwrap().unwrap().iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[1], traces[0].rows[0].x[0]);
        assert_eq!(first[4], traces[0].rows[0].h[1]);
    }
}

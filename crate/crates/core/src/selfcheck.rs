//! Fast invariant and oracle checks run by the `check` subcommand.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{ei_closed_form, ei_fn_saa, uniform_feasible_point, Method, SaaConfig};
use crate::benchmarks::{self, PROBLEM_IDS};
use crate::gp::{fit_map, NodePosterior};
use crate::harness::{run_replication, ExperimentConfig};
use crate::netmodel::{NetworkModel, NodeModel};
use crate::network::{evaluate_network, NetworkProblem, NetworkTopology, NodeFunction, NodeKind};
use crate::numerics::{
    bounded_minimize, cholesky_with_jitter, gamma_log_density, inverse_normal_cdf, normal, sobol_normal_matrix,
    BoxBounds, MinimizeOptions,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("cholesky factors", cholesky),
    ("inverse normal cdf", inverse_cdf),
    ("sobol base samples", sobol),
    ("bounded minimizer", minimizer),
    ("gamma log density", gamma),
    ("gp interpolation", gp_interpolation),
    ("single-node ei reduction", single_node_reduction),
    ("benchmark flat equivalence", flat_equivalence),
    ("trace determinism", trace_determinism),
];

/// Runs every check; never panics on a failed check.
pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let (passed, detail) = match check() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome { name, passed, detail }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cholesky() -> Result<String, String> {
    let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
    let l = cholesky_with_jitter(&a).map_err(|e| e.to_string())?;
    let want = [2.0, 0.0, 1.0, 2.0];
    let got: Vec<f64> = (0..4).map(|i| l.entries()[(i / 2, i % 2)]).collect();
    ensure(got.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-14), || format!("factor {got:?}"))?;
    let r = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let lr = cholesky_with_jitter(&r).map_err(|e| e.to_string())?;
    let dev = (lr.reconstruct() - &r).abs().max();
    ensure(lr.jitter_used() > 0.0 && dev <= 1e-4, || format!("rank-1 deviation {dev:e}"))?;
    Ok(format!("rank-1 jitter {:e}", lr.jitter_used()))
}

fn inverse_cdf() -> Result<String, String> {
    let z = inverse_normal_cdf(0.975).map_err(|e| e.to_string())?;
    ensure((z - 1.959_963_984_540_054).abs() < 1e-9, || format!("q(0.975) = {z}"))?;
    let mut prev = f64::NEG_INFINITY;
    for i in 1..10_000 {
        let u = i as f64 / 10_000.0;
        let q = inverse_normal_cdf(u).map_err(|e| e.to_string())?;
        ensure(q > prev, || format!("not increasing at {u}"))?;
        ensure((normal::cdf(q) - u).abs() < 1e-9, || format!("round trip at {u}"))?;
        prev = q;
    }
    Ok(format!("q(0.975) = {z:.9}"))
}

fn sobol() -> Result<String, String> {
    let m = sobol_normal_matrix(4096, 4, 7).map_err(|e| e.to_string())?;
    ensure(m == sobol_normal_matrix(4096, 4, 7).unwrap(), || "not deterministic".into())?;
    ensure(m != sobol_normal_matrix(4096, 4, 8).unwrap(), || "seed ignored".into())?;
    let mut worst = 0.0f64;
    for k in 0..4 {
        let c = m.column(k);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
        ensure(mean.abs() <= 0.05 && (0.9..=1.1).contains(&var), || format!("column {k}: mean {mean}, var {var}"))?;
        worst = worst.max(mean.abs());
    }
    Ok(format!("max |column mean| {worst:.2e}"))
}

fn minimizer() -> Result<String, String> {
    let b = BoxBounds::uniform(2, -2.0, 2.0).map_err(|e| e.to_string())?;
    let rosen = |x: &[f64]| {
        let (a, c) = (1.0 - x[0], x[1] - x[0] * x[0]);
        (a * a + 100.0 * c * c, vec![-2.0 * a - 400.0 * x[0] * c, 200.0 * c])
    };
    let opts = MinimizeOptions { max_iters: 2000, ..MinimizeOptions::default() };
    let r = bounded_minimize(rosen, &[-1.0, 1.0], &b, None, &opts).map_err(|e| e.to_string())?;
    ensure(r.value <= 1e-8, || format!("rosenbrock value {:e}", r.value))?;
    Ok(format!("rosenbrock value {:.1e} in {} iterations", r.value, r.iterations))
}

fn gamma() -> Result<String, String> {
    let v = gamma_log_density(1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    ensure((v + 1.0).abs() < 1e-14, || format!("exp(1) log density {v}"))?;
    let w = gamma_log_density(2.0, 3.0, 1.5).map_err(|e| e.to_string())?;
    let want = 3.0 * 1.5f64.ln() - 2.0f64.ln() + 2.0 * 2.0f64.ln() - 3.0;
    ensure((w - want).abs() < 1e-12, || format!("gamma(3, 1.5) at 2: {w}"))?;
    Ok(format!("log p(2 | 3, 1.5) = {w:.12}"))
}

fn gp_interpolation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random(), rng.random()]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin() + x[1] * x[1]).collect();
    let hyper = fit_map(&xs, &ys).map_err(|e| e.to_string())?;
    let post = NodePosterior::new(hyper, &xs, &ys).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (x, y) in xs.iter().zip(&ys) {
        let (m, v) = post.predict(x);
        ensure(v >= 0.0, || format!("negative variance {v}"))?;
        worst = worst.max((m - y).abs());
    }
    ensure(worst < 1e-4, || format!("training residual {worst:e}"))?;
    Ok(format!("max training residual {worst:.1e}"))
}

fn single_node_reduction() -> Result<String, String> {
    let topo = NetworkTopology::chain(1, vec![vec![0]]).map_err(|e| e.to_string())?;
    let bounds = BoxBounds::uniform(1, 0.0, 1.0).map_err(|e| e.to_string())?;
    let f: NodeFunction = std::sync::Arc::new(|x: &[f64], _: &[f64]| (6.0 * x[0]).sin());
    let p = NetworkProblem::from_node_functions("single", topo, vec![NodeKind::Surrogate], bounds, vec![f])
        .map_err(|e| e.to_string())?;
    let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
    let hs: Vec<Vec<f64>> = xs.iter().map(|x| evaluate_network(&p, x).unwrap()).collect();
    let model = NetworkModel::new(p, 5).ingest_batch(&xs, &hs).map_err(|e| e.to_string())?;
    let g_star = model.log().g_star().unwrap();
    let NodeModel::Surrogate(node) = model.node(0) else { return Err("leaf is not a surrogate".into()) };
    let z = sobol_normal_matrix(4096, 1, 3).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for x in [0.05, 0.33, 0.71, 0.93] {
        let (m, v) = node.predict(&[x]);
        let exact = ei_closed_form(m, v.sqrt(), g_star);
        let (saa, _) = ei_fn_saa(&model, &[x], &z, g_star);
        worst = worst.max((saa - exact).abs());
        ensure((saa - exact).abs() <= 1e-3 * (1.0 + exact), || format!("x={x}: saa {saa}, closed form {exact}"))?;
    }
    Ok(format!("max |saa − closed form| {worst:.1e}"))
}

fn flat_equivalence() -> Result<String, String> {
    let mut total = 0;
    for id in PROBLEM_IDS {
        let p = benchmarks::problem(id).map_err(|e| e.to_string())?;
        let Some(flat) = p.flat_objective().cloned() else { continue };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = if id == "covid_testing" { 2 } else { 10 };
        for _ in 0..n {
            let x = uniform_feasible_point(p.bounds(), p.constraint(), &mut rng);
            let h = evaluate_network(&p, &x).map_err(|e| format!("{id}: {e}"))?;
            let g = flat(&x);
            let leaf = *h.last().unwrap();
            ensure((leaf - g).abs() <= 1e-9 * (1.0 + g.abs()), || format!("{id} at {x:?}: {leaf} vs {g}"))?;
            total += 1;
        }
    }
    Ok(format!("{total} points"))
}

fn trace_determinism() -> Result<String, String> {
    let mut cfg = ExperimentConfig::new("prop2_chain", Method::EiFn, 2, 1, 9);
    cfg.saa = SaaConfig { mc_samples: 32, restarts: 2, raw_candidates: 64, seed: 0 };
    let strip = |cfg: &ExperimentConfig| -> Result<Vec<(Vec<f64>, f64)>, String> {
        let t = run_replication(cfg, 0).map_err(|e| e.to_string())?;
        ensure(t.rows.windows(2).all(|w| w[1].best >= w[0].best), || "best-so-far decreased".into())?;
        Ok(t.rows.into_iter().map(|r| (r.x, r.best)).collect())
    };
    let a = strip(&cfg)?;
    ensure(a == strip(&cfg)?, || "repeated replication differs".into())?;
    Ok(format!("{} rows", a.len()))
}

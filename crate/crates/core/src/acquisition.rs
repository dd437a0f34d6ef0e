//! EI-FN by sample average approximation, classical EI on a flat GP and the
//! multi-restart maximization driver.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::gp::{FitOptions, GpError, InputScaling, ScaledNode};
use crate::netmodel::{EvaluationLog, NetworkModel, SIGMA_FLOOR};
use crate::network::NetworkProblem;
use crate::numerics::normal::{cdf, pdf};
use crate::numerics::{
    bounded_minimize, mix_seed, project, scrambled_sobol, sobol_normal_matrix, BaseSampleMatrix, BoxBounds,
    MinimizeOptions, NumericsError, SimplexConstraint,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AcquisitionError {
    #[error("invalid acquisition configuration: {0}")]
    InvalidConfig(String),
    #[error("every acquisition restart produced a non-finite objective")]
    AllRestartsFailed,
    #[error("no feasible candidate found")]
    NoFeasibleCandidate,
    #[error("the model has no observations")]
    NoObservations,
    #[error("{method} needs a {expected} model")]
    WrongModel { method: Method, expected: &'static str },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SaaConfig {
    pub mc_samples: usize,
    pub restarts: usize,
    pub raw_candidates: usize,
    pub seed: u64,
}

impl Default for SaaConfig {
    fn default() -> Self {
        Self { mc_samples: 128, restarts: 10, raw_candidates: 512, seed: 0 }
    }
}

impl SaaConfig {
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if self.mc_samples == 0 {
            return Err(AcquisitionError::InvalidConfig("mc_samples must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(AcquisitionError::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.raw_candidates < self.restarts {
            return Err(AcquisitionError::InvalidConfig(format!(
                "raw_candidates ({}) must be at least restarts ({})",
                self.raw_candidates, self.restarts
            )));
        }
        Ok(())
    }
}

/// Classical expected improvement of `N(mean, std²)` over `g_star`.
pub fn ei_closed_form(mean: f64, std: f64, g_star: f64) -> f64 {
    ei_with_partials(mean, std, g_star).0
}

/// EI together with `∂EI/∂mean = Φ(u)` and `∂EI/∂std = φ(u)`.
pub fn ei_with_partials(mean: f64, std: f64, g_star: f64) -> (f64, f64, f64) {
    let diff = mean - g_star;
    if std <= 0.0 {
        return if diff > 0.0 { (diff, 1.0, 0.0) } else { (0.0, 0.0, 0.0) };
    }
    let u = diff / std;
    let (big, small) = (cdf(u), pdf(u));
    ((diff * big + std * small).max(0.0), big, small)
}

/// SAA estimate of EI-FN at `x` and its gradient.
pub fn ei_fn_saa(model: &NetworkModel, x: &[f64], z: &BaseSampleMatrix, g_star: f64) -> (f64, Vec<f64>) {
    let inv_m = 1.0 / z.rows() as f64;
    let batch = model.path_batch(x, z, |v| if v > g_star { inv_m } else { 0.0 }, true);
    (saa_mean(&batch.values, g_star), batch.weighted_gradient)
}

/// Value-only SAA estimate of EI-FN.
pub fn ei_fn_saa_value(model: &NetworkModel, x: &[f64], z: &BaseSampleMatrix, g_star: f64) -> f64 {
    saa_mean(&model.path_batch(x, z, |_| 0.0, false).values, g_star)
}

fn saa_mean(values: &[f64], g_star: f64) -> f64 {
    values.iter().map(|v| (v - g_star).max(0.0)).sum::<f64>() / values.len() as f64
}

/// A single GP on `x ↦ g(x)`, the standard BO baseline.
#[derive(Debug, Clone)]
pub struct FlatGpModel {
    node: ScaledNode,
    g_star: Option<f64>,
    anchors: Vec<Vec<f64>>,
}

impl FlatGpModel {
    /// Fits on the log's points and leaf values; inputs are normalized by
    /// the problem bounds.
    pub fn fit(problem: &NetworkProblem, log: &EvaluationLog, seed: u64) -> Result<Self, GpError> {
        let bounds = problem.bounds();
        let ranges: Vec<(f64, f64)> = bounds.lower().iter().copied().zip(bounds.upper().iter().copied()).collect();
        let targets = log.leaf_values();
        let opts = FitOptions::with_seed(mix_seed(mix_seed(seed, log.len() as u64), u64::MAX));
        let node = ScaledNode::fit(log.points(), &targets, InputScaling::from_ranges(&ranges), &opts)?;
        Ok(Self { node, g_star: log.g_star(), anchors: best_points(log, ANCHORS) })
    }

    pub fn from_node(node: ScaledNode, g_star: Option<f64>) -> Self {
        Self { node, g_star, anchors: Vec::new() }
    }

    pub fn node(&self) -> &ScaledNode {
        &self.node
    }

    pub fn g_star(&self) -> Option<f64> {
        self.g_star
    }

    /// Posterior mean and standard deviation of `g(x)`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.node.predict(x);
        (m, floor_sigma(v))
    }

    /// Closed-form EI at `x` and its gradient.
    pub fn ei(&self, x: &[f64], g_star: f64, with_grad: bool) -> (f64, Vec<f64>) {
        let p = self.node.predict_batch_flat(x, 1, with_grad);
        let sd = floor_sigma(p.variance[0]);
        let (value, d_mean, d_std) = ei_with_partials(p.mean[0], sd, g_star);
        if !with_grad {
            return (value, Vec::new());
        }
        let grad = p
            .mean_grad
            .iter()
            .zip(&p.variance_grad)
            .map(|(gm, gv)| d_mean * gm + if sd > 0.0 { d_std * gv / (2.0 * sd) } else { 0.0 })
            .collect();
        (value, grad)
    }
}

fn floor_sigma(variance: f64) -> f64 {
    let s = variance.max(0.0).sqrt();
    if s < SIGMA_FLOOR {
        0.0
    } else {
        s
    }
}

/// Uniform draw over the box, rejection-sampled onto the budget constraint.
pub fn uniform_feasible_point<R: Rng + ?Sized>(
    bounds: &BoxBounds,
    constraint: Option<&SimplexConstraint>,
    rng: &mut R,
) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..bounds.dim()).map(|d| rng.random_range(bounds.lower()[d]..=bounds.upper()[d])).collect();
        if constraint.is_none_or(|c| c.is_satisfied(&x, 0.0)) {
            return x;
        }
    }
}

/// `count` scrambled-Sobol points in the feasible set.
pub fn feasible_candidates(
    bounds: &BoxBounds,
    constraint: Option<&SimplexConstraint>,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, AcquisitionError> {
    let mut draw = count;
    loop {
        let points = scrambled_sobol(draw, bounds.dim(), seed)?;
        let feasible: Vec<Vec<f64>> = points
            .iter()
            .map(|u| bounds.from_unit(u))
            .filter(|x| constraint.is_none_or(|c| c.is_satisfied(x, 0.0)))
            .take(count)
            .collect();
        if feasible.len() == count {
            return Ok(feasible);
        }
        if draw >= count << 12 {
            return Err(AcquisitionError::NoFeasibleCandidate);
        }
        draw *= 4;
    }
}

/// Observed points perturbed around to seed acquisition maximization.
pub const ANCHORS: usize = 5;
/// Perturbation scales around anchors, relative to the box width.
pub const LOCAL_SCALES: [f64; 3] = [0.2, 0.05, 0.01];

/// The `count` best observed points by leaf value, best first.
pub fn best_points(log: &EvaluationLog, count: usize) -> Vec<Vec<f64>> {
    let leaf = log.leaf_values();
    let mut order: Vec<usize> = (0..log.len()).collect();
    order.sort_by(|&a, &b| leaf[b].total_cmp(&leaf[a]));
    order.into_iter().take(count).map(|i| log.points()[i].clone()).collect()
}

/// `count` Gaussian perturbations of the anchors, cycling over anchors and
/// [`LOCAL_SCALES`], projected onto the feasible set.
pub fn local_candidates(
    anchors: &[Vec<f64>],
    bounds: &BoxBounds,
    constraint: Option<&SimplexConstraint>,
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    if anchors.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|j| {
            let anchor = &anchors[j % anchors.len()];
            let scale = LOCAL_SCALES[(j / anchors.len()) % LOCAL_SCALES.len()];
            let x: Vec<f64> = anchor
                .iter()
                .enumerate()
                .map(|(d, a)| a + scale * bounds.width(d) * rng.sample::<f64, _>(StandardNormal))
                .collect();
            project(&x, bounds, constraint)
        })
        .collect()
}

/// Maximizes `evaluator(x, with_grad) → (value, gradient)` over the feasible
/// set: scores `raw_candidates` quasi-random points plus `raw_candidates / 4`
/// perturbations of `anchors`, then runs projected quasi-Newton from the best
/// `restarts` of them.
pub fn maximize_acquisition<F>(
    evaluator: F,
    bounds: &BoxBounds,
    constraint: Option<&SimplexConstraint>,
    cfg: &SaaConfig,
    anchors: &[Vec<f64>],
    seed: u64,
) -> Result<(Vec<f64>, f64), AcquisitionError>
where
    F: Fn(&[f64], bool) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let mut candidates = feasible_candidates(bounds, constraint, cfg.raw_candidates, seed)?;
    candidates.extend(local_candidates(anchors, bounds, constraint, cfg.raw_candidates / 4, mix_seed(seed, 1)));
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let v = evaluator(x, false).0;
            (i, if v.is_finite() { v } else { f64::NEG_INFINITY })
        })
        .collect();
    // Stable: equal scores keep candidate order.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));

    let opts = MinimizeOptions::default();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &(i, _) in scored.iter().take(cfg.restarts) {
        let objective = |x: &[f64]| {
            let (v, g) = evaluator(x, true);
            (-v, g.into_iter().map(|d| -d).collect())
        };
        let Ok(res) = bounded_minimize(objective, &candidates[i], bounds, constraint, &opts) else {
            continue;
        };
        let value = -res.value;
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((res.argmin, value));
        }
    }
    best.ok_or(AcquisitionError::AllRestartsFailed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Method {
    #[serde(rename = "ei-fn")]
    EiFn,
    #[serde(rename = "ei")]
    Ei,
    #[serde(rename = "random")]
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::EiFn, Method::Ei, Method::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::EiFn => "ei-fn",
            Method::Ei => "ei",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ei-fn" | "eifn" | "ei_fn" => Ok(Method::EiFn),
            "ei" => Ok(Method::Ei),
            "random" => Ok(Method::Random),
            _ => Err(format!("unknown method '{s}' (expected ei-fn, ei or random)")),
        }
    }
}

/// The state a method suggests from.
#[derive(Debug, Clone, Copy)]
pub enum SuggestModel<'a> {
    Network(&'a NetworkModel),
    Flat(&'a FlatGpModel, &'a NetworkProblem),
    Problem(&'a NetworkProblem),
}

/// Next point to evaluate. EI-FN draws a fresh base-sample matrix for this
/// call; all randomness comes from `rng`.
pub fn suggest<R: Rng + ?Sized>(
    method: Method,
    model: SuggestModel<'_>,
    cfg: &SaaConfig,
    rng: &mut R,
) -> Result<Vec<f64>, AcquisitionError> {
    cfg.validate()?;
    match (method, model) {
        (Method::Random, m) => {
            let problem = match m {
                SuggestModel::Network(n) => n.problem(),
                SuggestModel::Flat(_, p) | SuggestModel::Problem(p) => p,
            };
            Ok(uniform_feasible_point(problem.bounds(), problem.constraint(), rng))
        }
        (Method::EiFn, SuggestModel::Network(model)) => {
            let g_star = model.log().g_star().ok_or(AcquisitionError::NoObservations)?;
            let z = sobol_normal_matrix(cfg.mc_samples, model.problem().node_count(), rng.random())?;
            let problem = model.problem();
            let evaluator = |x: &[f64], with_grad: bool| {
                if with_grad {
                    ei_fn_saa(model, x, &z, g_star)
                } else {
                    (ei_fn_saa_value(model, x, &z, g_star), Vec::new())
                }
            };
            let anchors = best_points(model.log(), ANCHORS);
            let (x, _) =
                maximize_acquisition(evaluator, problem.bounds(), problem.constraint(), cfg, &anchors, rng.random())?;
            Ok(x)
        }
        (Method::Ei, SuggestModel::Flat(flat, problem)) => {
            let g_star = flat.g_star().ok_or(AcquisitionError::NoObservations)?;
            let evaluator = |x: &[f64], with_grad: bool| flat.ei(x, g_star, with_grad);
            let (x, _) = maximize_acquisition(
                evaluator,
                problem.bounds(),
                problem.constraint(),
                cfg,
                &flat.anchors,
                rng.random(),
            )?;
            Ok(x)
        }
        (Method::EiFn, _) => Err(AcquisitionError::WrongModel { method, expected: "network" }),
        (Method::Ei, _) => Err(AcquisitionError::WrongModel { method, expected: "flat GP" }),
    }
}

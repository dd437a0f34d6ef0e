//! Test problems expressed as function networks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::network::{KnownClosure, NetworkError, NetworkProblem, NetworkTopology, NodeFunction, NodeKind};
use crate::numerics::{mix_seed, BoxBounds, SimplexConstraint};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BenchmarkError {
    #[error("unknown problem '{0}'; run `bofn problems` for the list")]
    UnknownProblem(String),
    #[error("invalid benchmark parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub const PROBLEM_IDS: [&str; 8] = [
    "dropwave",
    "ackley6",
    "rosenbrock4",
    "alpine2_6",
    "manufacturing",
    "sis_calibration",
    "covid_testing",
    "prop2_chain",
];

/// Builds a registered problem by id.
pub fn problem(id: &str) -> Result<NetworkProblem, BenchmarkError> {
    match id {
        "dropwave" => dropwave_network(),
        "ackley6" => ackley_network(6),
        "rosenbrock4" => rosenbrock_network(5),
        "alpine2_6" => alpine2_network(6),
        "manufacturing" => manufacturing_network(),
        "sis_calibration" => sis_calibration_network(),
        "covid_testing" => covid_network(),
        "prop2_chain" => prop2_network(),
        other => Err(BenchmarkError::UnknownProblem(other.to_string())),
    }
}

/// Every registered problem, in registry order.
pub fn registry() -> Vec<NetworkProblem> {
    PROBLEM_IDS.iter().map(|id| problem(id).expect("registered problem")).collect()
}

fn node_fn<F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static>(f: F) -> NodeFunction {
    Arc::new(f)
}

// ---------------------------------------------------------------- Alpine2

fn sqrt_sin(x: f64) -> f64 {
    x.sqrt() * x.sin()
}

/// Stationary point of `√x sin x` inside `[lo, hi]`: a root of
/// `sin x + 2x cos x`, found by bisection.
fn sqrt_sin_extremum(lo: f64, hi: f64) -> f64 {
    let h = |x: f64| x.sin() + 2.0 * x * x.cos();
    let (mut a, mut b) = (lo, hi);
    let fa = h(a);
    assert!(fa * h(b) < 0.0, "bracket must straddle a stationary point");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if h(m) * fa > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Maximum of `−∏_k √x_k sin x_k` over `[0,10]^K`: one factor at the most
/// negative value of `√x sin x`, the rest at its largest positive value.
pub fn alpine2_optimum(k: usize) -> f64 {
    let peak = sqrt_sin(sqrt_sin_extremum(7.0, 8.5));
    let trough = sqrt_sin(sqrt_sin_extremum(4.0, 5.5));
    peak.powi(k as i32 - 1) * (-trough)
}

pub fn alpine2_network(k: usize) -> Result<NetworkProblem, BenchmarkError> {
    if k == 0 {
        return Err(BenchmarkError::Invalid("Alpine2 needs at least one node".into()));
    }
    let topo = NetworkTopology::chain(k, (0..k).map(|i| vec![i]).collect())?;
    let mut fs = vec![node_fn(|x, _| -sqrt_sin(x[0]))];
    for _ in 1..k {
        fs.push(node_fn(|x, y| sqrt_sin(x[0]) * y[0]));
    }
    let flat = Arc::new(|x: &[f64]| -x.iter().map(|v| v.sqrt() * v.sin()).product::<f64>());
    Ok(NetworkProblem::from_node_functions(
        format!("alpine2_{k}"),
        topo,
        vec![NodeKind::Surrogate; k],
        BoxBounds::uniform(k, 0.0, 10.0).expect("static bounds"),
        fs,
    )?
    .with_reference_optimum(alpine2_optimum(k))
    .with_flat_objective(flat))
}

// ---------------------------------------------------------------- Ackley

pub fn ackley_network(d: usize) -> Result<NetworkProblem, BenchmarkError> {
    if d == 0 {
        return Err(BenchmarkError::Invalid("Ackley needs at least one coordinate".into()));
    }
    let all: Vec<usize> = (0..d).collect();
    let topo = NetworkTopology::new(d, vec![vec![], vec![], vec![0, 1]], vec![all.clone(), all, vec![]])?;
    let n = d as f64;
    let fs = vec![
        node_fn(move |x, _| x.iter().map(|v| v * v).sum::<f64>() / n),
        node_fn(move |x, _| x.iter().map(|v| (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>() / n),
        node_fn(|_, y| 20.0 * (-0.2 * y[0].sqrt()).exp() + y[1].exp() - 20.0 - std::f64::consts::E),
    ];
    let flat = Arc::new(move |x: &[f64]| {
        let n = x.len() as f64;
        let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
        let cs = x.iter().map(|v| (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>() / n;
        20.0 * (-0.2 * sq.sqrt()).exp() + cs.exp() - 20.0 - std::f64::consts::E
    });
    Ok(NetworkProblem::from_node_functions(
        format!("ackley{d}"),
        topo,
        vec![NodeKind::Surrogate; 3],
        BoxBounds::uniform(d, -2.0, 2.0).expect("static bounds"),
        fs,
    )?
    .with_reference_optimum(0.0)
    .with_flat_objective(flat))
}

// ---------------------------------------------------------------- Rosenbrock

/// Rosenbrock on `[−2,2]^D` as a chain of `D − 1` nodes.
pub fn rosenbrock_network(d: usize) -> Result<NetworkProblem, BenchmarkError> {
    if d < 3 {
        return Err(BenchmarkError::Invalid("Rosenbrock network needs D >= 3".into()));
    }
    let k = d - 1;
    let topo = NetworkTopology::chain(d, (0..k).map(|i| vec![i, i + 1]).collect())?;
    let term = |a: f64, b: f64| -100.0 * (b - a * a).powi(2) - (1.0 - a).powi(2);
    let mut fs = vec![node_fn(move |x, _| term(x[0], x[1]))];
    for _ in 1..k {
        fs.push(node_fn(move |x, y| term(x[0], x[1]) + y[0]));
    }
    let flat = Arc::new(|x: &[f64]| {
        -x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum::<f64>()
    });
    Ok(NetworkProblem::from_node_functions(
        format!("rosenbrock{k}"),
        topo,
        vec![NodeKind::Surrogate; k],
        BoxBounds::uniform(d, -2.0, 2.0).expect("static bounds"),
        fs,
    )?
    .with_reference_optimum(0.0)
    .with_flat_objective(flat))
}

// ---------------------------------------------------------------- Drop-Wave

pub fn dropwave_network() -> Result<NetworkProblem, BenchmarkError> {
    let topo = NetworkTopology::new(2, vec![vec![], vec![0]], vec![vec![0, 1], vec![]])?;
    let fs = vec![
        node_fn(|x, _| (x[0] * x[0] + x[1] * x[1]).sqrt()),
        node_fn(|_, y| (1.0 + (12.0 * y[0]).cos()) / (2.0 + 0.5 * y[0] * y[0])),
    ];
    let flat = Arc::new(|x: &[f64]| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        (1.0 + (12.0 * r2.sqrt()).cos()) / (2.0 + 0.5 * r2)
    });
    Ok(NetworkProblem::from_node_functions(
        "dropwave",
        topo,
        vec![NodeKind::Surrogate; 2],
        BoxBounds::uniform(2, -5.12, 5.12).expect("static bounds"),
        fs,
    )?
    .with_reference_optimum(1.0)
    .with_flat_objective(flat))
}

// ---------------------------------------------------------------- Manufacturing

pub const MANUFACTURING_ARRIVAL_RATE: f64 = 1.0;
pub const MANUFACTURING_BUFFER: u32 = 10;
/// Best throughput on `{x ≥ 0, Σx ≤ 1}`, from a multi-start polish of the
/// closed form.
pub const MANUFACTURING_OPTIMUM: f64 = 0.206_782_947_654_004_7;

/// Steady-state departure rate of a single-server exponential queue with
/// room for `buffer` jobs, fed at rate `arrival`, serving at rate `service`.
pub fn station_throughput(arrival: f64, service: f64, buffer: u32) -> f64 {
    if service <= 0.0 || arrival <= 0.0 {
        return 0.0;
    }
    let rho = arrival / service;
    // Σ_{i<b} ρ^i / Σ_{i≤b} ρ^i, written in powers of min(ρ, 1/ρ).
    let (num, den) = if rho <= 1.0 {
        let mut p = 1.0;
        let mut s = 0.0;
        for _ in 0..buffer {
            s += p;
            p *= rho;
        }
        (s, s + p)
    } else {
        let r = 1.0 / rho;
        let mut p = r;
        let mut s = 0.0;
        for _ in 0..buffer {
            s += p;
            p *= r;
        }
        (s, s + 1.0)
    };
    arrival * num / den
}

/// Probability that an arrival finds the buffer full.
pub fn blocking_probability(rho: f64, buffer: u32) -> f64 {
    let b = buffer as i32;
    if (rho - 1.0).abs() < 1e-12 {
        return 1.0 / (buffer as f64 + 1.0);
    }
    (1.0 - rho) * rho.powi(b) / (1.0 - rho.powi(b + 1))
}

fn manufacturing_flat(x: &[f64]) -> f64 {
    let mut a = MANUFACTURING_ARRIVAL_RATE;
    for &mu in x {
        if mu <= 0.0 {
            return 0.0;
        }
        a *= 1.0 - blocking_probability(a / mu, MANUFACTURING_BUFFER);
    }
    a
}

pub fn manufacturing_network() -> Result<NetworkProblem, BenchmarkError> {
    let topo = NetworkTopology::chain(4, (0..4).map(|i| vec![i]).collect())?;
    let mut fs = vec![node_fn(|x, _| station_throughput(MANUFACTURING_ARRIVAL_RATE, x[0], MANUFACTURING_BUFFER))];
    for _ in 1..4 {
        fs.push(node_fn(|x, y| station_throughput(y[0], x[0], MANUFACTURING_BUFFER)));
    }
    Ok(NetworkProblem::from_node_functions(
        "manufacturing",
        topo,
        vec![NodeKind::Surrogate; 4],
        BoxBounds::uniform(4, 0.0, 1.0).expect("static bounds"),
        fs,
    )?
    .with_constraint(SimplexConstraint::new(1.0).expect("positive cap"))?
    .with_reference_optimum(MANUFACTURING_OPTIMUM)
    .with_flat_objective(Arc::new(manufacturing_flat)))
}

// ---------------------------------------------------------------- SIS

/// Held-out transmission rates, indexed `t·4 + i·2 + j`: a seed-0 uniform
/// draw on `[0.05, 0.8]^12`.
pub const SIS_BETA_STAR: [f64; 12] = [
    0.5818065615699213,
    0.3994412917172076,
    0.5743574320060488,
    0.09512837422562877,
    0.709333038468964,
    0.46214845159208484,
    0.6717383570179996,
    0.7515698771848468,
    0.6528362316709727,
    0.16571845567689214,
    0.7105338292714181,
    0.6279153234764984,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SisParams {
    pub gamma: f64,
    pub initial_infected: f64,
    pub horizon: usize,
    pub beta_star: Vec<f64>,
    /// `observed[i][t − 1] = I_{i,t}` at `beta_star`.
    pub observed: Vec<Vec<f64>>,
}

impl Default for SisParams {
    fn default() -> Self {
        Self::with_beta_star(SIS_BETA_STAR.to_vec())
    }
}

impl SisParams {
    pub fn with_beta_star(beta_star: Vec<f64>) -> Self {
        let mut p = Self { gamma: 0.5, initial_infected: 0.01, horizon: 3, beta_star, observed: Vec::new() };
        p.observed = sis_trajectory(&p.beta_star, &p);
        p
    }
}

/// One SIS step for group `i`.
fn sis_step(i: usize, prev: [f64; 2], beta_t: &[f64], gamma: f64) -> f64 {
    let v = prev[i] * (1.0 - gamma) + (1.0 - prev[i]) * (beta_t[i * 2] * prev[0] + beta_t[i * 2 + 1] * prev[1]);
    v.clamp(0.0, 1.0)
}

/// Infected fractions `I_{i,t}`, `t = 1..T`, as a `2 × T` matrix.
pub fn sis_trajectory(beta: &[f64], params: &SisParams) -> Vec<Vec<f64>> {
    assert_eq!(beta.len(), 4 * params.horizon, "one 2x2 rate block per period");
    let mut out = vec![Vec::with_capacity(params.horizon); 2];
    let mut prev = [params.initial_infected; 2];
    for t in 0..params.horizon {
        let b = &beta[t * 4..t * 4 + 4];
        let next = [sis_step(0, prev, b, params.gamma), sis_step(1, prev, b, params.gamma)];
        out[0].push(next[0]);
        out[1].push(next[1]);
        prev = next;
    }
    out
}

pub fn sis_calibration_network() -> Result<NetworkProblem, BenchmarkError> {
    sis_calibration_network_with(SisParams::default())
}

/// Nodes `2t + i` compute `I_{i,t+1}`; the last node is the negated sum of
/// squared errors.
pub fn sis_calibration_network_with(params: SisParams) -> Result<NetworkProblem, BenchmarkError> {
    let t_count = params.horizon;
    let k = 2 * t_count + 1;
    let mut parents = Vec::with_capacity(k);
    let mut inputs = Vec::with_capacity(k);
    let mut fs = Vec::with_capacity(k);
    let mut kinds = Vec::with_capacity(k);
    for t in 0..t_count {
        for i in 0..2 {
            inputs.push((t * 4..t * 4 + 4).collect());
            let gamma = params.gamma;
            if t == 0 {
                parents.push(vec![]);
                let i0 = params.initial_infected;
                fs.push(node_fn(move |x, _| sis_step(i, [i0, i0], x, gamma)));
            } else {
                parents.push(vec![2 * (t - 1), 2 * (t - 1) + 1]);
                fs.push(node_fn(move |x, y| sis_step(i, [y[0], y[1]], x, gamma)));
            }
            kinds.push(NodeKind::Surrogate);
        }
    }
    parents.push((0..2 * t_count).collect());
    inputs.push(vec![]);
    // Parent order is (t, i) row-major, matching observed[i][t].
    let obs: Vec<f64> = (0..t_count).flat_map(|t| [params.observed[0][t], params.observed[1][t]]).collect();
    let obs_v = obs.clone();
    let obs_g = obs.clone();
    let leaf_value =
        move |_: &[f64], y: &[f64]| -> f64 { -y.iter().zip(&obs_v).map(|(a, b)| (b - a).powi(2)).sum::<f64>() };
    let leaf_grad = move |_: &[f64], y: &[f64]| (vec![], y.iter().zip(&obs_g).map(|(a, b)| 2.0 * (b - a)).collect());
    let leaf = KnownClosure::new(leaf_value.clone(), leaf_grad);
    fs.push(node_fn(leaf_value));
    kinds.push(NodeKind::known(leaf));
    let topo = NetworkTopology::new(4 * t_count, parents, inputs)?;
    let flat_params = params.clone();
    let flat = Arc::new(move |beta: &[f64]| {
        let traj = sis_trajectory(beta, &flat_params);
        let mut sse = 0.0;
        for i in 0..2 {
            for t in 0..flat_params.horizon {
                sse += (flat_params.observed[i][t] - traj[i][t]).powi(2);
            }
        }
        -sse
    });
    Ok(NetworkProblem::from_node_functions(
        "sis_calibration",
        topo,
        kinds,
        BoxBounds::uniform(4 * t_count, 0.0, 1.0).expect("static bounds"),
        fs,
    )?
    .with_reference_optimum(0.0)
    .with_flat_objective(flat))
}

// ---------------------------------------------------------------- COVID

/// Error rates of the pooled PCR procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestModel {
    /// Per-reaction false-positive probability.
    pub false_positive: f64,
    pub individual_sensitivity: f64,
    /// Pool sensitivity `max(floor, base − slope·(x − 1))`.
    pub pool_sensitivity_base: f64,
    pub pool_sensitivity_slope: f64,
    pub pool_sensitivity_floor: f64,
}

impl Default for TestModel {
    fn default() -> Self {
        Self {
            false_positive: 0.001,
            individual_sensitivity: 0.95,
            pool_sensitivity_base: 0.95,
            pool_sensitivity_slope: 0.01,
            pool_sensitivity_floor: 0.6,
        }
    }
}

impl TestModel {
    pub fn perfect() -> Self {
        Self {
            false_positive: 0.0,
            individual_sensitivity: 1.0,
            pool_sensitivity_base: 1.0,
            pool_sensitivity_slope: 0.0,
            pool_sensitivity_floor: 1.0,
        }
    }

    pub fn pool_sensitivity(&self, pool_size: usize) -> f64 {
        (self.pool_sensitivity_base - self.pool_sensitivity_slope * (pool_size as f64 - 1.0))
            .max(self.pool_sensitivity_floor)
    }
}

/// Overall characteristics of a pooled-testing round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolCharacteristics {
    pub true_positive: f64,
    pub false_positive: f64,
    /// Chemical reactions per person tested.
    pub reactions: f64,
}

pub const POOL_ARRAYS: usize = 2000;

/// Square-array pooled testing on `x × x` arrays, estimated over
/// `POOL_ARRAYS` simulated arrays. Pool size 1 is plain individual testing.
pub fn pooled_test_characteristics<R: Rng + ?Sized>(
    pool_size: usize,
    prevalence: f64,
    model: &TestModel,
    rng: &mut R,
) -> PoolCharacteristics {
    pooled_test_characteristics_n(pool_size, prevalence, model, POOL_ARRAYS, rng)
}

pub fn pooled_test_characteristics_n<R: Rng + ?Sized>(
    pool_size: usize,
    prevalence: f64,
    model: &TestModel,
    arrays: usize,
    rng: &mut R,
) -> PoolCharacteristics {
    let x = pool_size.max(1);
    if x == 1 {
        return PoolCharacteristics {
            true_positive: model.individual_sensitivity,
            false_positive: model.false_positive,
            reactions: 1.0,
        };
    }
    let pool_sens = model.pool_sensitivity(x);
    let fp = model.false_positive;
    let mut infected = vec![false; x * x];
    let mut row_pos = vec![false; x];
    let mut col_pos = vec![false; x];
    let (mut n_inf, mut n_clean, mut tp, mut fpos, mut reactions) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for _ in 0..arrays {
        for cell in infected.iter_mut() {
            *cell = rng.random::<f64>() < prevalence;
        }
        for r in 0..x {
            let any = infected[r * x..(r + 1) * x].iter().any(|&b| b);
            row_pos[r] = rng.random::<f64>() < if any { pool_sens } else { fp };
        }
        for c in 0..x {
            let any = (0..x).any(|r| infected[r * x + c]);
            col_pos[c] = rng.random::<f64>() < if any { pool_sens } else { fp };
        }
        reactions += 2 * x as u64;
        for r in 0..x {
            for c in 0..x {
                let inf = infected[r * x + c];
                if inf {
                    n_inf += 1;
                } else {
                    n_clean += 1;
                }
                if row_pos[r] && col_pos[c] {
                    reactions += 1;
                    let positive = rng.random::<f64>() < if inf { model.individual_sensitivity } else { fp };
                    if positive {
                        if inf {
                            tp += 1;
                        } else {
                            fpos += 1;
                        }
                    }
                }
            }
        }
    }
    let true_positive =
        if n_inf > 0 { tp as f64 / n_inf as f64 } else { pool_sens * pool_sens * model.individual_sensitivity };
    let false_positive = if n_clean > 0 { fpos as f64 / n_clean as f64 } else { fp };
    PoolCharacteristics { true_positive, false_positive, reactions: reactions as f64 / (arrays * x * x) as f64 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovidParams {
    pub beta: f64,
    pub horizon: usize,
    pub cost_test: f64,
    pub cost_isolation: f64,
    pub cost_infection: f64,
    pub test_model: TestModel,
    pub initial_infected: f64,
    pub initial_recovered: f64,
    /// Seed of the pooled-testing simulations; each `(pool size, period)`
    /// pair draws from its own stream.
    pub seed: u64,
    pub max_pool_size: usize,
}

impl Default for CovidParams {
    fn default() -> Self {
        Self {
            beta: 14.0 / 3.0 * std::f64::consts::LN_2,
            horizon: 3,
            cost_test: 1.0,
            cost_isolation: 10.0,
            cost_infection: 300.0,
            test_model: TestModel::default(),
            initial_infected: 0.01,
            initial_recovered: 0.0,
            seed: 0x00c0_71d,
            max_pool_size: 20,
        }
    }
}

impl CovidParams {
    pub fn pool_size(&self, x: f64) -> usize {
        (x.round().max(1.0) as usize).min(self.max_pool_size)
    }

    /// Testing characteristics for period `t` (0-based) at prevalence `i`.
    pub fn characteristics(&self, x: f64, t: usize, i: f64) -> PoolCharacteristics {
        let size = self.pool_size(x);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, ((t as u64) << 32) | size as u64));
        pooled_test_characteristics(size, i, &self.test_model, &mut rng)
    }
}

/// Period-`t` outcome `(L_t, I_{t+1}, R_{t+1})` from `(x_t, I_t, R_t)`.
pub fn covid_step(params: &CovidParams, t: usize, x: f64, infected: f64, recovered: f64) -> (f64, f64, f64) {
    let a = params.characteristics(x, t, infected);
    let susceptible = (1.0 - infected - recovered).max(0.0);
    let isolated = a.true_positive * infected + a.false_positive * (susceptible + recovered);
    // New infections cannot exceed the susceptible pool.
    let next_i = (infected * (1.0 - a.true_positive) * (params.beta * susceptible).exp()).min(susceptible);
    let next_r = recovered + infected;
    let loss = params.cost_test * a.reactions + params.cost_isolation * isolated + params.cost_infection * next_i;
    (loss, next_i, next_r)
}

pub fn covid_network() -> Result<NetworkProblem, BenchmarkError> {
    covid_network_with(CovidParams::default())
}

/// Per period `t`: nodes for `L_t`, and (except in the last period)
/// `I_{t+1}`, `R_{t+1}`, each reading `x_t` and the previous `(I_t, R_t)`
/// nodes; a known leaf returns `−Σ_t L_t`.
pub fn covid_network_with(params: CovidParams) -> Result<NetworkProblem, BenchmarkError> {
    if params.horizon == 0 {
        return Err(BenchmarkError::Invalid("COVID horizon must be positive".into()));
    }
    let params = Arc::new(params);
    let mut parents = Vec::new();
    let mut inputs = Vec::new();
    let mut fs: Vec<NodeFunction> = Vec::new();
    let mut loss_nodes = Vec::new();
    let mut prev_state: Option<(usize, usize)> = None;
    for t in 0..params.horizon {
        let last = t + 1 == params.horizon;
        let outputs: &[usize] = if last { &[0] } else { &[0, 1, 2] };
        let first_index = fs.len();
        for &which in outputs {
            let p = params.clone();
            let state = move |y: &[f64]| {
                if y.is_empty() {
                    (p.initial_infected, p.initial_recovered)
                } else {
                    (y[0], y[1])
                }
            };
            let p2 = params.clone();
            fs.push(node_fn(move |x, y| {
                let (i, r) = state(y);
                let out = covid_step(&p2, t, x[0], i, r);
                match which {
                    0 => out.0,
                    1 => out.1,
                    _ => out.2,
                }
            }));
            parents.push(prev_state.map_or(vec![], |(i, r)| vec![i, r]));
            inputs.push(vec![t]);
        }
        loss_nodes.push(first_index);
        if !last {
            prev_state = Some((first_index + 1, first_index + 2));
        }
    }
    let n_loss = loss_nodes.len();
    parents.push(loss_nodes);
    inputs.push(vec![]);
    let leaf_value = |_: &[f64], y: &[f64]| -> f64 { -y.iter().sum::<f64>() };
    fs.push(node_fn(leaf_value));
    let mut kinds = vec![NodeKind::Surrogate; fs.len() - 1];
    kinds
        .push(NodeKind::known(KnownClosure::new(leaf_value, move |_: &[f64], _: &[f64]| (vec![], vec![-1.0; n_loss]))));
    let topo = NetworkTopology::new(params.horizon, parents, inputs)?;
    let flat_params = params.clone();
    let flat = Arc::new(move |x: &[f64]| {
        let p = &*flat_params;
        let (mut i, mut r) = (p.initial_infected, p.initial_recovered);
        let mut total = 0.0;
        for (t, &xt) in x.iter().enumerate() {
            let a = p.characteristics(xt, t, i);
            let s = (1.0 - i - r).max(0.0);
            let q = a.true_positive * i + a.false_positive * (s + r);
            let next = (i * (1.0 - a.true_positive) * (p.beta * s).exp()).min(s);
            total += p.cost_test * a.reactions + p.cost_isolation * q + p.cost_infection * next;
            r += i;
            i = next;
        }
        -total
    });
    let mut problem = NetworkProblem::from_node_functions(
        "covid_testing",
        topo,
        kinds,
        BoxBounds::uniform(params.horizon, 1.0, params.max_pool_size as f64).expect("static bounds"),
        fs,
    )?
    .with_flat_objective(flat);
    if *params == CovidParams::default() {
        problem = problem.with_reference_optimum(COVID_OPTIMUM);
    }
    Ok(problem)
}

/// Best value of the default COVID instance over all integer pool sizes
/// (attained by individual testing in every period).
pub const COVID_OPTIMUM: f64 = -16.339_226_144_461_42;

// ---------------------------------------------------------------- prop2

/// Default first node `1.5 sin(3x) + 0.2`.
pub fn prop2_first_node(x: f64) -> f64 {
    1.5 * (3.0 * x).sin() + 0.2
}

/// Maximum of `max(1, f_1(x)) − x` on `[0, 1]`, at `3x = acos(2/9)`.
pub fn prop2_optimum() -> f64 {
    let x = (2.0f64 / 9.0).acos() / 3.0;
    prop2_first_node(x) - x
}

pub fn prop2_network() -> Result<NetworkProblem, BenchmarkError> {
    let topo = NetworkTopology::new(1, vec![vec![], vec![0]], vec![vec![0], vec![0]])?;
    let f2 = |x: &[f64], y: &[f64]| -> f64 { y[0].max(1.0) - x[0] };
    let g2 = |_: &[f64], y: &[f64]| (vec![-1.0], vec![if y[0] > 1.0 { 1.0 } else { 0.0 }]);
    let fs = vec![node_fn(|x, _| prop2_first_node(x[0])), node_fn(f2)];
    Ok(NetworkProblem::from_node_functions(
        "prop2_chain",
        topo,
        vec![NodeKind::Surrogate, NodeKind::known(KnownClosure::new(f2, g2))],
        BoxBounds::uniform(1, 0.0, 1.0).expect("static bounds"),
        fs,
    )?
    .with_reference_optimum(prop2_optimum())
    .with_flat_objective(Arc::new(|x: &[f64]| prop2_first_node(x[0]).max(1.0) - x[0])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::uniform_feasible_point;
    use crate::network::evaluate_network;

    fn random_points(p: &NetworkProblem, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| uniform_feasible_point(p.bounds(), p.constraint(), &mut rng)).collect()
    }

    #[test]
    fn registry_builds_every_id() {
        for id in PROBLEM_IDS {
            let p = problem(id).unwrap();
            assert!(p.flat_objective().is_some(), "{id}");
            assert!(p.reference_optimum().is_some_and(f64::is_finite), "{id}");
        }
        assert!(matches!(problem("branin"), Err(BenchmarkError::UnknownProblem(_))));
    }

    #[test]
    fn leaf_matches_flat_objective() {
        for id in PROBLEM_IDS {
            let p = problem(id).unwrap();
            let flat = p.flat_objective().unwrap();
            let tol = match id {
                "manufacturing" | "sis_calibration" => 1e-10,
                "covid_testing" => 0.0,
                _ => 1e-12,
            };
            for x in random_points(&p, 100, 42) {
                let leaf = *evaluate_network(&p, &x).unwrap().last().unwrap();
                let direct = flat(&x);
                assert!(
                    (leaf - direct).abs() <= tol * direct.abs().max(leaf.abs()),
                    "{id} at {x:?}: {leaf} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn alpine2_identities() {
        let p = alpine2_network(6).unwrap();
        let x = [3.0, 0.0, 5.0, 7.0, 1.0, 2.0];
        assert_eq!(*evaluate_network(&p, &x).unwrap().last().unwrap(), 0.0);
        // One-dimensional grid oracle for the extremes of √x sin x.
        let n = 1_000_000;
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..=n {
            let v = sqrt_sin(10.0 * i as f64 / n as f64);
            hi = hi.max(v);
            lo = lo.min(v);
        }
        let grid = hi.powi(5) * -lo;
        assert!((alpine2_optimum(6) - grid).abs() <= 1e-9 * grid);
        assert!(p.reference_optimum().unwrap() > 375.0);
        for x in random_points(&p, 2000, 1) {
            assert!(evaluate_network(&p, &x).unwrap()[5] <= alpine2_optimum(6));
        }
    }

    #[test]
    fn ackley_identities() {
        let p = ackley_network(6).unwrap();
        let h = evaluate_network(&p, &[0.0; 6]).unwrap();
        assert_eq!(h[0], 0.0);
        assert_eq!(h[1], 1.0);
        assert!(h[2].abs() < 1e-14);
        for x in random_points(&p, 500, 2) {
            assert!(evaluate_network(&p, &x).unwrap()[2] <= 1e-14);
        }
    }

    #[test]
    fn rosenbrock_identities() {
        let p = rosenbrock_network(5).unwrap();
        assert_eq!(p.node_count(), 4);
        assert_eq!(evaluate_network(&p, &[1.0; 5]).unwrap(), vec![0.0; 4]);
        assert_eq!(*evaluate_network(&p, &[0.0; 5]).unwrap().last().unwrap(), -4.0);
        assert!(rosenbrock_network(2).is_err());
    }

    #[test]
    fn dropwave_identities() {
        let p = dropwave_network().unwrap();
        assert_eq!(evaluate_network(&p, &[0.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        let h = evaluate_network(&p, &[3.0, 4.0]).unwrap();
        assert_eq!(h[0], 5.0);
        assert!((h[1] - (1.0 + 60f64.cos()) / 14.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r: f64 = rng.random_range(0.0..5.0);
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let v1 = evaluate_network(&p, &[r * a.cos(), r * a.sin()]).unwrap()[1];
            let v2 = evaluate_network(&p, &[r, 0.0]).unwrap()[1];
            assert!((v1 - v2).abs() < 1e-12);
        }
    }

    #[test]
    fn station_throughput_limits() {
        assert_eq!(station_throughput(1.0, 0.0, 10), 0.0);
        let a = 0.3;
        let t = station_throughput(a, a / 0.1, 20);
        assert!((t - a).abs() / a <= 1e-3);
        assert!((station_throughput(a, a, 10) - a * 10.0 / 11.0).abs() < 1e-15);
        // Both branches agree with the geometric formula away from unit load.
        for rho in [0.2, 0.7, 1.3, 4.0] {
            let t = station_throughput(1.0, 1.0 / rho, 10);
            assert!((t - (1.0 - blocking_probability(rho, 10))).abs() < 1e-14);
        }
    }

    /// Event-driven simulation of a single finite-buffer exponential queue.
    fn simulated_throughput(arrival: f64, service: f64, buffer: u32, events: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut t, mut n, mut done) = (0.0, 0u32, 0usize);
        for _ in 0..events {
            let rate = arrival + if n > 0 { service } else { 0.0 };
            t += -(1.0 - rng.random::<f64>()).ln() / rate;
            if rng.random::<f64>() * rate < arrival {
                if n < buffer {
                    n += 1;
                }
            } else {
                n -= 1;
                done += 1;
            }
        }
        done as f64 / t
    }

    #[test]
    fn unit_load_matches_simulation() {
        let sim = simulated_throughput(1.0, 1.0, 10, 2_000_000, 7);
        assert!((sim - 10.0 / 11.0).abs() < 0.01, "{sim}");
    }

    #[test]
    fn manufacturing_identities() {
        let p = manufacturing_network().unwrap();
        assert_eq!(*evaluate_network(&p, &[0.3, 0.0, 0.3, 0.3]).unwrap().last().unwrap(), 0.0);
        let near = [0.249_498_02, 0.249_498_08, 0.250_227_54, 0.250_776_36];
        let v = *evaluate_network(&p, &near).unwrap().last().unwrap();
        assert!((v - MANUFACTURING_OPTIMUM).abs() < 1e-9);
        for x in random_points(&p, 5000, 4) {
            assert!(evaluate_network(&p, &x).unwrap()[3] <= MANUFACTURING_OPTIMUM);
        }
    }

    #[test]
    fn beta_star_is_the_seed_zero_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draw: Vec<f64> = (0..12).map(|_| rng.random_range(0.05..0.8)).collect();
        assert_eq!(draw, SIS_BETA_STAR.to_vec());
    }

    #[test]
    fn sis_identities() {
        let params = SisParams::default();
        let zero = sis_trajectory(&[0.0; 12], &params);
        for i in 0..2 {
            for t in 0..3 {
                assert!((zero[i][t] - 0.01 * 0.5f64.powi(t as i32 + 1)).abs() < 1e-18);
            }
        }
        assert_eq!(sis_trajectory(&SIS_BETA_STAR, &params), params.observed);
        let traj = sis_trajectory(&[0.37; 12], &params);
        assert_eq!(traj[0], traj[1]);

        let p = sis_calibration_network().unwrap();
        assert_eq!(p.node_count(), 7);
        assert_eq!(*evaluate_network(&p, &SIS_BETA_STAR).unwrap().last().unwrap(), 0.0);
        let topo = p.topology();
        for i in 0..2 {
            assert_eq!(topo.parents(2 + i), &[0, 1]);
            assert_eq!(topo.input_coords(2 + i), &[4, 5, 6, 7]);
        }
        assert!(topo.parents(0).is_empty());
        for x in random_points(&p, 500, 5) {
            assert!(evaluate_network(&p, &x).unwrap()[6] <= 0.0);
        }
    }

    #[test]
    fn sis_clamp_never_binds_on_the_domain() {
        let params = SisParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let beta: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let mut prev = [0.01; 2];
            for t in 0..3 {
                let b = &beta[t * 4..t * 4 + 4];
                let mut next = [0.0; 2];
                for i in 0..2 {
                    let raw = prev[i] * 0.5 + (1.0 - prev[i]) * (b[i * 2] * prev[0] + b[i * 2 + 1] * prev[1]);
                    assert!((0.0..=1.0).contains(&raw));
                    next[i] = raw;
                }
                prev = next;
            }
        }
        // Corner of the domain.
        let t = sis_trajectory(&[1.0; 12], &params);
        assert!(t.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn individual_testing_when_pool_size_is_one() {
        let m = TestModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = pooled_test_characteristics(1, 0.3, &m, &mut rng);
        assert_eq!(c.true_positive, m.individual_sensitivity);
        assert_eq!(c.reactions, 1.0);
    }

    #[test]
    fn no_infection_with_perfect_specificity() {
        let m = TestModel { false_positive: 0.0, ..TestModel::default() };
        for x in [2usize, 5, 12] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let c = pooled_test_characteristics(x, 0.0, &m, &mut rng);
            assert_eq!(c.false_positive, 0.0);
            assert!((c.reactions - 2.0 / x as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn characteristics_are_deterministic_and_bounded() {
        let m = TestModel::default();
        for x in [2usize, 7, 20] {
            for prev in [0.0, 0.01, 0.2, 1.0] {
                let a = pooled_test_characteristics(x, prev, &m, &mut ChaCha8Rng::seed_from_u64(9));
                let b = pooled_test_characteristics(x, prev, &m, &mut ChaCha8Rng::seed_from_u64(9));
                assert_eq!(a, b);
                assert!((0.0..=1.0).contains(&a.true_positive) && (0.0..=1.0).contains(&a.false_positive));
                assert!(a.reactions > 0.0 && a.reactions <= 1.0 + 2.0 / x as f64);
            }
        }
    }

    /// Expected counts over all `2^16` infection patterns of a 4×4 array:
    /// true positives, infected cells, false positives, clean cells and
    /// individual tests, each weighted by the pattern probability.
    fn enumerate_four_by_four(prevalence: f64, m: &TestModel) -> (f64, f64, f64) {
        let x = 4;
        let s = m.pool_sensitivity(x);
        let fp = m.false_positive;
        let (mut tp, mut inf, mut fpos, mut clean, mut tests) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for pattern in 0u32..(1 << 16) {
            let k = pattern.count_ones() as i32;
            let w = prevalence.powi(k) * (1.0 - prevalence).powi(16 - k);
            let cell = |r: usize, c: usize| pattern >> (r * x + c) & 1 == 1;
            let row: Vec<f64> = (0..x).map(|r| if (0..x).any(|c| cell(r, c)) { s } else { fp }).collect();
            let col: Vec<f64> = (0..x).map(|c| if (0..x).any(|r| cell(r, c)) { s } else { fp }).collect();
            for r in 0..x {
                for c in 0..x {
                    let both = row[r] * col[c];
                    tests += w * both;
                    if cell(r, c) {
                        inf += w;
                        tp += w * both * m.individual_sensitivity;
                    } else {
                        clean += w;
                        fpos += w * both * fp;
                    }
                }
            }
        }
        (tp / inf, fpos / clean, (tests + 8.0) / 16.0)
    }

    #[test]
    fn pooled_testing_matches_exact_enumeration() {
        let m = TestModel::default();
        let (tp, fp, c) = enumerate_four_by_four(0.02, &m);
        let runs: Vec<PoolCharacteristics> = (0..30)
            .map(|s| pooled_test_characteristics(4, 0.02, &m, &mut ChaCha8Rng::seed_from_u64(100 + s)))
            .collect();
        let stats = |f: &dyn Fn(&PoolCharacteristics) -> f64| {
            let v: Vec<f64> = runs.iter().map(f).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            (v[0], mean, sd)
        };
        for (name, truth, (first, mean, se)) in [
            ("tp", tp, stats(&|a| a.true_positive)),
            ("fp", fp, stats(&|a| a.false_positive)),
            ("reactions", c, stats(&|a| a.reactions)),
        ] {
            let se = se.max(1e-12);
            assert!((first - truth).abs() <= 3.0 * se, "{name}: {first} vs {truth} (se {se})");
            assert!((mean - truth).abs() <= 3.0 * se / (30f64).sqrt(), "{name}: mean {mean} vs {truth}");
        }
    }

    #[test]
    fn perfect_testing_stops_transmission() {
        let params = CovidParams { test_model: TestModel::perfect(), ..CovidParams::default() };
        for x in [1.0, 4.0, 13.0] {
            let (_, next_i, _) = covid_step(&params, 0, x, 0.01, 0.0);
            assert_eq!(next_i, 0.0);
        }
    }

    #[test]
    fn no_infection_costs_only_reagents() {
        let params = CovidParams {
            initial_infected: 0.0,
            test_model: TestModel { false_positive: 0.0, ..TestModel::default() },
            ..CovidParams::default()
        };
        for x in [1.0, 3.0, 10.0] {
            let (loss, _, _) = covid_step(&params, 1, x, 0.0, 0.0);
            let reagent = params.characteristics(x, 1, 0.0).reactions;
            assert_eq!(loss, params.cost_test * reagent);
        }
    }

    #[test]
    fn covid_landscape_is_nontrivial_and_populations_stay_valid() {
        let p = covid_network().unwrap();
        assert_eq!(p.node_count(), 8);
        let corner_lo = *evaluate_network(&p, &[1.0; 3]).unwrap().last().unwrap();
        let corner_hi = *evaluate_network(&p, &[20.0; 3]).unwrap().last().unwrap();
        assert_ne!(corner_lo, corner_hi);
        let params = CovidParams::default();
        let grid = [1.0, 5.75, 10.5, 15.25, 20.0];
        let mut values = Vec::new();
        for a in grid {
            for b in grid {
                for c in grid {
                    let h = evaluate_network(&p, &[a, b, c]).unwrap();
                    values.push(h[7]);
                    // I_{t+1} + R_{t+1} ≤ 1 for both tracked transitions.
                    assert!(h[1] + h[2] <= 1.0 + 1e-15 && h[4] + h[5] <= 1.0 + 1e-15);
                }
            }
        }
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi - lo > 1.0);
        assert!(hi <= COVID_OPTIMUM);
        assert_eq!(params.pool_size(4.49), 4);
        assert_eq!(params.pool_size(1.2), 1);
    }

    #[test]
    fn prop2_identities() {
        let p = prop2_network().unwrap();
        assert_eq!(evaluate_network(&p, &[0.0]).unwrap(), vec![0.2, 1.0]);
        for x in [0.05, 0.9, 0.97] {
            let h = evaluate_network(&p, &[x]).unwrap();
            assert!(h[0] <= 1.0);
            assert_eq!(h[1], 1.0 - x);
        }
        let n = 100_000;
        let grid = (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                prop2_first_node(x).max(1.0) - x
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((prop2_optimum() - grid).abs() < 1e-9);
        assert!((prop2_optimum() - 1.2135).abs() < 1e-4);
    }

    #[test]
    #[ignore = "exhaustive search over all 8000 integer pool-size triples"]
    fn covid_optimum_is_the_integer_grid_maximum() {
        let p = covid_network().unwrap();
        let flat = p.flat_objective().unwrap();
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        for a in 1..=20 {
            for b in 1..=20 {
                for c in 1..=20 {
                    let x = [a as f64, b as f64, c as f64];
                    let v = flat(&x);
                    if v > best.0 {
                        best = (v, x);
                    }
                }
            }
        }
        println!("covid optimum {:?} at {:?}", best.0, best.1);
        assert_eq!(best.0, COVID_OPTIMUM);
    }
}

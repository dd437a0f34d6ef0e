//! The function-network posterior: one GP per surrogate node, Algorithm-1
//! sampling of the leaf and reparametrized sample paths.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::gp::{FitOptions, GpError, InputScaling, ScaledNode};
use crate::network::{KnownFunction, NetworkProblem, NodeKind};
use crate::numerics::{mix_seed, BaseSampleMatrix};

/// Posterior standard deviations below this are treated as exactly zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

const KNOWN_NODE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("node {node} is known but its recorded value {recorded} differs from {expected}")]
    InconsistentKnownNode { node: usize, recorded: f64, expected: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite observation at node {node}")]
    NonFinite { node: usize },
    #[error("fitting node {node}: {source}")]
    Fit { node: usize, source: GpError },
}

/// Observed points, all node values and the incumbent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationLog {
    points: Vec<Vec<f64>>,
    node_values: Vec<Vec<f64>>,
    best: Option<usize>,
}

impl EvaluationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Vec<f64>, h: Vec<f64>) {
        let leaf = *h.last().expect("at least one node");
        let better = match self.best {
            None => true,
            Some(b) => leaf > *self.node_values[b].last().unwrap(),
        };
        self.points.push(x);
        self.node_values.push(h);
        if better {
            self.best = Some(self.points.len() - 1);
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn node_values(&self) -> &[Vec<f64>] {
        &self.node_values
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.node_values.iter().map(|h| *h.last().unwrap()).collect()
    }

    /// Best observed leaf value `g*`.
    pub fn g_star(&self) -> Option<f64> {
        self.best.map(|b| *self.node_values[b].last().unwrap())
    }

    /// First row achieving `g*`.
    pub fn incumbent_point(&self) -> Option<&[f64]> {
        self.best.map(|b| self.points[b].as_slice())
    }

    pub fn incumbent_index(&self) -> Option<usize> {
        self.best
    }
}

#[derive(Clone)]
pub enum NodeModel {
    Surrogate(ScaledNode),
    Known(Arc<dyn KnownFunction>),
}

impl std::fmt::Debug for NodeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeModel::Surrogate(s) => f.debug_tuple("Surrogate").field(s).finish(),
            NodeModel::Known(_) => write!(f, "Known"),
        }
    }
}

/// Reparametrized paths at one `x` for every row of a base-sample matrix.
#[derive(Debug, Clone, Default)]
pub struct PathBatch {
    /// Leaf value per sample.
    pub values: Vec<f64>,
    /// `Σ_m w_m ∂ĝ(x; Z_m)/∂x` for the weights requested; empty when no
    /// gradient was asked for.
    pub weighted_gradient: Vec<f64>,
}

/// Independent per-node GP posteriors conditioned on an evaluation log.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    problem: NetworkProblem,
    nodes: Vec<NodeModel>,
    log: EvaluationLog,
    seed: u64,
}

impl NetworkModel {
    /// Model with no observations; `seed` drives hyperparameter refits.
    pub fn new(problem: NetworkProblem, seed: u64) -> Self {
        let log = EvaluationLog::new();
        let nodes = build_nodes(&problem, &log, seed).expect("prior nodes never fail");
        Self { problem, nodes, log, seed }
    }

    pub fn problem(&self) -> &NetworkProblem {
        &self.problem
    }

    pub fn log(&self) -> &EvaluationLog {
        &self.log
    }

    pub fn node(&self, k: usize) -> &NodeModel {
        &self.nodes[k]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Appends one observation and refits every surrogate node.
    pub fn ingest(&self, x: &[f64], h: &[f64]) -> Result<Self, ModelError> {
        self.ingest_batch(&[x.to_vec()], &[h.to_vec()])
    }

    /// Appends several observations, refitting once at the end.
    pub fn ingest_batch(&self, xs: &[Vec<f64>], hs: &[Vec<f64>]) -> Result<Self, ModelError> {
        if xs.len() != hs.len() {
            return Err(ModelError::Dimension(format!("{} points but {} node-value rows", xs.len(), hs.len())));
        }
        let mut log = self.log.clone();
        for (x, h) in xs.iter().zip(hs) {
            self.check_observation(x, h)?;
            log.push(x.clone(), h.clone());
        }
        let nodes = build_nodes(&self.problem, &log, self.seed)?;
        Ok(Self { problem: self.problem.clone(), nodes, log, seed: self.seed })
    }

    fn check_observation(&self, x: &[f64], h: &[f64]) -> Result<(), ModelError> {
        let topo = self.problem.topology();
        if x.len() != topo.decision_dim() {
            return Err(ModelError::Dimension(format!(
                "x has {} coordinates, expected {}",
                x.len(),
                topo.decision_dim()
            )));
        }
        if h.len() != topo.node_count() {
            return Err(ModelError::Dimension(format!("h has {} entries, expected {}", h.len(), topo.node_count())));
        }
        if let Some(d) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Dimension(format!("x[{d}] is not finite")));
        }
        if let Some(node) = h.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { node });
        }
        for (k, kind) in self.problem.node_kinds().iter().enumerate() {
            if let NodeKind::Known(f) = kind {
                let input = topo.node_input(k, x, h);
                let (xs, ys) = split_input(&input, topo.input_coords(k).len());
                let expected = f.value(xs, ys);
                if (expected - h[k]).abs() > KNOWN_NODE_TOL * expected.abs().max(1.0) {
                    return Err(ModelError::InconsistentKnownNode { node: k, recorded: h[k], expected });
                }
            }
        }
        Ok(())
    }

    /// One draw of `g(x)` from the network posterior, sampling each node in
    /// turn given its sampled parents.
    pub fn sample_g<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let topo = self.problem.topology();
        let mut h = vec![0.0; topo.node_count()];
        for k in 0..topo.node_count() {
            let input = topo.node_input(k, x, &h);
            h[k] = match &self.nodes[k] {
                NodeModel::Known(f) => {
                    let (xs, ys) = split_input(&input, topo.input_coords(k).len());
                    f.value(xs, ys)
                }
                NodeModel::Surrogate(node) => {
                    let (mean, var) = node.predict(&input);
                    let sd = clamp_sigma(var);
                    if sd == 0.0 {
                        mean
                    } else {
                        Normal::new(mean, sd).expect("finite moments").sample(rng)
                    }
                }
            };
        }
        h[topo.leaf()]
    }

    /// `ĝ(x; Z)` for a single standard-normal vector `z` of length K.
    pub fn path_value(&self, x: &[f64], z: &[f64]) -> f64 {
        let zs = BaseSampleMatrix::single(z);
        self.path_batch(x, &zs, |_| 0.0, false).values[0]
    }

    /// `∂ĝ(x; Z)/∂x`.
    pub fn path_gradient(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let zs = BaseSampleMatrix::single(z);
        self.path_batch(x, &zs, |_| 1.0, true).weighted_gradient
    }

    /// All node values along every path: `rows × K`, row-major.
    pub fn path_nodes(&self, x: &[f64], z: &BaseSampleMatrix) -> Vec<f64> {
        self.forward(x, z, false).0
    }

    /// Evaluates `ĝ(x; Z_m)` for every row `m` of `z`. With `with_grad`, the
    /// gradient of `Σ_m weight(ĝ_m) ĝ_m` (weights held fixed) is
    /// accumulated by a reverse sweep through the recursion.
    pub fn path_batch<W>(&self, x: &[f64], z: &BaseSampleMatrix, weight: W, with_grad: bool) -> PathBatch
    where
        W: Fn(f64) -> f64,
    {
        let topo = self.problem.topology();
        let k_count = topo.node_count();
        let rows = z.rows();
        let leaf = topo.leaf();
        let (h, local) = self.forward(x, z, with_grad);
        let values: Vec<f64> = (0..rows).map(|m| h[m * k_count + leaf]).collect();
        if !with_grad {
            return PathBatch { values, weighted_gradient: Vec::new() };
        }
        let mut grad = vec![0.0; x.len()];
        let mut adj = vec![0.0; k_count];
        for m in 0..rows {
            let w = weight(values[m]);
            if w == 0.0 {
                continue;
            }
            adj.iter_mut().for_each(|a| *a = 0.0);
            adj[leaf] = w;
            for k in (0..k_count).rev() {
                let a = adj[k];
                if a == 0.0 {
                    continue;
                }
                let g = local[k].row(m);
                let coords = topo.input_coords(k);
                for (i, &d) in coords.iter().enumerate() {
                    grad[d] += a * g[i];
                }
                for (i, &j) in topo.parents(k).iter().enumerate() {
                    adj[j] += a * g[coords.len() + i];
                }
            }
        }
        PathBatch { values, weighted_gradient: grad }
    }

    /// Forward recursion for all samples. Returns node values (`rows × K`)
    /// and, when requested, each node's local input gradient.
    fn forward(&self, x: &[f64], z: &BaseSampleMatrix, with_grad: bool) -> (Vec<f64>, Vec<LocalGrad>) {
        let topo = self.problem.topology();
        let k_count = topo.node_count();
        let rows = z.rows();
        assert_eq!(z.cols(), k_count, "base samples need one column per node");
        let mut h = vec![0.0; rows * k_count];
        let mut local = Vec::with_capacity(if with_grad { k_count } else { 0 });
        for k in 0..k_count {
            let coords = topo.input_coords(k);
            let parents = topo.parents(k);
            let dk = coords.len() + parents.len();
            // Inputs are shared across samples when the node has no parents.
            let count = if parents.is_empty() { 1 } else { rows };
            let mut inputs = Vec::with_capacity(count * dk);
            for m in 0..count {
                inputs.extend(coords.iter().map(|&d| x[d]));
                inputs.extend(parents.iter().map(|&j| h[m * k_count + j]));
            }
            match &self.nodes[k] {
                NodeModel::Known(f) => {
                    let mut g = Vec::with_capacity(if with_grad { count * dk } else { 0 });
                    let mut vals = Vec::with_capacity(count);
                    for m in 0..count {
                        let (xs, ys) = split_input(&inputs[m * dk..(m + 1) * dk], coords.len());
                        vals.push(f.value(xs, ys));
                        if with_grad {
                            let (gx, gy) = f.gradient(xs, ys);
                            g.extend(gx);
                            g.extend(gy);
                        }
                    }
                    for m in 0..rows {
                        h[m * k_count + k] = vals[if count == 1 { 0 } else { m }];
                    }
                    if with_grad {
                        local.push(LocalGrad { data: g, dim: dk, shared: count == 1 });
                    }
                }
                NodeModel::Surrogate(node) => {
                    let p = node.predict_batch_flat(&inputs, count, with_grad);
                    let sigma: Vec<f64> = p.variance.iter().map(|v| clamp_sigma(*v)).collect();
                    for m in 0..rows {
                        let i = if count == 1 { 0 } else { m };
                        h[m * k_count + k] = p.mean[i] + sigma[i] * z.get(m, k);
                    }
                    if with_grad {
                        if count == 1 && rows > 1 {
                            // Shared input but per-sample Z: expand.
                            let mut g = Vec::with_capacity(rows * dk);
                            for m in 0..rows {
                                push_path_grad(&mut g, &p.mean_grad, &p.variance_grad, 0, dk, sigma[0], z.get(m, k));
                            }
                            local.push(LocalGrad { data: g, dim: dk, shared: false });
                        } else {
                            let mut g = Vec::with_capacity(rows * dk);
                            for m in 0..rows {
                                push_path_grad(&mut g, &p.mean_grad, &p.variance_grad, m, dk, sigma[m], z.get(m, k));
                            }
                            local.push(LocalGrad { data: g, dim: dk, shared: false });
                        }
                    }
                }
            }
        }
        (h, local)
    }
}

struct LocalGrad {
    data: Vec<f64>,
    dim: usize,
    shared: bool,
}

impl LocalGrad {
    fn row(&self, m: usize) -> &[f64] {
        let i = if self.shared { 0 } else { m };
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `∂(μ + σ z)/∂input = ∂μ + z ∂var/(2σ)`, with the σ term dropped when σ
/// is floored to zero.
fn push_path_grad(out: &mut Vec<f64>, mean_grad: &[f64], var_grad: &[f64], i: usize, dim: usize, sigma: f64, z: f64) {
    let mg = &mean_grad[i * dim..(i + 1) * dim];
    let vg = &var_grad[i * dim..(i + 1) * dim];
    if sigma == 0.0 {
        out.extend_from_slice(mg);
    } else {
        let c = z / (2.0 * sigma);
        out.extend(mg.iter().zip(vg).map(|(a, b)| a + c * b));
    }
}

fn clamp_sigma(variance: f64) -> f64 {
    let s = variance.max(0.0).sqrt();
    if s < SIGMA_FLOOR {
        0.0
    } else {
        s
    }
}

fn split_input(input: &[f64], nx: usize) -> (&[f64], &[f64]) {
    input.split_at(nx)
}

/// Per-node input ranges: box bounds for decision coordinates, observed
/// min/max for parent outputs.
fn node_scaling(problem: &NetworkProblem, log: &EvaluationLog, k: usize) -> InputScaling {
    let topo = problem.topology();
    let bounds = problem.bounds();
    let mut ranges: Vec<(f64, f64)> =
        topo.input_coords(k).iter().map(|&d| (bounds.lower()[d], bounds.upper()[d])).collect();
    for &j in topo.parents(k) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for h in log.node_values() {
            lo = lo.min(h[j]);
            hi = hi.max(h[j]);
        }
        if lo.is_finite() && hi.is_finite() {
            ranges.push((lo, hi));
        } else {
            ranges.push((0.0, 1.0));
        }
    }
    InputScaling::from_ranges(&ranges)
}

fn build_nodes(problem: &NetworkProblem, log: &EvaluationLog, seed: u64) -> Result<Vec<NodeModel>, ModelError> {
    let topo = problem.topology();
    let n = log.len();
    let mut nodes = Vec::with_capacity(topo.node_count());
    for (k, kind) in problem.node_kinds().iter().enumerate() {
        match kind {
            NodeKind::Known(f) => nodes.push(NodeModel::Known(f.clone())),
            NodeKind::Surrogate => {
                let inputs: Vec<Vec<f64>> =
                    log.points().iter().zip(log.node_values()).map(|(x, h)| topo.node_input(k, x, h)).collect();
                let targets: Vec<f64> = log.node_values().iter().map(|h| h[k]).collect();
                let opts = FitOptions::with_seed(mix_seed(mix_seed(seed, n as u64), k as u64));
                let node = ScaledNode::fit(&inputs, &targets, node_scaling(problem, log, k), &opts)
                    .map_err(|source| ModelError::Fit { node: k, source })?;
                nodes.push(NodeModel::Surrogate(node));
            }
        }
    }
    Ok(nodes)
}

//! Function-network problems: a DAG of node functions over a decision
//! vector, where node `k` reads the coordinates `I(k)` of `x` and the outputs
//! of its parents `J(k)`, and the single leaf is the objective.
//!
//! Node indices and coordinate indices are zero-based throughout.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{BoxBounds, SimplexConstraint};

/// Feasibility tolerance used when checking points handed to evaluators.
pub const FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NetworkError {
    #[error("node {node} lists parent {parent}, but parents must precede their children")]
    CycleOrOrder { node: usize, parent: usize },
    #[error("network must have a single leaf; nodes {leaves:?} feed no other node")]
    MultipleLeaves { leaves: Vec<usize> },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("point {point:?} is outside the feasible set")]
    InfeasiblePoint { point: Vec<f64> },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Parent sets `J(k)` and decision-coordinate sets `I(k)` for every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    decision_dim: usize,
    parents: Vec<Vec<usize>>,
    input_coords: Vec<Vec<usize>>,
}

impl NetworkTopology {
    /// Builds and validates a topology.
    pub fn new(
        decision_dim: usize,
        parents: Vec<Vec<usize>>,
        input_coords: Vec<Vec<usize>>,
    ) -> Result<Self, NetworkError> {
        validate_topology(Self { decision_dim, parents, input_coords })
    }

    /// Chain `0 → 1 → … → K−1` where node `k` additionally reads `inputs[k]`.
    pub fn chain(decision_dim: usize, inputs: Vec<Vec<usize>>) -> Result<Self, NetworkError> {
        let parents = (0..inputs.len()).map(|k| if k == 0 { vec![] } else { vec![k - 1] }).collect();
        Self::new(decision_dim, parents, inputs)
    }

    pub fn node_count(&self) -> usize {
        self.parents.len()
    }

    pub fn decision_dim(&self) -> usize {
        self.decision_dim
    }

    pub fn parents(&self, k: usize) -> &[usize] {
        &self.parents[k]
    }

    pub fn input_coords(&self, k: usize) -> &[usize] {
        &self.input_coords[k]
    }

    pub fn leaf(&self) -> usize {
        self.node_count() - 1
    }

    /// Input dimension of node `k`'s surrogate: `|I(k)| + |J(k)|`.
    pub fn node_input_dim(&self, k: usize) -> usize {
        self.input_coords[k].len() + self.parents[k].len()
    }

    /// Assembles node `k`'s input `(x_{I(k)}, h_{J(k)})`.
    pub fn node_input(&self, k: usize, x: &[f64], node_values: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.node_input_dim(k));
        z.extend(self.input_coords[k].iter().map(|&d| x[d]));
        z.extend(self.parents[k].iter().map(|&j| node_values[j]));
        z
    }
}

/// Checks ordering, single-leaf and index-range invariants.
pub fn validate_topology(t: NetworkTopology) -> Result<NetworkTopology, NetworkError> {
    let k_count = t.parents.len();
    if k_count == 0 {
        return Err(NetworkError::Invalid("network needs at least one node".into()));
    }
    if t.decision_dim == 0 {
        return Err(NetworkError::Invalid("decision dimension must be positive".into()));
    }
    if t.input_coords.len() != k_count {
        return Err(NetworkError::Invalid(format!(
            "{} parent lists but {} input-coordinate lists",
            k_count,
            t.input_coords.len()
        )));
    }
    for (k, (parents, coords)) in t.parents.iter().zip(&t.input_coords).enumerate() {
        if let Some(&j) = parents.iter().find(|&&j| j >= k_count) {
            return Err(NetworkError::IndexOutOfRange(format!(
                "node {k} lists parent {j} but there are {k_count} nodes"
            )));
        }
        if let Some(&d) = coords.iter().find(|&&d| d >= t.decision_dim) {
            return Err(NetworkError::IndexOutOfRange(format!(
                "node {k} reads coordinate {d} but the decision vector has {} coordinates",
                t.decision_dim
            )));
        }
        if let Some(&j) = parents.iter().find(|&&j| j >= k) {
            return Err(NetworkError::CycleOrOrder { node: k, parent: j });
        }
    }
    let mut feeds = vec![false; k_count];
    for parents in &t.parents {
        for &j in parents {
            feeds[j] = true;
        }
    }
    let leaves: Vec<usize> = (0..k_count).filter(|&k| !feeds[k]).collect();
    if leaves.len() != 1 {
        return Err(NetworkError::MultipleLeaves { leaves });
    }
    Ok(t)
}

/// A cheap node with an analytic value and gradient (`μ ≡ f`, `Σ ≡ 0`).
pub trait KnownFunction: Send + Sync {
    fn value(&self, x: &[f64], parents: &[f64]) -> f64;

    /// Partial derivatives with respect to `x_{I(k)}` and `y_{J(k)}`.
    fn gradient(&self, x: &[f64], parents: &[f64]) -> (Vec<f64>, Vec<f64>);
}

/// Known node given by a pair of closures.
pub struct KnownClosure<V, G> {
    value: V,
    gradient: G,
}

impl<V, G> KnownClosure<V, G>
where
    V: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync,
{
    pub fn new(value: V, gradient: G) -> Self {
        Self { value, gradient }
    }
}

impl<V, G> KnownFunction for KnownClosure<V, G>
where
    V: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync,
{
    fn value(&self, x: &[f64], parents: &[f64]) -> f64 {
        (self.value)(x, parents)
    }

    fn gradient(&self, x: &[f64], parents: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.gradient)(x, parents)
    }
}

#[derive(Clone)]
pub enum NodeKind {
    Surrogate,
    Known(Arc<dyn KnownFunction>),
}

impl NodeKind {
    pub fn known<K: KnownFunction + 'static>(f: K) -> Self {
        NodeKind::Known(Arc::new(f))
    }

    pub fn is_known(&self) -> bool {
        matches!(self, NodeKind::Known(_))
    }
}

impl fmt::Debug for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Surrogate => write!(f, "Surrogate"),
            NodeKind::Known(_) => write!(f, "Known"),
        }
    }
}

/// Black-box map `x ↦ (h_1(x), …, h_K(x))`.
pub trait NetworkEvaluator: Send + Sync {
    fn evaluate(&self, x: &[f64]) -> Vec<f64>;
}

pub type NodeFunction = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Evaluator that runs `h_k = f_k(x_{I(k)}, h_{J(k)})` in node order.
pub struct NodeRecursion {
    topology: NetworkTopology,
    functions: Vec<NodeFunction>,
}

impl NodeRecursion {
    pub fn new(topology: NetworkTopology, functions: Vec<NodeFunction>) -> Self {
        assert_eq!(topology.node_count(), functions.len(), "one function per node");
        Self { topology, functions }
    }
}

impl NetworkEvaluator for NodeRecursion {
    fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let k_count = self.topology.node_count();
        let mut h = vec![0.0; k_count];
        for k in 0..k_count {
            let xs: Vec<f64> = self.topology.input_coords(k).iter().map(|&d| x[d]).collect();
            let ys: Vec<f64> = self.topology.parents(k).iter().map(|&j| h[j]).collect();
            h[k] = (self.functions[k])(&xs, &ys);
        }
        h
    }
}

pub type FlatObjective = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A registered optimization problem: `max_{x ∈ 𝕏} h_K(x)`.
#[derive(Clone)]
pub struct NetworkProblem {
    name: String,
    topology: NetworkTopology,
    node_kinds: Vec<NodeKind>,
    bounds: BoxBounds,
    constraint: Option<SimplexConstraint>,
    evaluator: Arc<dyn NetworkEvaluator>,
    reference_optimum: Option<f64>,
    flat_objective: Option<FlatObjective>,
}

impl fmt::Debug for NetworkProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkProblem")
            .field("name", &self.name)
            .field("topology", &self.topology)
            .field("node_kinds", &self.node_kinds)
            .field("bounds", &self.bounds)
            .field("constraint", &self.constraint)
            .field("reference_optimum", &self.reference_optimum)
            .finish()
    }
}

impl NetworkProblem {
    pub fn new(
        name: impl Into<String>,
        topology: NetworkTopology,
        node_kinds: Vec<NodeKind>,
        bounds: BoxBounds,
        evaluator: Arc<dyn NetworkEvaluator>,
    ) -> Result<Self, NetworkError> {
        if node_kinds.len() != topology.node_count() {
            return Err(NetworkError::Invalid(format!(
                "{} node kinds for {} nodes",
                node_kinds.len(),
                topology.node_count()
            )));
        }
        if bounds.dim() != topology.decision_dim() {
            return Err(NetworkError::Invalid(format!(
                "bounds have {} coordinates, topology expects {}",
                bounds.dim(),
                topology.decision_dim()
            )));
        }
        Ok(Self {
            name: name.into(),
            topology,
            node_kinds,
            bounds,
            constraint: None,
            evaluator,
            reference_optimum: None,
            flat_objective: None,
        })
    }

    /// Problem whose evaluator is the node recursion over `functions`; Known
    /// nodes use their own analytic value.
    pub fn from_node_functions(
        name: impl Into<String>,
        topology: NetworkTopology,
        node_kinds: Vec<NodeKind>,
        bounds: BoxBounds,
        functions: Vec<NodeFunction>,
    ) -> Result<Self, NetworkError> {
        if functions.len() != topology.node_count() {
            return Err(NetworkError::Invalid("one node function per node required".into()));
        }
        let evaluator = Arc::new(NodeRecursion::new(topology.clone(), functions));
        Self::new(name, topology, node_kinds, bounds, evaluator)
    }

    pub fn with_constraint(mut self, constraint: SimplexConstraint) -> Result<Self, NetworkError> {
        if self.bounds.lower().iter().sum::<f64>() > constraint.cap() {
            return Err(NetworkError::Invalid("budget constraint excludes the whole box".into()));
        }
        self.constraint = Some(constraint);
        Ok(self)
    }

    pub fn with_reference_optimum(mut self, value: f64) -> Self {
        self.reference_optimum = Some(value);
        self
    }

    pub fn with_flat_objective(mut self, f: FlatObjective) -> Self {
        self.flat_objective = Some(f);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn node_kinds(&self) -> &[NodeKind] {
        &self.node_kinds
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn constraint(&self) -> Option<&SimplexConstraint> {
        self.constraint.as_ref()
    }

    pub fn reference_optimum(&self) -> Option<f64> {
        self.reference_optimum
    }

    /// Closed-form objective computed without the network decomposition.
    pub fn flat_objective(&self) -> Option<&FlatObjective> {
        self.flat_objective.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.topology.decision_dim()
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.bounds.contains(x, FEASIBILITY_TOL) && self.constraint.is_none_or(|c| c.is_satisfied(x, FEASIBILITY_TOL))
    }
}

/// Evaluates every node of the true network at `x`; the objective is the
/// last component.
pub fn evaluate_network(p: &NetworkProblem, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
    if x.len() != p.dim() || !p.is_feasible(x) || x.iter().any(|v| !v.is_finite()) {
        return Err(NetworkError::InfeasiblePoint { point: x.to_vec() });
    }
    let h = p.evaluator.evaluate(x);
    if h.len() != p.node_count() {
        return Err(NetworkError::Invalid(format!(
            "evaluator returned {} node values for {} nodes",
            h.len(),
            p.node_count()
        )));
    }
    Ok(h)
}

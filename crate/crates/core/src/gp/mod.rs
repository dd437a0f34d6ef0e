//! Exact noiseless Gaussian-process regression for a single node:
//! Matérn-5/2 ARD kernel, constant mean, MAP fitting and the closed-form
//! posterior.

mod fit;
mod kernel;
mod posterior;

use std::cmp::Ordering;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use fit::{
    fit_map, fit_map_with, log_marginal_likelihood, log_prior, FitOptions, DEGENERATE_OUTPUT_SCALE, LENGTH_SCALE_PRIOR,
    OUTPUT_SCALE_PRIOR,
};
pub use kernel::{matern52_ard, matern52_ard_gradient};
pub use posterior::{posterior, BatchPrediction, NodePosterior};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GpError {
    #[error("all targets are equal; use the fallback hyperparameters")]
    DegenerateData { fallback: GpHyperparameters },
    #[error("fitting needs at least two observations, got {n}")]
    InsufficientData { n: usize },
    #[error("training inputs contain duplicated rows")]
    DuplicateInputs,
    #[error("every hyperparameter optimization start failed")]
    FitFailed,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GpHyperparameters {
    pub constant_mean: f64,
    /// Prior variance.
    pub output_scale: f64,
    pub length_scales: Vec<f64>,
}

impl GpHyperparameters {
    /// Prior-mode hyperparameters for standardized data on the unit cube.
    pub fn default_for_dim(dim: usize) -> Self {
        let (a, b) = LENGTH_SCALE_PRIOR;
        Self { constant_mean: 0.0, output_scale: 1.0, length_scales: vec![(a - 1.0) / b; dim] }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.output_scale) || !self.length_scales.iter().all(|l| ok(*l)) || !self.constant_mean.is_finite() {
            return Err(GpError::InvalidHyperparameters(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Affine map of raw node inputs onto (roughly) the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl InputScaling {
    /// Coordinates map as `(z − lower)/(upper − lower)`; degenerate ranges
    /// use unit width.
    pub fn from_ranges(ranges: &[(f64, f64)]) -> Self {
        let offset = ranges.iter().map(|r| r.0).collect();
        let scale = ranges
            .iter()
            .map(|(lo, hi)| {
                let w = hi - lo;
                if w.is_finite() && w > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
                    w
                } else {
                    1.0
                }
            })
            .collect();
        Self { offset, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self { offset: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.offset.iter().zip(&self.scale)).map(|(v, (o, s))| (v - o) / s).collect()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

/// A node GP fitted on normalized inputs, queried in raw units.
#[derive(Debug, Clone)]
pub struct ScaledNode {
    scaling: InputScaling,
    posterior: NodePosterior,
}

impl ScaledNode {
    /// Normalizes, deduplicates and canonically orders the training data,
    /// fits hyperparameters by MAP and conditions the posterior.
    ///
    /// The result depends only on the set of observations, not their order.
    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &[f64],
        scaling: InputScaling,
        opts: &FitOptions,
    ) -> Result<Self, GpError> {
        let dim = scaling.dim();
        let mut rows: Vec<(Vec<f64>, f64)> = inputs.iter().zip(targets).map(|(z, y)| (scaling.apply(z), *y)).collect();
        rows.sort_by(|a, b| lexicographic(&a.0, &b.0).then(a.1.total_cmp(&b.1)));
        let mut unique: Vec<(Vec<f64>, f64)> = Vec::with_capacity(rows.len());
        for row in rows {
            let dup = unique.iter().any(|u| u.0.iter().zip(&row.0).all(|(a, b)| (a - b).abs() <= 1e-10));
            if !dup {
                unique.push(row);
            }
        }
        let xs: Vec<Vec<f64>> = unique.iter().map(|r| r.0.clone()).collect();
        let ys: Vec<f64> = unique.iter().map(|r| r.1).collect();
        let hyper = match ys.len() {
            0 => GpHyperparameters::default_for_dim(dim),
            1 => GpHyperparameters { constant_mean: ys[0], ..GpHyperparameters::default_for_dim(dim) },
            _ => match fit_map_with(&xs, &ys, opts) {
                Ok(h) => h,
                Err(GpError::DegenerateData { fallback }) => fallback,
                Err(e) => return Err(e),
            },
        };
        let posterior = NodePosterior::new(hyper, &xs, &ys)?;
        Ok(Self { scaling, posterior })
    }

    pub fn from_parts(scaling: InputScaling, posterior: NodePosterior) -> Self {
        Self { scaling, posterior }
    }

    pub fn posterior(&self) -> &NodePosterior {
        &self.posterior
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn dim(&self) -> usize {
        self.scaling.dim()
    }

    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        self.posterior.predict(&self.scaling.apply(z))
    }

    /// Batched prediction at raw points (row-major `count × dim`); gradients
    /// are with respect to the raw coordinates.
    pub fn predict_batch_flat(&self, points: &[f64], count: usize, with_grad: bool) -> BatchPrediction {
        let dim = self.dim();
        let mut scaled = Vec::with_capacity(points.len());
        for m in 0..count {
            scaled.extend(self.scaling.apply(&points[m * dim..(m + 1) * dim]));
        }
        let mut p = self.posterior.predict_batch_flat(&scaled, count, with_grad);
        if with_grad {
            for m in 0..count {
                for (d, s) in self.scaling.scale.iter().enumerate() {
                    p.mean_grad[m * dim + d] /= s;
                    p.variance_grad[m * dim + d] /= s;
                }
            }
        }
        p
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_node_is_order_invariant_and_deduplicates() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 1.3, (i * i) as f64 * 0.1]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].sin() * x[1]).collect();
        let scaling = InputScaling::from_ranges(&[(0.0, 10.0), (0.0, 5.0)]);
        let opts = FitOptions::with_seed(5);
        let a = ScaledNode::fit(&xs, &ys, scaling.clone(), &opts).unwrap();
        let mut xr = xs.clone();
        let mut yr = ys.clone();
        xr.reverse();
        yr.reverse();
        xr.push(xs[3].clone());
        yr.push(ys[3]);
        let b = ScaledNode::fit(&xr, &yr, scaling, &opts).unwrap();
        assert_eq!(b.posterior().len(), 8);
        for probe in [[0.5, 0.2], [4.0, 3.3], [9.0, 0.0]] {
            assert_eq!(a.predict(&probe), b.predict(&probe));
        }
    }

    #[test]
    fn raw_gradients_account_for_scaling() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 2.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] / 3.0).cos()).collect();
        let node =
            ScaledNode::fit(&xs, &ys, InputScaling::from_ranges(&[(0.0, 10.0)]), &FitOptions::default()).unwrap();
        let z = 3.3;
        let p = node.predict_batch_flat(&[z], 1, true);
        let eps = 1e-6;
        let fd_mean = (node.predict(&[z + eps]).0 - node.predict(&[z - eps]).0) / (2.0 * eps);
        let fd_var = (node.predict(&[z + eps]).1 - node.predict(&[z - eps]).1) / (2.0 * eps);
        assert!((fd_mean - p.mean_grad[0]).abs() < 1e-6);
        assert!((fd_var - p.variance_grad[0]).abs() < 1e-6);
    }
}

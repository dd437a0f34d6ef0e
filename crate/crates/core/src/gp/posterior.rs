//! Closed-form noiseless GP posterior for a single node.

use nalgebra::DMatrix;

use super::kernel::{matern52_grad_factor, matern52_profile, scaled_distance};
use super::{GpError, GpHyperparameters};
use crate::numerics::{cholesky_with_jitter, LowerTriangularFactor};

/// Posterior state of one node: hyperparameters, training data, the Cholesky
/// factor of the prior kernel matrix and `alpha = K⁻¹ (y − m)`.
#[derive(Debug, Clone)]
pub struct NodePosterior {
    hyper: GpHyperparameters,
    dim: usize,
    /// Row-major `n × dim`.
    inputs: Vec<f64>,
    targets: Vec<f64>,
    chol: Option<LowerTriangularFactor>,
    alpha: Vec<f64>,
    /// Explicit `L⁻¹`, used by the batched path.
    linv: DMatrix<f64>,
    /// Training inputs as a `dim × n` matrix.
    inputs_t: DMatrix<f64>,
}

/// Mean, variance and their gradients at a batch of query points.
#[derive(Debug, Clone, Default)]
pub struct BatchPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `count × dim`, row-major; empty unless gradients were requested.
    pub mean_grad: Vec<f64>,
    pub variance_grad: Vec<f64>,
}

impl NodePosterior {
    /// Posterior with no observations: the prior.
    pub fn prior(hyper: GpHyperparameters) -> Self {
        let dim = hyper.length_scales.len();
        Self {
            hyper,
            dim,
            inputs: Vec::new(),
            targets: Vec::new(),
            chol: None,
            alpha: Vec::new(),
            linv: DMatrix::zeros(0, 0),
            inputs_t: DMatrix::zeros(dim, 0),
        }
    }

    /// Conditions the prior on `(inputs, targets)`; `inputs` has one row per
    /// observation.
    pub fn new(hyper: GpHyperparameters, inputs: &[Vec<f64>], targets: &[f64]) -> Result<Self, GpError> {
        hyper.validate()?;
        let dim = hyper.length_scales.len();
        if inputs.len() != targets.len() {
            return Err(GpError::Dimension(format!("{} input rows but {} targets", inputs.len(), targets.len())));
        }
        if let Some(row) = inputs.iter().find(|r| r.len() != dim) {
            return Err(GpError::Dimension(format!("input row has {} entries, kernel expects {dim}", row.len())));
        }
        let n = inputs.len();
        if n == 0 {
            return Ok(Self::prior(hyper));
        }
        let k = kernel_matrix(&hyper, inputs);
        let chol = cholesky_with_jitter(&k)?;
        let resid: Vec<f64> = targets.iter().map(|y| y - hyper.constant_mean).collect();
        let alpha = chol.solve(&resid);
        let linv = chol.inverse_factor();
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let inputs_t = DMatrix::from_column_slice(dim, n, &flat);
        Ok(Self { hyper, dim, inputs: flat, targets: targets.to_vec(), chol: Some(chol), alpha, linv, inputs_t })
    }

    pub fn hyper(&self) -> &GpHyperparameters {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn train_input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn chol(&self) -> Option<&LowerTriangularFactor> {
        self.chol.as_ref()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn cross_kernel(&self, z: &[f64]) -> Vec<f64> {
        let ls = &self.hyper.length_scales;
        (0..self.len())
            .map(|i| self.hyper.output_scale * matern52_profile(scaled_distance(z, self.train_input(i), ls)))
            .collect()
    }

    /// Posterior mean and variance at `z` (variance clamped at zero).
    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (self.hyper.constant_mean, self.hyper.output_scale);
        };
        let mut kx = self.cross_kernel(z);
        let mean = self.hyper.constant_mean + kx.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        chol.solve_lower_in_place(&mut kx);
        let var = self.hyper.output_scale - kx.iter().map(|v| v * v).sum::<f64>();
        (mean, var.max(0.0))
    }

    /// Posterior mean, variance and their gradients with respect to `z`.
    pub fn predict_with_gradient(&self, z: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let p = self.predict_batch(&[z.to_vec()], true);
        (p.mean[0], p.variance[0], p.mean_grad, p.variance_grad)
    }

    /// Joint posterior covariance over a set of points (before clamping).
    pub fn covariance(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let m = points.len();
        let mut cov = DMatrix::from_fn(m, m, |a, b| {
            self.hyper.output_scale
                * matern52_profile(scaled_distance(&points[a], &points[b], &self.hyper.length_scales))
        });
        if let Some(chol) = &self.chol {
            let vs: Vec<Vec<f64>> = points
                .iter()
                .map(|p| {
                    let mut v = self.cross_kernel(p);
                    chol.solve_lower_in_place(&mut v);
                    v
                })
                .collect();
            for a in 0..m {
                for b in 0..m {
                    cov[(a, b)] -= vs[a].iter().zip(&vs[b]).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        cov
    }

    /// Batched prediction at `points` (each of length `dim`), optionally with
    /// gradients. Uses dense matrix products against the explicit inverse
    /// factor.
    pub fn predict_batch(&self, points: &[Vec<f64>], with_grad: bool) -> BatchPrediction {
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        self.predict_batch_flat(&flat, points.len(), with_grad)
    }

    /// As [`predict_batch`](Self::predict_batch) with points given row-major.
    pub fn predict_batch_flat(&self, points: &[f64], count: usize, with_grad: bool) -> BatchPrediction {
        let dim = self.dim;
        let n = self.len();
        let s = self.hyper.output_scale;
        let ls = &self.hyper.length_scales;
        if n == 0 {
            return BatchPrediction {
                mean: vec![self.hyper.constant_mean; count],
                variance: vec![s; count],
                mean_grad: if with_grad { vec![0.0; count * dim] } else { Vec::new() },
                variance_grad: if with_grad { vec![0.0; count * dim] } else { Vec::new() },
            };
        }
        // kx[i, m] = k(z_i, q_m); cf[i, m] = gradient factor
        let mut kx = DMatrix::<f64>::zeros(n, count);
        let mut cf = if with_grad { DMatrix::<f64>::zeros(n, count) } else { DMatrix::zeros(0, 0) };
        for m in 0..count {
            let q = &points[m * dim..(m + 1) * dim];
            for i in 0..n {
                let r = scaled_distance(q, self.train_input(i), ls);
                kx[(i, m)] = s * matern52_profile(r);
                if with_grad {
                    cf[(i, m)] = s * matern52_grad_factor(r);
                }
            }
        }
        let mean: Vec<f64> = (0..count)
            .map(|m| self.hyper.constant_mean + kx.column(m).iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let v = &self.linv * &kx;
        let variance: Vec<f64> =
            (0..count).map(|m| (s - v.column(m).iter().map(|x| x * x).sum::<f64>()).max(0.0)).collect();
        if !with_grad {
            return BatchPrediction { mean, variance, ..Default::default() };
        }
        // w = K⁻¹ k(·, q)
        let w = self.linv.transpose() * &v;
        let mut a = cf.clone();
        let mut b = cf;
        for m in 0..count {
            for i in 0..n {
                a[(i, m)] *= self.alpha[i];
                b[(i, m)] *= -2.0 * w[(i, m)];
            }
        }
        let za = &self.inputs_t * &a;
        let zb = &self.inputs_t * &b;
        let mut mean_grad = vec![0.0; count * dim];
        let mut variance_grad = vec![0.0; count * dim];
        for m in 0..count {
            let sa: f64 = a.column(m).sum();
            let sb: f64 = b.column(m).sum();
            let q = &points[m * dim..(m + 1) * dim];
            for d in 0..dim {
                let l2 = ls[d] * ls[d];
                mean_grad[m * dim + d] = (q[d] * sa - za[(d, m)]) / l2;
                variance_grad[m * dim + d] = (q[d] * sb - zb[(d, m)]) / l2;
            }
        }
        BatchPrediction { mean, variance, mean_grad, variance_grad }
    }
}

/// Mean and variance of `node` at `z`.
pub fn posterior(node: &NodePosterior, z: &[f64]) -> (f64, f64) {
    node.predict(z)
}

pub(crate) fn kernel_matrix(hyper: &GpHyperparameters, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    let s = hyper.output_scale;
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = s;
        for j in 0..i {
            let v = s * matern52_profile(scaled_distance(&inputs[i], &inputs[j], &hyper.length_scales));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hyper(dim: usize) -> GpHyperparameters {
        GpHyperparameters { constant_mean: 0.4, output_scale: 1.3, length_scales: vec![0.35; dim] }
    }

    fn dataset(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let ys = xs.iter().map(|x| (5.0 * x[0]).sin() + x.iter().sum::<f64>()).collect();
        (xs, ys)
    }

    #[test]
    fn prior_recovery() {
        let p = NodePosterior::prior(hyper(2));
        assert_eq!(p.predict(&[0.2, 0.9]), (0.4, 1.3));
        let p = NodePosterior::new(hyper(2), &[], &[]).unwrap();
        assert!(p.is_empty());
        assert_eq!(posterior(&p, &[0.0, 0.0]), (0.4, 1.3));
    }

    #[test]
    fn interpolates_training_data() {
        let (xs, ys) = dataset(12, 2, 1);
        let p = NodePosterior::new(hyper(2), &xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (m, v) = p.predict(x);
            assert!((m - y).abs() <= 1e-6);
            assert!(v <= 1e-6 * 1.3);
        }
    }

    #[test]
    fn batch_matches_single_point_path() {
        let (xs, ys) = dataset(15, 3, 2);
        let p = NodePosterior::new(hyper(3), &xs, &ys).unwrap();
        let (qs, _) = dataset(7, 3, 3);
        let batch = p.predict_batch(&qs, true);
        for (m, q) in qs.iter().enumerate() {
            let (mu, var) = p.predict(q);
            assert!((batch.mean[m] - mu).abs() < 1e-10);
            assert!((batch.variance[m] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (xs, ys) = dataset(10, 2, 4);
        let p = NodePosterior::new(hyper(2), &xs, &ys).unwrap();
        let (qs, _) = dataset(6, 2, 5);
        for q in qs {
            let (_, _, gm, gv) = p.predict_with_gradient(&q);
            for d in 0..2 {
                let eps = 1e-6;
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[d] += eps;
                qm[d] -= eps;
                let (mp, vp) = p.predict(&qp);
                let (mm, vm) = p.predict(&qm);
                assert!(((mp - mm) / (2.0 * eps) - gm[d]).abs() < 1e-6);
                assert!(((vp - vm) / (2.0 * eps) - gv[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn variance_shrinks_with_more_data() {
        let (xs, ys) = dataset(20, 2, 6);
        let (probes, _) = dataset(50, 2, 7);
        let small = NodePosterior::new(hyper(2), &xs[..10], &ys[..10]).unwrap();
        let big = NodePosterior::new(hyper(2), &xs[..11], &ys[..11]).unwrap();
        for q in &probes {
            assert!(big.predict(q).1 <= small.predict(q).1 + 1e-8);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let r = NodePosterior::new(hyper(2), &[vec![0.0]], &[1.0]);
        assert!(matches!(r, Err(GpError::Dimension(_))));
    }
}

//! MAP estimation of the constant mean, output scale and ARD length scales.
//!
//! Targets are standardized before fitting; the search runs over
//! `(ln ℓ_1..ln ℓ_d, ln s, c)` in standardized units with Gamma priors on the
//! length scales and the output scale, and the result is mapped back to the
//! original target units.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{matern52_profile, scaled_distance};
use super::{GpError, GpHyperparameters};
use crate::numerics::{
    bounded_minimize, cholesky_with_jitter, gamma_log_density, gamma_log_density_dlog, BoxBounds, MinimizeOptions,
};

pub const LENGTH_SCALE_PRIOR: (f64, f64) = (3.0, 6.0);
pub const OUTPUT_SCALE_PRIOR: (f64, f64) = (2.0, 0.15);

const LOG_LENGTH_BOUNDS: (f64, f64) = (-5.298_317_366_548_036, 2.995_732_273_553_991); // ln 0.005, ln 20
const LOG_SCALE_BOUNDS: (f64, f64) = (-6.907_755_278_982_137, 6.907_755_278_982_137); // ln 1e-3, ln 1e3
const MEAN_BOUNDS: (f64, f64) = (-10.0, 10.0);

/// Output scale used when all targets coincide.
pub const DEGENERATE_OUTPUT_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    /// Number of optimizer starts: the prior mode plus `starts − 1` random draws.
    pub starts: usize,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { seed: 0, starts: 8, max_iters: 100 }
    }
}

impl FitOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Log marginal likelihood of `targets` under a GP with `hyper`.
pub fn log_marginal_likelihood(
    hyper: &GpHyperparameters,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<f64, GpError> {
    let n = inputs.len();
    let k = super::posterior::kernel_matrix(hyper, inputs);
    let chol = cholesky_with_jitter(&k)?;
    let resid: Vec<f64> = targets.iter().map(|y| y - hyper.constant_mean).collect();
    let alpha = chol.solve(&resid);
    let quad: f64 = resid.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    Ok(-0.5 * quad - 0.5 * chol.log_determinant() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Log prior density of the hyperparameters, in the standardized units used
/// for fitting.
pub fn log_prior(hyper: &GpHyperparameters) -> f64 {
    let (la, lb) = LENGTH_SCALE_PRIOR;
    let (sa, sb) = OUTPUT_SCALE_PRIOR;
    hyper.length_scales.iter().map(|l| gamma_log_density(*l, la, lb).unwrap_or(f64::NEG_INFINITY)).sum::<f64>()
        + gamma_log_density(hyper.output_scale, sa, sb).unwrap_or(f64::NEG_INFINITY)
}

struct Standardized {
    mean: f64,
    std: f64,
    targets: Vec<f64>,
}

fn standardize(targets: &[f64]) -> Option<Standardized> {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let range =
        targets.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - targets.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if !(std > 0.0) || range <= 1e-12 * (1.0 + mean.abs()) {
        return None;
    }
    Some(Standardized { mean, std, targets: targets.iter().map(|y| (y - mean) / std).collect() })
}

/// Negative log posterior and its gradient at `theta = (ln ℓ, ln s, c)`.
fn negative_log_posterior(theta: &[f64], inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
    let d = theta.len() - 2;
    let n = inputs.len();
    let ls: Vec<f64> = theta[..d].iter().map(|v| v.exp()).collect();
    let s = theta[d].exp();
    let c = theta[d + 1];

    // distances and profiles
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut grad_profile = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = s;
        for j in 0..i {
            let r = scaled_distance(&inputs[i], &inputs[j], &ls);
            let v = s * matern52_profile(r);
            k[(i, j)] = v;
            k[(j, i)] = v;
            // ∂k/∂ln ℓ_d = g · (Δ_d/ℓ_d)² with g = (5/3) s (1 + √5 r) e^{−√5 r}
            let sr = 5f64.sqrt() * r;
            let g = (5.0 / 3.0) * s * (1.0 + sr) * (-sr).exp();
            grad_profile[(i, j)] = g;
            grad_profile[(j, i)] = g;
        }
    }
    let chol = match cholesky_with_jitter(&k) {
        Ok(c) => c,
        Err(_) => return (f64::INFINITY, vec![0.0; theta.len()]),
    };
    let resid: Vec<f64> = targets.iter().map(|y| y - c).collect();
    let alpha = chol.solve(&resid);
    let quad: f64 = resid.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let nll = 0.5 * quad + 0.5 * chol.log_determinant() + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let (la, lb) = LENGTH_SCALE_PRIOR;
    let (sa, sb) = OUTPUT_SCALE_PRIOR;
    let mut value = nll;
    for l in &ls {
        value -= gamma_log_density(*l, la, lb).unwrap_or(f64::NEG_INFINITY);
    }
    value -= gamma_log_density(s, sa, sb).unwrap_or(f64::NEG_INFINITY);

    // (K⁻¹ − α αᵀ)
    let mut inner = chol.inverse();
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] -= alpha[i] * alpha[j];
        }
    }
    let mut grad = vec![0.0; theta.len()];
    for (dd, g) in grad.iter_mut().enumerate().take(d) {
        let l2 = ls[dd] * ls[dd];
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..i {
                let delta = inputs[i][dd] - inputs[j][dd];
                acc += inner[(i, j)] * grad_profile[(i, j)] * delta * delta / l2;
            }
        }
        // symmetric off-diagonal pairs counted once above, hence no 0.5
        *g = acc - gamma_log_density_dlog(ls[dd], la, lb);
    }
    let mut acc_s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dk = if i == j { k[(i, i)] + chol.jitter_used() } else { k[(i, j)] };
            acc_s += inner[(i, j)] * dk;
        }
    }
    grad[d] = 0.5 * acc_s - gamma_log_density_dlog(s, sa, sb);
    grad[d + 1] = -alpha.iter().sum::<f64>();
    (value, grad)
}

fn has_duplicate_rows(inputs: &[Vec<f64>]) -> bool {
    for i in 0..inputs.len() {
        for j in 0..i {
            if inputs[i].iter().zip(&inputs[j]).all(|(a, b)| (a - b).abs() <= 1e-10) {
                return true;
            }
        }
    }
    false
}

/// MAP hyperparameters for `(inputs, targets)` with default options.
pub fn fit_map(inputs: &[Vec<f64>], targets: &[f64]) -> Result<GpHyperparameters, GpError> {
    fit_map_with(inputs, targets, &FitOptions::default())
}

/// MAP hyperparameters via multi-start bounded minimization in
/// log-parameter space.
pub fn fit_map_with(inputs: &[Vec<f64>], targets: &[f64], opts: &FitOptions) -> Result<GpHyperparameters, GpError> {
    let n = inputs.len();
    if n != targets.len() {
        return Err(GpError::Dimension(format!("{n} input rows but {} targets", targets.len())));
    }
    if n < 2 {
        return Err(GpError::InsufficientData { n });
    }
    let dim = inputs[0].len();
    if inputs.iter().any(|r| r.len() != dim) {
        return Err(GpError::Dimension("ragged input rows".into()));
    }
    if has_duplicate_rows(inputs) {
        return Err(GpError::DuplicateInputs);
    }
    let Some(st) = standardize(targets) else {
        return Err(GpError::DegenerateData {
            fallback: GpHyperparameters {
                constant_mean: targets[0],
                output_scale: DEGENERATE_OUTPUT_SCALE,
                length_scales: vec![1.0; dim],
            },
        });
    };

    let mut lower = vec![LOG_LENGTH_BOUNDS.0; dim];
    let mut upper = vec![LOG_LENGTH_BOUNDS.1; dim];
    lower.extend([LOG_SCALE_BOUNDS.0, MEAN_BOUNDS.0]);
    upper.extend([LOG_SCALE_BOUNDS.1, MEAN_BOUNDS.1]);
    let bounds = BoxBounds::new(lower, upper).expect("static hyperparameter bounds");

    let (la, lb) = LENGTH_SCALE_PRIOR;
    let (sa, sb) = OUTPUT_SCALE_PRIOR;
    let mut starts = Vec::with_capacity(opts.starts.max(1));
    let mut mode = vec![((la - 1.0) / lb).ln(); dim];
    mode.extend([((sa - 1.0) / sb).ln(), 0.0]);
    starts.push(mode);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 1..opts.starts.max(1) {
        let mut t: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05f64.ln()..2.0f64.ln())).collect();
        t.push(rng.random_range(0.1f64.ln()..20.0f64.ln()));
        t.push(rng.random_range(-1.0..1.0));
        starts.push(t);
    }

    let min_opts = MinimizeOptions { max_iters: opts.max_iters, pg_tol: 1e-6, f_tol: 1e-10, ..Default::default() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        let objective = |t: &[f64]| negative_log_posterior(t, inputs, &st.targets);
        let Ok(res) = bounded_minimize(objective, start, &bounds, None, &min_opts) else {
            continue;
        };
        if best.as_ref().is_none_or(|(v, _)| res.value < *v) {
            best = Some((res.value, res.argmin));
        }
    }
    let Some((_, theta)) = best else {
        return Err(GpError::FitFailed);
    };
    Ok(GpHyperparameters {
        constant_mean: st.mean + st.std * theta[dim + 1],
        output_scale: st.std * st.std * theta[dim].exp(),
        length_scales: theta[..dim].iter().map(|v| v.exp()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> =
            (0..n).map(|i| vec![i as f64 / (n - 1) as f64, ((i * 7) % n) as f64 / n as f64]).collect();
        let ys = xs.iter().map(|x| (6.0 * x[0]).sin() + 0.5 * x[1]).collect();
        (xs, ys)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (xs, ys) = grid_data(9);
        let st = standardize(&ys).unwrap();
        let theta = [(-1.2f64), 0.3, 0.4, 0.2];
        let (_, g) = negative_log_posterior(&theta, &xs, &st.targets);
        for i in 0..theta.len() {
            let eps = 1e-6;
            let mut tp = theta;
            let mut tm = theta;
            tp[i] += eps;
            tm[i] -= eps;
            let fd = (negative_log_posterior(&tp, &xs, &st.targets).0
                - negative_log_posterior(&tm, &xs, &st.targets).0)
                / (2.0 * eps);
            assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn constant_targets_fall_back() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        match fit_map(&xs, &[0.0; 5]) {
            Err(GpError::DegenerateData { fallback }) => {
                assert_eq!(fallback.constant_mean, 0.0);
                assert_eq!(fallback.output_scale, DEGENERATE_OUTPUT_SCALE);
                assert_eq!(fallback.length_scales, vec![1.0]);
            }
            other => panic!("expected degenerate fallback, got {other:?}"),
        }
    }

    #[test]
    fn rejects_small_and_duplicated_data() {
        assert!(matches!(fit_map(&[vec![0.0]], &[1.0]), Err(GpError::InsufficientData { n: 1 })));
        let xs = vec![vec![0.1], vec![0.1], vec![0.5]];
        assert!(matches!(fit_map(&xs, &[1.0, 1.0, 2.0]), Err(GpError::DuplicateInputs)));
    }

    #[test]
    fn beats_random_hyperparameters() {
        let (xs, ys) = grid_data(15);
        let fitted = fit_map(&xs, &ys).unwrap();
        let st = standardize(&ys).unwrap();
        let to_std = |h: &GpHyperparameters| GpHyperparameters {
            constant_mean: (h.constant_mean - st.mean) / st.std,
            output_scale: h.output_scale / (st.std * st.std),
            length_scales: h.length_scales.clone(),
        };
        let score = |h: &GpHyperparameters| {
            let hs = to_std(h);
            log_marginal_likelihood(&hs, &xs, &st.targets).unwrap() + log_prior(&hs)
        };
        let best = score(&fitted);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let h = GpHyperparameters {
                constant_mean: st.mean + st.std * rng.random_range(-1.0..1.0),
                output_scale: st.std * st.std * rng.random_range(0.1..20.0),
                length_scales: (0..2).map(|_| rng.random_range(0.05..2.0)).collect(),
            };
            assert!(best >= score(&h), "fitted {best} vs random {}", score(&h));
        }
    }
}

//! Projected limited-memory BFGS for smooth objectives over a box, optionally
//! intersected with a budget constraint `Σx ≤ cap`.
//!
//! Each trial point is the Euclidean projection of `x + α d` onto the feasible
//! set; the quasi-Newton direction is computed on the free variables only and
//! accepted with an Armijo test along the projected path.

use std::collections::VecDeque;

use super::NumericsError;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, NumericsError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(NumericsError::Dimension(format!(
                "bounds need matching non-empty lower/upper, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (d, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(NumericsError::Domain(format!(
                    "bounds for coordinate {d} must satisfy lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self, NumericsError> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Maps a point of the unit cube onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(d, v)| self.lower[d] + v * self.width(d)).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(d, v)| (v - self.lower[d]) / self.width(d)).collect()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[d], self.upper[d]);
        }
    }
}

/// Budget constraint `Σ_d x_d ≤ cap` (together with the box it forms the
/// feasible set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexConstraint {
    cap: f64,
}

impl SimplexConstraint {
    pub fn new(cap: f64) -> Result<Self, NumericsError> {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(NumericsError::Domain(format!("simplex cap must be positive, got {cap}")));
        }
        Ok(Self { cap })
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn is_satisfied(&self, x: &[f64], tol: f64) -> bool {
        x.iter().sum::<f64>() <= self.cap + tol
    }
}

/// Euclidean projection onto `{lower ≤ x ≤ upper, Σx ≤ cap}`.
pub fn project(x: &[f64], bounds: &BoxBounds, constraint: Option<&SimplexConstraint>) -> Vec<f64> {
    let mut out = x.to_vec();
    bounds.clip(&mut out);
    let Some(c) = constraint else { return out };
    if out.iter().sum::<f64>() <= c.cap {
        return out;
    }
    let shifted = |tau: f64| -> f64 {
        x.iter().enumerate().map(|(d, v)| (v - tau).clamp(bounds.lower[d], bounds.upper[d])).sum()
    };
    let mut lo = 0.0;
    let mut hi = x.iter().zip(&bounds.lower).map(|(v, l)| v - l).fold(0.0_f64, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shifted(mid) > c.cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    for (d, v) in out.iter_mut().enumerate() {
        *v = (x[d] - hi).clamp(bounds.lower[d], bounds.upper[d]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the projected-gradient ∞-norm falls below this.
    pub pg_tol: f64,
    /// Stop when the relative objective decrease falls below this.
    pub f_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { max_iters: 200, memory: 10, pg_tol: 1e-8, f_tol: 1e-12 }
    }
}

impl MinimizeOptions {
    pub fn with_max_iters(max_iters: usize) -> Self {
        Self { max_iters, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Minimizes `objective` (returning value and gradient) from a feasible
/// `start`. The returned point is feasible and never worse than `start`.
pub fn bounded_minimize<F>(
    mut objective: F,
    start: &[f64],
    bounds: &BoxBounds,
    constraint: Option<&SimplexConstraint>,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult, NumericsError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = bounds.dim();
    if start.len() != n {
        return Err(NumericsError::Dimension(format!("start has {} coordinates, bounds have {n}", start.len())));
    }
    let mut x = project(start, bounds, constraint);
    let (mut f, mut g) = objective(&x);
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFiniteObjective { at: x });
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if projected_gradient_norm(&x, &g, bounds, constraint) <= opts.pg_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let free = free_mask(&x, &g, bounds);
        let mut direction = two_loop(&g, &free, &memory);
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            memory.clear();
            direction = steepest(&g, &free);
            slope = dot(&g, &direction);
            if !(slope < 0.0) {
                // free gradient vanishes; only the constraint can still be active
                direction = g.iter().map(|v| -v).collect();
            }
        }

        let mut step = if memory.is_empty() {
            let gmax = direction.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if gmax > 0.0 {
                (1.0 / gmax).min(1.0) * bounds_scale(bounds)
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(a, d)| a + step * d).collect();
            let trial = project(&trial, bounds, constraint);
            let delta: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &delta);
            if delta.iter().all(|d| *d == 0.0) {
                break;
            }
            let (ft, gt) = objective(&trial);
            evaluations += 1;
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + ARMIJO_C1 * decrease.min(0.0) && ft <= f
            {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        let rel = (f - f_new) / f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if rel <= opts.f_tol {
            converged = true;
            break;
        }
    }

    Ok(MinimizeResult { argmin: x, value: f, iterations, evaluations, converged })
}

fn bounds_scale(bounds: &BoxBounds) -> f64 {
    (0..bounds.dim()).map(|d| bounds.width(d)).fold(0.0_f64, f64::max).min(1.0)
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &BoxBounds, constraint: Option<&SimplexConstraint>) -> f64 {
    let moved: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    let p = project(&moved, bounds, constraint);
    p.iter().zip(x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

fn free_mask(x: &[f64], g: &[f64], bounds: &BoxBounds) -> Vec<bool> {
    (0..x.len())
        .map(|d| {
            let at_lower = x[d] <= bounds.lower[d] && g[d] > 0.0;
            let at_upper = x[d] >= bounds.upper[d] && g[d] < 0.0;
            !(at_lower || at_upper)
        })
        .collect()
}

fn steepest(g: &[f64], free: &[bool]) -> Vec<f64> {
    g.iter().zip(free).map(|(v, f)| if *f { -v } else { 0.0 }).collect()
}

fn two_loop(g: &[f64], free: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(a, f)| if *f { *a } else { 0.0 }).collect() };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let s = mask(s);
        let y = mask(y);
        let a = rho * dot(&s, &q);
        for (qi, yi) in q.iter_mut().zip(&y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        if gamma.is_finite() && gamma > 0.0 {
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let s = mask(s);
        let y = mask(y);
        let b = rho * dot(&y, &q);
        for (qi, si) in q.iter_mut().zip(&s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    mask(&q)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

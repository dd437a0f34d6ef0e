use super::GpHyperparameters;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Scaled distance `r = sqrt(Σ_d ((z_d − z'_d)/ℓ_d)²)`.
#[inline]
pub(crate) fn scaled_distance(z: &[f64], z2: &[f64], length_scales: &[f64]) -> f64 {
    z.iter()
        .zip(z2)
        .zip(length_scales)
        .map(|((a, b), l)| {
            let t = (a - b) / l;
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// Matérn-5/2 profile `(1 + √5 r + 5r²/3) e^{−√5 r}` for unit output scale.
#[inline]
pub(crate) fn matern52_profile(r: f64) -> f64 {
    let sr = SQRT5 * r;
    (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
}

/// `−(5/3)(1 + √5 r) e^{−√5 r}`: the kernel gradient with respect to `z` is
/// this factor times `output_scale · (z − z')/ℓ²` componentwise.
#[inline]
pub(crate) fn matern52_grad_factor(r: f64) -> f64 {
    let sr = SQRT5 * r;
    -(5.0 / 3.0) * (1.0 + sr) * (-sr).exp()
}

/// Matérn-5/2 ARD covariance between `z` and `z2`.
pub fn matern52_ard(z: &[f64], z2: &[f64], hyper: &GpHyperparameters) -> f64 {
    debug_assert_eq!(z.len(), hyper.length_scales.len());
    debug_assert_eq!(z2.len(), hyper.length_scales.len());
    hyper.output_scale * matern52_profile(scaled_distance(z, z2, &hyper.length_scales))
}

/// Gradient of [`matern52_ard`] with respect to its first argument.
pub fn matern52_ard_gradient(z: &[f64], z2: &[f64], hyper: &GpHyperparameters) -> Vec<f64> {
    let r = scaled_distance(z, z2, &hyper.length_scales);
    let c = hyper.output_scale * matern52_grad_factor(r);
    z.iter().zip(z2).zip(&hyper.length_scales).map(|((a, b), l)| c * (a - b) / (l * l)).collect()
}

use super::NumericsError;

/// Log density of Gamma(shape, rate) at `x`.
pub fn gamma_log_density(x: f64, shape: f64, rate: f64) -> Result<f64, NumericsError> {
    if !(x > 0.0) {
        return Err(NumericsError::Domain(format!("gamma density needs x > 0, got {x}")));
    }
    if !(shape > 0.0 && rate > 0.0) {
        return Err(NumericsError::Domain(format!(
            "gamma density needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    Ok(shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x)
}

/// Derivative of the log density with respect to `ln x`, i.e. `x · d/dx log p(x)`.
pub(crate) fn gamma_log_density_dlog(x: f64, shape: f64, rate: f64) -> f64 {
    (shape - 1.0) - rate * x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_at_one() {
        assert!((gamma_log_density(1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_quadrature_normalization() {
        // Unnormalized density integrated by composite Simpson; the normalizer
        // recovers the closed-form log density independently of lgamma.
        let (shape, rate) = (3.0, 1.5);
        let kernel = |x: f64| x.powf(shape - 1.0) * (-rate * x).exp();
        let (a, b, n) = (0.0, 60.0, 200_000);
        let h = (b - a) / n as f64;
        let mut s = kernel(a) + kernel(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * kernel(a + i as f64 * h);
        }
        let z = s * h / 3.0;
        let expected = (kernel(2.0) / z).ln();
        let got = gamma_log_density(2.0, shape, rate).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.abs(), "{got} vs {expected}");
        assert!((got + 1.090_457_495_115_561_5).abs() < 1e-13);
    }

    #[test]
    fn mode_on_grid() {
        let best = (1..=100_000)
            .map(|i| i as f64 * 1e-4)
            .max_by(|a, b| {
                gamma_log_density(*a, 3.0, 1.5).unwrap().total_cmp(&gamma_log_density(*b, 3.0, 1.5).unwrap())
            })
            .unwrap();
        assert!((best - 4.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(gamma_log_density(0.0, 1.0, 1.0).is_err());
        assert!(gamma_log_density(-1.0, 1.0, 1.0).is_err());
    }
}

//! Dense Cholesky factorization with a jitter ladder, plus the triangular
//! solves the GP code needs.

use nalgebra::DMatrix;

use super::NumericsError;

/// Jitter multipliers, relative to the mean diagonal, tried in order.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A + jitter_used·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangularFactor {
    entries: DMatrix<f64>,
    jitter_used: f64,
}

impl LowerTriangularFactor {
    pub fn dimension(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let l = &self.entries;
        let n = l.nrows();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= l[(i, j)] * b[j];
            }
            b[i] = s / l[(i, i)];
        }
    }

    /// Solves `Lᵀ y = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let l = &self.entries;
        let n = l.nrows();
        debug_assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= l[(j, i)] * b[j];
            }
            b[i] = s / l[(i, i)];
        }
    }

    /// Solves `(L Lᵀ) y = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        self.solve_lower_in_place(&mut y);
        self.solve_upper_in_place(&mut y);
        y
    }

    /// Explicit `L⁻¹`, lower triangular.
    pub fn inverse_factor(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let l = &self.entries;
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for c in 0..n {
            inv[(c, c)] = 1.0 / l[(c, c)];
            for i in c + 1..n {
                let mut s = 0.0;
                for j in c..i {
                    s -= l[(i, j)] * inv[(j, c)];
                }
                inv[(i, c)] = s / l[(i, i)];
            }
        }
        inv
    }

    /// `(L Lᵀ)⁻¹`, symmetric.
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = self.inverse_factor();
        linv.transpose() * &linv
    }

    /// `log det(L Lᵀ)`.
    pub fn log_determinant(&self) -> f64 {
        2.0 * self.entries.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.entries * self.entries.transpose()
    }
}

fn try_cholesky(a: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Factors `A + jitter·I`, escalating the jitter through [`JITTER_LADDER`]
/// (scaled by the mean diagonal of `A`) until the factorization succeeds.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<LowerTriangularFactor, NumericsError> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(NumericsError::Dimension(format!(
            "cholesky needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mean_diag = a.diagonal().iter().sum::<f64>() / n as f64;
    let scale = if mean_diag.is_finite() && mean_diag > 0.0 { mean_diag } else { 1.0 };
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        if let Some(entries) = try_cholesky(a, jitter) {
            return Ok(LowerTriangularFactor { entries, jitter_used: jitter });
        }
    }
    Err(NumericsError::NotFactorizable { dimension: n })
}

/// Convenience: `Aᵀ b` style dot product for plain slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

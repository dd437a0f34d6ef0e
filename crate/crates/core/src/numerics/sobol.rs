//! Owen-scrambled Sobol points and the standard-normal base sample matrix
//! built from them.
//!
//! Scrambling uses the hash-based nested uniform permutation of Laine and
//! Karras (with Burley's constants), keyed per dimension from the seed, so a
//! matrix is a pure function of `(rows, cols, seed)`.

use super::normal::inverse_normal_cdf;
use super::sobol_data::{MAX_DIMENSION, POLY, VINIT};
use super::{mix_seed, NumericsError};

const BITS: usize = 32;

/// Unscrambled Sobol sequence generator in base 2 (Gray-code order).
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dimension: usize) -> Result<Self, NumericsError> {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(NumericsError::Dimension(format!(
                "sobol dimension must be in 1..={MAX_DIMENSION}, got {dimension}"
            )));
        }
        let directions = (0..dimension).map(direction_numbers).collect();
        Ok(Self { directions })
    }

    pub fn dimension(&self) -> usize {
        self.directions.len()
    }

    /// First `count` points as raw 32-bit integers, row-major.
    pub fn integer_points(&self, count: usize) -> Vec<Vec<u32>> {
        let dim = self.dimension();
        let mut state = vec![0u32; dim];
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            if i > 0 {
                let c = (i - 1).trailing_ones() as usize;
                let c = c.min(BITS - 1);
                for (s, dirs) in state.iter_mut().zip(&self.directions) {
                    *s ^= dirs[c];
                }
            }
            out.push(state.clone());
        }
        out
    }
}

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut m = [0u32; BITS];
    if dim == 0 {
        m.iter_mut().for_each(|v| *v = 1);
    } else {
        let poly = POLY[dim];
        let degree = (31 - poly.leading_zeros()) as usize;
        for (i, slot) in m.iter_mut().enumerate().take(degree) {
            *slot = VINIT[dim][i];
        }
        for i in degree..BITS {
            let mut v = m[i - degree] ^ (m[i - degree] << degree);
            for k in 1..degree {
                if (poly >> (degree - k)) & 1 == 1 {
                    v ^= m[i - k] << k;
                }
            }
            m[i] = v;
        }
    }
    let mut v = [0u32; BITS];
    for i in 0..BITS {
        v[i] = m[i] << (BITS - 1 - i);
    }
    v
}

#[inline]
fn laine_karras_permutation(mut x: u32, seed: u32) -> u32 {
    x = x.wrapping_add(seed);
    x ^= x.wrapping_mul(0x6c50_b47c);
    x ^= x.wrapping_mul(0xb82f_1e52);
    x ^= x.wrapping_mul(0xc7af_e638);
    x ^= x.wrapping_mul(0x8d22_f6e6);
    x
}

/// Owen-style nested uniform scramble of a 32-bit binary fraction.
#[inline]
pub fn nested_uniform_scramble(x: u32, seed: u32) -> u32 {
    laine_karras_permutation(x.reverse_bits(), seed).reverse_bits()
}

/// First `count` points of a scrambled Sobol sequence in the open unit cube.
pub fn scrambled_sobol(count: usize, dimension: usize, seed: u64) -> Result<Vec<Vec<f64>>, NumericsError> {
    let sobol = Sobol::new(dimension)?;
    let keys: Vec<u32> = (0..dimension).map(|d| (mix_seed(seed, 0x5eed_0000 + d as u64) >> 32) as u32).collect();
    Ok(sobol
        .integer_points(count)
        .into_iter()
        .map(|p| {
            p.iter().zip(&keys).map(|(&v, &k)| (nested_uniform_scramble(v, k) as f64 + 0.5) / 4_294_967_296.0).collect()
        })
        .collect())
}

/// Fixed `rows × cols` matrix of standard-normal quasi-Monte Carlo draws.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BaseSampleMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let data = rows.into_iter().flatten().collect::<Vec<_>>();
        assert_eq!(data.len(), n * cols, "ragged base sample rows");
        Self { rows: n, cols, data }
    }

    /// Single row, e.g. one explicit `Z` vector.
    pub fn single(row: &[f64]) -> Self {
        Self { rows: 1, cols: row.len(), data: row.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.data[m * self.cols + k]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|m| self.get(m, k)).collect()
    }
}

/// Maps scrambled Sobol points through the normal quantile function.
pub fn sobol_normal_matrix(rows: usize, cols: usize, seed: u64) -> Result<BaseSampleMatrix, NumericsError> {
    if rows == 0 {
        return Err(NumericsError::Dimension("base sample matrix needs at least one row".into()));
    }
    let points = scrambled_sobol(rows, cols, seed)?;
    let mut out = Vec::with_capacity(rows);
    for p in points {
        let row = p.into_iter().map(inverse_normal_cdf).collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    Ok(BaseSampleMatrix::from_rows(out))
}

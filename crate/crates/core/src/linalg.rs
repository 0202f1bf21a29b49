//! Dense Cholesky factorization for the small symmetric systems of GP regression.

use crate::error::{Error, Result};

/// First jitter tried after a failed factorization, and the last one.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Row-major dense symmetric matrix of order `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds the matrix from its lower triangle, `entry(r, c)` with `c <= r`.
    pub fn from_lower(n: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for r in 0..n {
            for c in 0..=r {
                let v = entry(r, c);
                m.data[r * n + c] = v;
                m.data[c * n + r] = v;
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    /// Jitter that had to be added to the diagonal to factor the matrix.
    jitter: f64,
}

impl Cholesky {
    /// Plain factorization; fails on a non-positive pivot.
    pub fn factor(a: &SymMatrix) -> Option<Self> {
        let n = a.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let row_j = j * n;
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[row_j + k] * l[row_j + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[row_j + j] = djj;
            for i in (j + 1)..n {
                let row_i = i * n;
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[row_i + k] * l[row_j + k];
                }
                l[row_i + j] = s / djj;
            }
        }
        Some(Self { n, l, jitter: 0.0 })
    }

    /// Factorization with escalating diagonal jitter: `1e-10`, then ×10 up to `1e-4`.
    pub fn factor_with_jitter(a: &SymMatrix) -> Result<Self> {
        if let Some(c) = Self::factor(a) {
            return Ok(c);
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX * (1.0 + 1e-9) {
            let mut shifted = a.clone();
            shifted.add_diagonal(jitter);
            if let Some(mut c) = Self::factor(&shifted) {
                c.jitter = jitter;
                return Ok(c);
            }
            jitter *= 10.0;
        }
        Err(Error::NotPositiveDefinite { jitter: JITTER_MAX })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.l[r * self.n + c]
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_and_solves_small_system() {
        let a = SymMatrix::from_lower(3, |r, c| [[4.0, 0.0, 0.0], [2.0, 5.0, 0.0], [0.4, 1.0, 3.0]][r][c]);
        let ch = Cholesky::factor(&a).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        for r in 0..3 {
            let ax: f64 = (0..3).map(|c| a.get(r, c) * x[c]).sum();
            assert!((ax - b[r]).abs() < 1e-12);
        }
        let dense = nalgebra::DMatrix::from_row_slice(3, 3, a.as_slice());
        assert!((ch.log_det() - dense.determinant().ln()).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        // Rank-one matrix: two identical rows.
        let a = SymMatrix::from_lower(2, |_, _| 1.0);
        assert!(Cholesky::factor(&a).is_none());
        let ch = Cholesky::factor_with_jitter(&a).unwrap();
        assert!(ch.jitter() >= JITTER_START && ch.jitter() <= JITTER_MAX);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = SymMatrix::from_lower(2, |r, c| if r == c { 1.0 } else { 2.0 });
        assert!(matches!(
            Cholesky::factor_with_jitter(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}

//! Symmetric matrix helpers: eigen-based (pseudo-)inversion with a relative
//! pivot tolerance, condition numbers and block selection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues with `|λ| <= PIVOT_RTOL * max|λ|` are treated as exact zeros.
pub const PIVOT_RTOL: f64 = 1e-14;

/// Eigen decomposition of a symmetric matrix, split into a regular part and
/// a numerical null space.
#[derive(Debug, Clone)]
pub struct SymFactor {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub tol: f64,
}

impl SymFactor {
    pub fn new(m: &DMatrix<f64>, rtol: f64) -> Self {
        let eig = SymmetricEigen::new(m.clone());
        let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            tol: rtol * scale,
        }
    }

    fn is_null(&self, i: usize) -> bool {
        self.eigenvalues[i].abs() <= self.tol
    }

    pub fn rank(&self) -> usize {
        (0..self.eigenvalues.len()).filter(|&i| !self.is_null(i)).count()
    }

    /// `max|λ| / min|λ|`; infinite when some eigenvalue is exactly zero.
    pub fn condition_number(&self) -> f64 {
        let (lo, hi) = self
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if hi == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Unit vectors spanning the numerical null space.
    pub fn null_space(&self) -> Vec<DVector<f64>> {
        (0..self.eigenvalues.len())
            .filter(|&i| self.is_null(i))
            .map(|i| self.eigenvectors.column(i).into_owned())
            .collect()
    }

    /// Moore-Penrose inverse on the regular part; equals the inverse at full rank.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            if self.is_null(i) {
                continue;
            }
            let v = self.eigenvectors.column(i);
            out += (v * v.transpose()) / self.eigenvalues[i];
        }
        out
    }

    /// Coordinates whose unit vector is (numerically) orthogonal to the null space.
    pub fn identified_coordinates(&self) -> Vec<bool> {
        let null = self.null_space();
        (0..self.eigenvalues.len())
            .map(|i| null.iter().all(|v| v[i].abs() < 1e-6))
            .collect()
    }
}

pub fn select_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).iter().all(|v| v.abs() <= tol)
}

//! Small dense linear-algebra helpers shared by the estimator, detector and
//! network-design code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative diagonal loading applied once when a factorization fails.
pub const JITTER_REL: f64 = 1e-10;

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// If the plain factorization fails, `JITTER_REL * mean(diag)` is added to the
/// diagonal and the factorization is retried exactly once.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} is not square",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(format!("{what}: non-finite entries")));
        }
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self { chol });
        }
        let n = a.nrows();
        let mean_diag = if n == 0 { 0.0 } else { a.diagonal().sum() / n as f64 };
        let mut loaded = a.clone();
        for i in 0..n {
            loaded[(i, i)] += JITTER_REL * mean_diag.abs();
        }
        Cholesky::new(loaded)
            .map(|chol| Self { chol })
            .ok_or_else(|| Error::Singular(format!("{what}: factorization failed after jitter")))
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Lower-triangular factor `L` with `A = L L^T`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Solves `L w = b` only, so that `b^T A^{-1} b = ‖w‖²`.
    pub fn half_solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut w = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        w
    }
}

/// Solves `A X = B` for symmetric positive-definite `A` under the jitter policy.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(SpdFactor::new(a, what)?.solve(b))
}

/// Symmetrizes in place: `A <- (A + A^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let mut s = a.clone();
    symmetrize(&mut s);
    s.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

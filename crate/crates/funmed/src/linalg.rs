//! Small bridge from `ndarray` matrices to `nalgebra` factorizations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2};

pub(crate) fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

pub(crate) struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    /// Jitter added to the diagonal before the factorization succeeded.
    pub jitter: f64,
}

impl SpdSolver {
    /// Cholesky factorization with an escalating ridge-jitter fallback:
    /// starts at 1e-10 on the diagonal and multiplies by 100 until the
    /// factorization succeeds or the jitter exceeds 1e-2.
    pub fn new(a: &Array2<f64>) -> Option<Self> {
        let base = to_na(a);
        if let Some(chol) = base.clone().cholesky() {
            return Some(Self { chol, jitter: 0.0 });
        }
        let mut jitter = 1e-10;
        while jitter <= 1e-2 {
            let mut jittered = base.clone();
            for i in 0..jittered.nrows() {
                jittered[(i, i)] += jitter;
            }
            if let Some(chol) = jittered.cholesky() {
                return Some(Self { chol, jitter });
            }
            jitter *= 100.0;
        }
        None
    }

    pub fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let rhs = DVector::from_iterator(b.len(), b.iter().copied());
        let sol = self.chol.solve(&rhs);
        Array1::from_iter(sol.iter().copied())
    }

    pub fn inverse(&self) -> Array2<f64> {
        from_na(&self.chol.inverse())
    }

    /// `trace(A⁻¹ M)` without forming the full inverse product.
    pub fn trace_solve(&self, m: &Array2<f64>) -> f64 {
        let sol = self.chol.solve(&to_na(m));
        sol.diagonal().sum()
    }
}

//! Dense linear algebra and optimization kernels.
//!
//! Everything here is small and dense (tens of variables, at most a few
//! thousand rows), so the routines favour exactness of active sets and
//! ranks over speed.

mod dual;
mod linalg;
mod qp;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use dual::solve_dual_qp;
pub use linalg::{
    condition_number, numeric_rank, numeric_rank_with, rel_diff, rel_diff_vec, solve_underdetermined, svd,
    symmetric_inverse, SvdResult, UnderdeterminedSolution,
};
pub use qp::{solve_qp, QpSolution};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold on singular values below which a direction is
/// treated as numerically null.
pub const RANK_EPS: f64 = 1e-10;

/// Constraint `i` counts as active when `|G z - e|_i <= ACTIVE_TOL * (1 + |e_i|)`.
pub const ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("solver hit the iteration limit ({0})")]
    MaxIterations(usize),
    #[error("singular value decomposition did not converge")]
    ConvergenceFailure,
    #[error("non-finite input")]
    NonFinite,
}

pub(crate) fn check_qp_shapes(h: &Matrix, g: &Matrix, f: &Vector, e: &Vector) -> Result<(), NumericsError> {
    let l = h.nrows();
    if h.ncols() != l || g.ncols() != l || f.len() != l || e.len() != g.nrows() {
        return Err(NumericsError::ShapeMismatch(format!(
            "H {}x{}, G {}x{}, f {}, e {}",
            h.nrows(),
            h.ncols(),
            g.nrows(),
            g.ncols(),
            f.len(),
            e.len()
        )));
    }
    let finite = |s: &[f64]| s.iter().all(|x| x.is_finite());
    if !(finite(h.as_slice()) && finite(g.as_slice()) && finite(f.as_slice()) && finite(e.as_slice())) {
        return Err(NumericsError::NonFinite);
    }
    Ok(())
}

/// Cholesky factor of the symmetric part of `h`.
pub(crate) fn cholesky(h: &Matrix) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, NumericsError> {
    let sym = (h + h.transpose()) * 0.5;
    nalgebra::Cholesky::new(sym).ok_or(NumericsError::NotPositiveDefinite)
}

/// The dual data of a strictly convex QP: `G H^-1 G^T` and `G H^-1 f + e`.
pub fn dual_data(h: &Matrix, g: &Matrix, f: &Vector, e: &Vector) -> Result<(Matrix, Vector), NumericsError> {
    check_qp_shapes(h, g, f, e)?;
    let chol = cholesky(h)?;
    // W = L^-1 G^T, so G H^-1 G^T = W^T W.
    let w = chol
        .l()
        .solve_lower_triangular(&g.transpose())
        .ok_or(NumericsError::NotPositiveDefinite)?;
    let mut m = w.transpose() * &w;
    m = (&m + m.transpose()) * 0.5;
    let v = g * chol.solve(f) + e;
    Ok((m, v))
}

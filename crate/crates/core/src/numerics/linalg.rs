use super::{Matrix, NumericsError, Vector, RANK_EPS};

/// Thin SVD `M = U diag(sigma) V^T` with descending singular values.
///
/// For a square input `U` and `V` are square and orthogonal. Columns are
/// sign-normalised so that the largest-magnitude entry of every column of
/// `U` is positive (the matching column of `V` is flipped along with it).
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v: Matrix,
    pub numeric_rank: usize,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        &self.u * Matrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult, NumericsError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(m.nrows(), 0),
            singular_values: Vector::zeros(0),
            v: Matrix::zeros(m.ncols(), 0),
            numeric_rank: 0,
        });
    }
    let (u_raw, sv, v_raw) = if m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax() {
        symmetric_svd(m)
    } else {
        let dec = m
            .clone()
            .try_svd(true, true, f64::EPSILON, 10_000)
            .ok_or(NumericsError::ConvergenceFailure)?;
        let u = dec.u.ok_or(NumericsError::ConvergenceFailure)?;
        let v = dec.v_t.ok_or(NumericsError::ConvergenceFailure)?.transpose();
        let s = dec.singular_values;
        // nalgebra occasionally returns mismatched singular vectors for
        // rank-deficient input; the recomposition catches that.
        let err = (&u * Matrix::from_diagonal(&s) * v.transpose() - m).amax();
        if err <= 1e-10 * m.amax() {
            (u, s, v)
        } else {
            augmented_svd(m)
        }
    };
    Ok(sorted_and_signed(u_raw, sv, v_raw))
}

/// `M = Q diag(lambda) Q^T` gives `U = Q`, `sigma = |lambda|`, `V = Q sign(lambda)`.
fn symmetric_svd(m: &Matrix) -> (Matrix, Vector, Matrix) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut v = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < 0.0 {
            v.column_mut(j).neg_mut();
        }
    }
    (eig.eigenvectors, eig.eigenvalues.abs(), v)
}

/// Singular triplets from the symmetric eigenproblem of `[0 A; A^T 0]`,
/// whose positive eigenvalues are the nonzero singular values of `A`.
fn augmented_svd(a: &Matrix) -> (Matrix, Vector, Matrix) {
    let (r, c) = a.shape();
    let k = r.min(c);
    let mut b = Matrix::zeros(r + c, r + c);
    b.view_mut((0, r), (r, c)).copy_from(a);
    b.view_mut((r, 0), (c, r)).copy_from(&a.transpose());
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..r + c).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let tol = RANK_EPS * eig.eigenvalues.amax();
    let mut u_cols = Vec::new();
    let mut v_cols = Vec::new();
    let mut s = Vec::new();
    for &j in order.iter().take(k) {
        let lam = eig.eigenvalues[j];
        if lam <= tol {
            break;
        }
        let w = eig.eigenvectors.column(j);
        u_cols.push(w.rows(0, r).normalize());
        v_cols.push(w.rows(r, c).normalize());
        s.push(lam);
    }
    let u = complete_orthonormal(&u_cols, r, k);
    let v = complete_orthonormal(&v_cols, c, k);
    let mut sv = Vector::zeros(k);
    sv.rows_mut(0, s.len()).copy_from(&Vector::from_vec(s));
    (u, sv, v)
}

/// Extends orthonormal columns to `cols` orthonormal columns of length `n`.
fn complete_orthonormal(given: &[Vector], n: usize, cols: usize) -> Matrix {
    let mut basis: Vec<Vector> = given.to_vec();
    for i in 0..n {
        if basis.len() == cols {
            break;
        }
        let mut x = Vector::zeros(n);
        x[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                x -= b * b.dot(&x);
            }
        }
        let norm = x.norm();
        if norm > 1e-8 {
            basis.push(x / norm);
        }
    }
    Matrix::from_columns(&basis)
}

/// Descending order; largest-magnitude entry of every `U` column positive.
fn sorted_and_signed(u_raw: Matrix, sv: Vector, v_raw: Matrix) -> SvdResult {
    let k = sv.len().min(u_raw.ncols()).min(v_raw.ncols());
    let mut order: Vec<usize> = (0..sv.len()).collect();
    // Stable sort keeps the decomposition's order among exact ties.
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let k = k.min(u_raw.nrows().min(v_raw.nrows()));

    let mut u = Matrix::zeros(u_raw.nrows(), k);
    let mut v = Matrix::zeros(v_raw.nrows(), k);
    let mut s = Vector::zeros(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let mut ucol = u_raw.column(src).into_owned();
        let mut vcol = v_raw.column(src).into_owned();
        let pivot = ucol
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
        s[dst] = sv[src].max(0.0);
    }
    let numeric_rank = numeric_rank(&s);
    SvdResult {
        u,
        singular_values: s,
        v,
        numeric_rank,
    }
}

/// Number of singular values above `RANK_EPS * sigma_max`.
pub fn numeric_rank(singular_values: &Vector) -> usize {
    numeric_rank_with(singular_values, RANK_EPS)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numeric_rank_with(singular_values: &Vector, rel_tol: f64) -> usize {
    let smax = singular_values.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[derive(Debug, Clone)]
pub struct UnderdeterminedSolution {
    /// Minimum-norm least-squares solution.
    pub solution: Vector,
    pub rank: usize,
    pub nullspace_dim: usize,
}

/// Minimum-norm least-squares solution of `A x = b` via a truncated SVD.
/// Always succeeds on finite input; callers inspect `rank`.
pub fn solve_underdetermined(a: &Matrix, b: &Vector) -> Result<UnderdeterminedSolution, NumericsError> {
    if a.nrows() != b.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "A has {} rows, b has {} entries",
            a.nrows(),
            b.len()
        )));
    }
    let n = a.ncols();
    let dec = svd(a)?;
    let smax = dec.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let mut coeffs = dec.u.transpose() * b;
    for (c, &s) in coeffs.iter_mut().zip(dec.singular_values.iter()) {
        *c = if smax > 0.0 && s > RANK_EPS * smax { *c / s } else { 0.0 };
    }
    let solution = &dec.v * coeffs;
    Ok(UnderdeterminedSolution {
        solution,
        rank: dec.numeric_rank,
        nullspace_dim: n - dec.numeric_rank,
    })
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &Matrix) -> Result<f64, NumericsError> {
    let dec = svd(m)?;
    let k = dec.singular_values.len();
    if k == 0 {
        return Ok(f64::INFINITY);
    }
    let smin = dec.singular_values[k - 1];
    if smin == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(dec.singular_values[0] / smin)
}

/// Inverse of a symmetric positive definite matrix, symmetrised.
pub fn symmetric_inverse(m: &Matrix) -> Result<Matrix, NumericsError> {
    let chol = super::cholesky(m)?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `||a - b||_F / ||b||_F`, with `0` when both vanish.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        return 0.0;
    }
    diff / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_diff_vec(a: &Vector, b: &Vector) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        return 0.0;
    }
    diff / b.norm().max(f64::MIN_POSITIVE)
}

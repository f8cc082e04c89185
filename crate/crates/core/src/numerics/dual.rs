//! The explicit dual of a strictly convex QP,
//!
//! ```text
//! minimize_{lambda >= 0} 1/2 lambda^T (G H^-1 G^T) lambda + (G H^-1 f + e)^T lambda,
//! ```
//!
//! solved as the linear complementarity problem `w = M lambda + v`,
//! `w, lambda >= 0`, `w^T lambda = 0` with Lemke's complementary pivoting.
//! This shares no code with the primal active-set solver, which makes it a
//! usable cross-check on the multipliers that solver reports.

use super::{cholesky, dual_data, Matrix, NumericsError, Vector};

pub fn solve_dual_qp(h: &Matrix, g: &Matrix, f: &Vector, e: &Vector) -> Result<Vector, NumericsError> {
    let (m, v) = dual_data(h, g, f, e)?;
    let lambda = lemke(&m, &v)?;
    Ok(polish(&m, &v, lambda))
}

fn lemke(m: &Matrix, v: &Vector) -> Result<Vector, NumericsError> {
    let q = v.len();
    if v.iter().all(|&x| x >= 0.0) {
        return Ok(Vector::zeros(q));
    }
    // Columns: w (0..q), lambda (q..2q), artificial z0 (2q), rhs (2q+1).
    let z0 = 2 * q;
    let rhs = 2 * q + 1;
    let mut t = Matrix::zeros(q, 2 * q + 2);
    for i in 0..q {
        t[(i, i)] = 1.0;
        for j in 0..q {
            t[(i, q + j)] = -m[(i, j)];
        }
        t[(i, z0)] = -1.0;
        t[(i, rhs)] = v[i];
    }
    let mut basis: Vec<usize> = (0..q).collect();

    let mut row = 0;
    for i in 1..q {
        if v[i] < v[row] {
            row = i;
        }
    }
    pivot(&mut t, row, z0);
    let mut leaving = basis[row];
    basis[row] = z0;

    let scale = 1.0 + m.amax() + v.amax();
    let max_pivots = 50 * q + 100;
    for _ in 0..max_pivots {
        let entering = complement(leaving, q);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..q {
            let a = t[(i, entering)];
            if a > 1e-12 * scale {
                let ratio = t[(i, rhs)] / a;
                let better = match best {
                    None => true,
                    Some((bi, br)) => {
                        ratio < br - 1e-12 * scale
                            || ((ratio - br).abs() <= 1e-12 * scale && (basis[i] == z0 || (basis[bi] != z0 && i < bi)))
                    }
                };
                if better {
                    best = Some((i, ratio));
                }
            }
        }
        // A ray means the dual is unbounded below, i.e. the primal is infeasible.
        let Some((r, _)) = best else {
            return Err(NumericsError::Infeasible);
        };
        pivot(&mut t, r, entering);
        leaving = basis[r];
        basis[r] = entering;
        if leaving == z0 {
            let mut lambda = Vector::zeros(q);
            for (i, &b) in basis.iter().enumerate() {
                if (q..2 * q).contains(&b) {
                    lambda[b - q] = t[(i, rhs)].max(0.0);
                }
            }
            return Ok(lambda);
        }
    }
    Err(NumericsError::MaxIterations(max_pivots))
}

fn complement(var: usize, q: usize) -> usize {
    if var < q {
        var + q
    } else {
        var - q
    }
}

fn pivot(t: &mut Matrix, r: usize, c: usize) {
    let p = t[(r, c)];
    let mut prow = t.row(r).into_owned();
    prow /= p;
    t.set_row(r, &prow);
    for i in 0..t.nrows() {
        if i != r {
            let factor = t[(i, c)];
            if factor != 0.0 {
                let mut row = t.row(i).into_owned();
                row -= &prow * factor;
                t.set_row(i, &row);
            }
        }
    }
}

/// Re-solves `M_FF lambda_F = -v_F` on the support of the pivoting
/// solution, keeping it only when the result is still complementary.
fn polish(m: &Matrix, v: &Vector, lambda: Vector) -> Vector {
    let scale = 1.0 + lambda.amax();
    let support: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 1e-12 * scale).collect();
    if support.is_empty() {
        return lambda;
    }
    let k = support.len();
    let mff = Matrix::from_fn(k, k, |a, b| m[(support[a], support[b])]);
    let rhs = Vector::from_fn(k, |a, _| -v[support[a]]);
    let Ok(chol) = cholesky(&mff) else {
        return lambda;
    };
    let sol = chol.solve(&rhs);
    if sol.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return lambda;
    }
    let mut out = Vector::zeros(lambda.len());
    for (a, &i) in support.iter().enumerate() {
        out[i] = sol[a];
    }
    let w = m * &out + v;
    let tol = 1e-9 * (1.0 + v.amax());
    if w.iter().any(|&x| x < -tol) {
        return lambda;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    #[test]
    fn interior_case_has_zero_multiplier() {
        let l = solve_dual_qp(&one(1.0), &one(1.0), &Vector::zeros(1), &Vector::from_element(1, 1.0)).unwrap();
        assert_eq!(l[0], 0.0);
    }

    #[test]
    fn active_case_matches_hand_kkt() {
        let l = solve_dual_qp(
            &one(1.0),
            &one(-1.0),
            &Vector::from_element(1, 2.0),
            &Vector::from_element(1, -1.0),
        )
        .unwrap();
        assert!((l[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_primal_gives_unbounded_dual() {
        let g = Matrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let err = solve_dual_qp(
            &one(1.0),
            &g,
            &Vector::zeros(1),
            &Vector::from_column_slice(&[0.0, -1.0]),
        )
        .unwrap_err();
        assert_eq!(err, NumericsError::Infeasible);
    }

    #[test]
    fn non_pd_hessian_rejected() {
        let err = solve_dual_qp(&one(0.0), &one(1.0), &Vector::zeros(1), &Vector::zeros(1)).unwrap_err();
        assert_eq!(err, NumericsError::NotPositiveDefinite);
    }
}

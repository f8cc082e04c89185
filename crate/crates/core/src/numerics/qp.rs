//! Strictly convex inequality-constrained QP:
//!
//! ```text
//! minimize 1/2 z^T H z + f^T z   subject to   G z <= e
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method. Starting from
//! the unconstrained minimiser, the most violated constraint is added to
//! the working set, dropping constraints whose multipliers would turn
//! negative on the way. Every iterate is optimal for the subproblem on its
//! working set, so no phase-one feasibility search is needed and
//! infeasibility shows up as a step that cannot be taken.
//!
//! The working set is re-factorised from scratch at every iteration. With
//! `l <= 10` this costs microseconds and avoids accumulating update error.

use nalgebra::{Cholesky, Dyn};

use super::{check_qp_shapes, cholesky, Matrix, NumericsError, Vector, ACTIVE_TOL};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: Vector,
    /// One multiplier per constraint row, zero for inactive rows.
    pub dual: Vector,
    /// Rows with `|G z - e|_i <= 1e-7 (1 + |e_i|)`.
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Working-set geometry in the whitened coordinates `w = L^T z`.
struct WorkingSet {
    /// Orthonormal basis of the span of whitened active normals.
    q1: Matrix,
    /// Upper-triangular factor, `N_hat = q1 * r1`.
    r1: Matrix,
}

impl WorkingSet {
    fn new(normals: &Matrix, rows: &[usize]) -> Self {
        let l = normals.nrows();
        if rows.is_empty() {
            return WorkingSet {
                q1: Matrix::zeros(l, 0),
                r1: Matrix::zeros(0, 0),
            };
        }
        let mut n_hat = Matrix::zeros(l, rows.len());
        for (c, &i) in rows.iter().enumerate() {
            n_hat.set_column(c, &normals.column(i));
        }
        let qr = n_hat.qr();
        WorkingSet { q1: qr.q(), r1: qr.r() }
    }

    fn len(&self) -> usize {
        self.r1.ncols()
    }

    /// Returns `(d, r)` where `d` is the projection of `n_p` onto the
    /// orthogonal complement of the working normals and `r` solves
    /// `R1 r = Q1^T n_p`.
    fn directions(&self, n_p: &Vector) -> (Vector, Vector) {
        if self.len() == 0 {
            return (n_p.clone(), Vector::zeros(0));
        }
        let coeffs = self.q1.transpose() * n_p;
        let d = n_p - &self.q1 * &coeffs;
        let r = self
            .r1
            .solve_upper_triangular(&coeffs)
            .unwrap_or_else(|| Vector::zeros(self.len()));
        (d, r)
    }
}

pub fn solve_qp(h: &Matrix, g: &Matrix, f: &Vector, e: &Vector) -> Result<QpSolution, NumericsError> {
    check_qp_shapes(h, g, f, e)?;
    let l = h.nrows();
    let q = g.nrows();
    let chol = cholesky(h)?;

    // Whitened constraint normals: column i is L^-1 g_i.
    let normals = chol
        .l()
        .solve_lower_triangular(&g.transpose())
        .ok_or(NumericsError::NotPositiveDefinite)?;
    let row_scale: Vec<f64> = (0..q).map(|i| 1.0 + e[i].abs()).collect();
    let feas_tol = 1e-11;

    let mut z = -chol.solve(f);
    let mut working: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let max_iter = 10 * (q + l) + 100;
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(NumericsError::MaxIterations(max_iter));
        }
        // Most violated constraint, lowest index on ties.
        let slack = e - g * &z;
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..q {
            if working.contains(&i) {
                continue;
            }
            let viol = -slack[i] / row_scale[i];
            if viol > feas_tol && pick.is_none_or(|(_, best)| viol > best) {
                pick = Some((i, viol));
            }
        }
        let Some((p, _)) = pick else { break };

        let n_p = normals.column(p).into_owned();
        let mut mult_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(NumericsError::MaxIterations(max_iter));
            }
            let ws = WorkingSet::new(&normals, &working);
            let (d, r) = ws.directions(&n_p);
            // Primal step direction in original coordinates: z moves by -t * step.
            let step = chol
                .l()
                .tr_solve_lower_triangular(&d)
                .ok_or(NumericsError::NotPositiveDefinite)?;

            // Largest step keeping working multipliers nonnegative.
            let mut partial: Option<(usize, f64)> = None;
            for (j, (&rj, &uj)) in r.iter().zip(mult.iter()).enumerate() {
                if rj > 1e-14 {
                    let t = uj / rj;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((j, t));
                    }
                }
            }

            let curvature = d.norm_squared();
            let full = if curvature > 1e-24 * n_p.norm_squared().max(1e-300) {
                let gz = g.row(p).dot(&z.transpose());
                Some((gz - e[p]) / curvature)
            } else {
                None
            };

            match (full, partial) {
                (None, None) => return Err(NumericsError::Infeasible),
                (None, Some((j, t))) => {
                    for (uj, rj) in mult.iter_mut().zip(r.iter()) {
                        *uj -= t * rj;
                    }
                    mult_p += t;
                    working.remove(j);
                    mult.remove(j);
                }
                (Some(t_full), partial) => {
                    let (t, drop) = match partial {
                        Some((j, t1)) if t1 < t_full => (t1, Some(j)),
                        _ => (t_full, None),
                    };
                    z -= &step * t;
                    for (uj, rj) in mult.iter_mut().zip(r.iter()) {
                        *uj -= t * rj;
                    }
                    mult_p += t;
                    match drop {
                        Some(j) => {
                            working.remove(j);
                            mult.remove(j);
                        }
                        None => {
                            working.push(p);
                            mult.push(mult_p);
                            break;
                        }
                    }
                }
            }
        }
    }

    let (primal, dual_working) = polish(&chol, g, f, e, &normals, &working).unwrap_or((z, mult));
    let mut dual = Vector::zeros(q);
    for (&i, &u) in working.iter().zip(dual_working.iter()) {
        dual[i] = u;
    }
    let residual_rows = g * &primal - e;
    let active_set = (0..q)
        .filter(|&i| residual_rows[i].abs() <= ACTIVE_TOL * row_scale[i])
        .collect();
    let kkt_residual = kkt_residual(h, g, f, e, &primal, &dual);
    Ok(QpSolution {
        primal,
        dual,
        active_set,
        kkt_residual,
        iterations,
    })
}

/// Re-solves the equality-constrained KKT system on the final working set.
fn polish(
    chol: &Cholesky<f64, Dyn>,
    g: &Matrix,
    f: &Vector,
    e: &Vector,
    normals: &Matrix,
    working: &[usize],
) -> Option<(Vector, Vec<f64>)> {
    if working.is_empty() {
        return Some((-chol.solve(f), Vec::new()));
    }
    let ws = WorkingSet::new(normals, working);
    // lambda = -(N^T N)^-1 (e_A + G_A H^-1 f), with N^T N = R1^T R1.
    let hf = chol.solve(f);
    let rhs = Vector::from_iterator(
        working.len(),
        working.iter().map(|&i| -(e[i] + g.row(i).dot(&hf.transpose()))),
    );
    let tmp = ws.r1.tr_solve_upper_triangular(&rhs)?;
    let lambda = ws.r1.solve_upper_triangular(&tmp)?;
    let mut gt_lambda = Vector::zeros(g.ncols());
    for (&i, &u) in working.iter().zip(lambda.iter()) {
        gt_lambda += g.row(i).transpose() * u;
    }
    let z = -chol.solve(&(f + gt_lambda));
    if lambda.iter().any(|x| !x.is_finite() || *x < -1e-9) || z.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((z, lambda.iter().copied().collect()))
}

/// Max of stationarity, primal infeasibility, dual infeasibility and
/// complementarity violations (all absolute, infinity norm).
pub(crate) fn kkt_residual(h: &Matrix, g: &Matrix, f: &Vector, e: &Vector, z: &Vector, lambda: &Vector) -> f64 {
    let stationarity = (h * z + f + g.transpose() * lambda).amax();
    let gz_e = g * z - e;
    let primal = gz_e.iter().copied().fold(0.0_f64, f64::max);
    let dual = lambda.iter().map(|&x| (-x).max(0.0)).fold(0.0_f64, f64::max);
    let comp = lambda
        .iter()
        .zip(gz_e.iter())
        .map(|(a, b)| (a * b).abs())
        .fold(0.0_f64, f64::max);
    stationarity.max(primal).max(dual).max(comp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, v)
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn interior_minimum_is_unconstrained() {
        let s = solve_qp(&m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &v(&[0.0]), &v(&[1.0])).unwrap();
        assert_eq!(s.primal[0], 0.0);
        assert_eq!(s.dual[0], 0.0);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn one_dimensional_active_bound() {
        // -z <= -1 binds at z = 1; stationarity 1 + 2 - lambda = 0.
        let s = solve_qp(&m(1, 1, &[1.0]), &m(1, 1, &[-1.0]), &v(&[2.0]), &v(&[-1.0])).unwrap();
        assert!((s.primal[0] - 1.0).abs() < 1e-14);
        assert!((s.dual[0] - 3.0).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn infeasible_box_is_detected() {
        // z <= 0 and -z <= -1.
        let err = solve_qp(&m(1, 1, &[1.0]), &m(2, 1, &[1.0, -1.0]), &v(&[0.0]), &v(&[0.0, -1.0])).unwrap_err();
        assert_eq!(err, NumericsError::Infeasible);
    }

    #[test]
    fn indefinite_hessian_is_rejected() {
        let err = solve_qp(
            &m(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            &m(1, 2, &[1.0, 0.0]),
            &v(&[0.0, 0.0]),
            &v(&[1.0]),
        )
        .unwrap_err();
        assert_eq!(err, NumericsError::NotPositiveDefinite);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = solve_qp(&m(1, 1, &[1.0]), &m(1, 2, &[1.0, 0.0]), &v(&[0.0]), &v(&[1.0])).unwrap_err();
        assert!(matches!(err, NumericsError::ShapeMismatch(_)));
    }

    #[test]
    fn two_dimensional_corner() {
        // minimise 1/2|z - (2, 2)|^2 over z1 <= 1, z2 <= 1, z1 + z2 <= 1.5
        let h = Matrix::identity(2, 2);
        let g = m(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let f = v(&[-2.0, -2.0]);
        let e = v(&[1.0, 1.0, 1.5]);
        let s = solve_qp(&h, &g, &f, &e).unwrap();
        assert!((s.primal - v(&[0.75, 0.75])).amax() < 1e-12);
        assert_eq!(s.active_set, vec![2]);
        assert!((s.dual - v(&[0.0, 0.0, 1.25])).amax() < 1e-12);
    }

    #[test]
    fn redundant_duplicate_constraints() {
        // The same bound stated twice; only one multiplier is needed.
        let h = Matrix::identity(1, 1);
        let g = m(2, 1, &[1.0, 1.0]);
        let s = solve_qp(&h, &g, &v(&[-3.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((s.primal[0] - 1.0).abs() < 1e-12);
        assert!((s.dual.sum() - 2.0).abs() < 1e-12);
        assert_eq!(s.active_set, vec![0, 1]);
    }
}

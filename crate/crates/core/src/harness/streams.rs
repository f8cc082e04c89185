//! Synthetic QP streams that do not come from the MPC client.

use rand::Rng;

use crate::cipher::QpInstance;
use crate::numerics::{Matrix, Vector};

/// A random strictly convex, feasible QP with a full-column-rank `G`.
///
/// `H = A^T A + I/2`, `G` uniform on `[-1, 1]`, and `e = G z0 + s` for a
/// random interior point `z0` and positive slack `s`, so several
/// constraints bind for a typical `f`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, l: usize, q: usize, step: usize) -> QpInstance {
    let h = random_hessian(rng, l);
    let g = Matrix::from_fn(q, l, |_, _| rng.random_range(-1.0..=1.0));
    let (f, e) = random_linear_terms(rng, &g);
    QpInstance { h, g, f, e, step }
}

pub fn random_hessian<R: Rng + ?Sized>(rng: &mut R, l: usize) -> Matrix {
    let a = Matrix::from_fn(l, l, |_, _| rng.random_range(-1.0..=1.0));
    let mut h = a.transpose() * &a + Matrix::identity(l, l) * 0.5;
    h = (&h + h.transpose()) * 0.5;
    h
}

fn random_linear_terms<R: Rng + ?Sized>(rng: &mut R, g: &Matrix) -> (Vector, Vector) {
    let l = g.ncols();
    let z0 = Vector::from_fn(l, |_, _| rng.random_range(-1.0..=1.0));
    let slack = Vector::from_fn(g.nrows(), |_, _| rng.random_range(0.05..=1.0));
    let e = g * z0 + slack;
    let f = Vector::from_fn(l, |_, _| rng.random_range(-5.0..=5.0));
    (f, e)
}

/// `steps` instances sharing `H` and `G` (unless `vary_hessian`) with fresh
/// linear terms at every step.
pub fn random_stream<R: Rng + ?Sized>(
    rng: &mut R,
    l: usize,
    q: usize,
    steps: usize,
    vary_hessian: bool,
) -> Vec<QpInstance> {
    let base = random_instance(rng, l, q, 0);
    (0..steps)
        .map(|k| {
            let h = if vary_hessian {
                random_hessian(rng, l)
            } else {
                base.h.clone()
            };
            let (f, e) = random_linear_terms(rng, &base.g);
            QpInstance {
                h,
                g: base.g.clone(),
                f,
                e,
                step: k,
            }
        })
        .collect()
}

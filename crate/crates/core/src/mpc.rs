//! Linear MPC client: plant, condensed QP, references and the closed loop
//! that outsources every QP through the cipher.
//!
//! The decision variable stacks the inputs `u(k), ..., u(k+N-1)`. The cost
//! penalises predicted outputs `y(k+1), ..., y(k+N)` against the reference
//! at the same instants and the input increments `u(k+j) - u(k+j-1)`,
//! where `u(k-1)` is the previously applied input. After eliminating the
//! predicted states the constraints read
//!
//! ```text
//! [  I ]        [  u_hi ]
//! [ -I ]  z  <= [ -u_lo ]
//! [ Phi_1]      [ x_hi - A x ]
//! [-Phi_1]      [ A x - x_lo ]
//! [  ... ]      [    ...     ]
//! ```
//!
//! with `Phi_i` mapping the input stack to `x(k+i)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{self, CipherError, Ciphertext, KeySource, QpInstance, TransformKey};
use crate::numerics::{Matrix, NumericsError, Vector};
use crate::serde_rows;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("step {step}: {source}")]
    Cipher {
        step: usize,
        #[source]
        source: CipherError,
    },
    #[error("step {step}: cloud solve failed: {source}")]
    Solver {
        step: usize,
        #[source]
        source: NumericsError,
    },
    #[error("step {step}: MPC problem infeasible at x = {x:?}")]
    Infeasible { step: usize, x: Vec<f64> },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    #[serde(rename = "A", with = "serde_rows::matrix")]
    pub a: Matrix,
    #[serde(rename = "B", with = "serde_rows::matrix")]
    pub b: Matrix,
    /// Output selector, `y = C x`.
    #[serde(rename = "C", with = "serde_rows::matrix")]
    pub c_out: Matrix,
    #[serde(with = "serde_rows::vector")]
    pub x_lo: Vector,
    #[serde(with = "serde_rows::vector")]
    pub x_hi: Vector,
    #[serde(with = "serde_rows::vector")]
    pub u_lo: Vector,
    #[serde(with = "serde_rows::vector")]
    pub u_hi: Vector,
}

impl PlantModel {
    /// Planar robot: two decoupled double integrators with unit sampling,
    /// `A = I_2 (x) [1 1; 0 1]`, `B = I_2 (x) [0.5; 1]`, position outputs,
    /// `|x| <= (20, 5, 20, 5)` and `|u| <= (1, 1)`.
    pub fn robot() -> Self {
        let block_a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let block_b = Matrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let eye = Matrix::identity(2, 2);
        let x_hi = Vector::from_vec(vec![20.0, 5.0, 20.0, 5.0]);
        let u_hi = Vector::from_vec(vec![1.0, 1.0]);
        PlantModel {
            a: eye.kronecker(&block_a),
            b: eye.kronecker(&block_b),
            c_out: Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            x_lo: -&x_hi,
            x_hi,
            u_lo: -&u_hi,
            u_hi,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c_out.nrows()
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let n = self.n();
        let m = self.m();
        let ok = self.a.ncols() == n
            && self.b.nrows() == n
            && self.c_out.ncols() == n
            && self.x_lo.len() == n
            && self.x_hi.len() == n
            && self.u_lo.len() == m
            && self.u_hi.len() == m;
        if !ok {
            return Err(MpcError::Config("plant shapes are inconsistent".into()));
        }
        if self.x_lo.iter().zip(self.x_hi.iter()).any(|(lo, hi)| lo >= hi)
            || self.u_lo.iter().zip(self.u_hi.iter()).any(|(lo, hi)| lo >= hi)
        {
            return Err(MpcError::Config("bounds must satisfy lo < hi".into()));
        }
        Ok(())
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    pub fn output(&self, x: &Vector) -> Vector {
        &self.c_out * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Setpoint,
    /// `(radius cos(theta), radius sin(theta))` with
    /// `theta = phase + 2 pi k / period`, negated for clockwise motion.
    Circle {
        radius: f64,
        period: f64,
        counterclockwise: bool,
        phase: f64,
    },
}

impl Reference {
    pub fn circle(radius: f64, period: f64) -> Self {
        Reference::Circle {
            radius,
            period,
            counterclockwise: true,
            phase: 0.0,
        }
    }

    /// Reference output at time `t`.
    pub fn sample(&self, t: usize, p: usize) -> Vector {
        match *self {
            Reference::Setpoint => Vector::zeros(p),
            Reference::Circle {
                radius,
                period,
                counterclockwise,
                phase,
            } => {
                let dir = if counterclockwise { 1.0 } else { -1.0 };
                let theta = phase + dir * 2.0 * PI * t as f64 / period;
                let mut y = Vector::zeros(p);
                y[0] = radius * theta.cos();
                if p > 1 {
                    y[1] = radius * theta.sin();
                }
                y
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    #[serde(rename = "Q", with = "serde_rows::matrix")]
    pub q_weight: Matrix,
    #[serde(rename = "R", with = "serde_rows::matrix")]
    pub r_weight: Matrix,
    pub reference: Reference,
}

impl MpcConfig {
    /// `N = 5`, `Q = I_2`, `R = 0.1 I_2`.
    pub fn robot(reference: Reference) -> Self {
        MpcConfig {
            horizon: 5,
            q_weight: Matrix::identity(2, 2),
            r_weight: Matrix::identity(2, 2) * 0.1,
            reference,
        }
    }

    pub fn validate(&self, model: &PlantModel) -> Result<(), MpcError> {
        if self.horizon == 0 {
            return Err(MpcError::Config("horizon must be at least 1".into()));
        }
        if self.q_weight.shape() != (model.p(), model.p()) || self.r_weight.shape() != (model.m(), model.m()) {
            return Err(MpcError::Config("weight shapes do not match the plant".into()));
        }
        if nalgebra::Cholesky::new(self.r_weight.clone()).is_none() {
            return Err(MpcError::Config("input-rate weight must be positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    #[serde(with = "serde_rows::vector")]
    pub x: Vector,
    #[serde(with = "serde_rows::vector")]
    pub u_prev: Vector,
    pub k: usize,
}

/// Reference samples for the `N` instants starting at `k`.
pub fn reference(cfg: &MpcConfig, model: &PlantModel, k: usize) -> Vec<Vector> {
    (k..k + cfg.horizon)
        .map(|t| cfg.reference.sample(t, model.p()))
        .collect()
}

/// Prediction matrices: `X = psi x + gamma z` for `X = (x(k+1), ..., x(k+N))`.
struct Prediction {
    psi: Matrix,
    gamma: Matrix,
}

fn prediction(model: &PlantModel, horizon: usize) -> Prediction {
    let n = model.n();
    let m = model.m();
    let mut psi = Matrix::zeros(n * horizon, n);
    let mut gamma = Matrix::zeros(n * horizon, m * horizon);
    // powers[i] = A^i
    let mut powers = vec![Matrix::identity(n, n)];
    for i in 1..=horizon {
        powers.push(&powers[i - 1] * &model.a);
    }
    for i in 1..=horizon {
        psi.view_mut(((i - 1) * n, 0), (n, n)).copy_from(&powers[i]);
        for j in 0..i {
            let blk = &powers[i - 1 - j] * &model.b;
            gamma.view_mut(((i - 1) * n, j * m), (n, m)).copy_from(&blk);
        }
    }
    Prediction { psi, gamma }
}

fn block_diag(blk: &Matrix, count: usize) -> Matrix {
    let (r, c) = blk.shape();
    let mut out = Matrix::zeros(r * count, c * count);
    for i in 0..count {
        out.view_mut((i * r, i * c), (r, c)).copy_from(blk);
    }
    out
}

/// Condensed QP for the current state.
pub fn build_condensed_qp(model: &PlantModel, cfg: &MpcConfig, state: &PlantState) -> QpInstance {
    let n = model.n();
    let m = model.m();
    let big_n = cfg.horizon;
    let l = m * big_n;
    let pred = prediction(model, big_n);

    let c_bar = block_diag(&model.c_out, big_n);
    let q_bar = block_diag(&cfg.q_weight, big_n);
    let r_bar = block_diag(&cfg.r_weight, big_n);
    // Increment operator: (D z)_j = u(k+j) - u(k+j-1), with u(k-1) entering via E.
    let mut d = Matrix::identity(l, l);
    for j in 1..big_n {
        for i in 0..m {
            d[(j * m + i, (j - 1) * m + i)] = -1.0;
        }
    }
    let mut e_prev = Matrix::zeros(l, m);
    e_prev.view_mut((0, 0), (m, m)).copy_from(&Matrix::identity(m, m));

    let y_gain = &c_bar * &pred.gamma;
    let mut h = (y_gain.transpose() * &q_bar * &y_gain + d.transpose() * &r_bar * &d) * 2.0;
    h = (&h + h.transpose()) * 0.5;

    let refs = reference(cfg, model, state.k + 1);
    let mut y_ref = Vector::zeros(model.p() * big_n);
    for (i, r) in refs.iter().enumerate() {
        y_ref.rows_mut(i * model.p(), model.p()).copy_from(r);
    }
    let y_free = &c_bar * &pred.psi * &state.x - y_ref;
    let f = (y_gain.transpose() * &q_bar * y_free - d.transpose() * &r_bar * &e_prev * &state.u_prev) * 2.0;

    let q = 2 * l + 2 * n * big_n;
    let mut g = Matrix::zeros(q, l);
    let mut e = Vector::zeros(q);
    g.view_mut((0, 0), (l, l)).copy_from(&Matrix::identity(l, l));
    g.view_mut((l, 0), (l, l)).copy_from(&(-Matrix::identity(l, l)));
    for j in 0..big_n {
        e.rows_mut(j * m, m).copy_from(&model.u_hi);
        e.rows_mut(l + j * m, m).copy_from(&(-&model.u_lo));
    }
    let x_free = &pred.psi * &state.x;
    for i in 0..big_n {
        let phi = pred.gamma.rows(i * n, n);
        let base = 2 * l + 2 * n * i;
        g.view_mut((base, 0), (n, l)).copy_from(&phi);
        g.view_mut((base + n, 0), (n, l)).copy_from(&(-phi));
        let xf = x_free.rows(i * n, n);
        e.rows_mut(base, n).copy_from(&(&model.x_hi - xf));
        e.rows_mut(base + n, n).copy_from(&(xf - &model.x_lo));
    }

    QpInstance {
        h,
        g,
        f,
        e,
        step: state.k,
    }
}

/// One closed-loop step as seen by the client (and, for evaluation only,
/// everything the harness needs as ground truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub plaintext: QpInstance,
    pub key: TransformKey,
    pub ciphertext: Ciphertext,
    #[serde(with = "serde_rows::vector")]
    pub y_star: Vector,
    #[serde(with = "serde_rows::vector")]
    pub z_star: Vector,
    /// State at the start of the step (empty for non-MPC streams).
    #[serde(with = "serde_rows::vector")]
    pub x: Vector,
    /// Applied input.
    #[serde(with = "serde_rows::vector")]
    pub u: Vector,
    #[serde(with = "serde_rows::vector")]
    pub y_ref: Vector,
}

/// Runs `steps` iterations of: build QP, encrypt with a fresh key, let the
/// cloud solve, decrypt, apply the first input, advance the plant.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop<K: KeySource + ?Sized>(
    model: &PlantModel,
    cfg: &MpcConfig,
    x0: &Vector,
    u_prev0: &Vector,
    steps: usize,
    keys: &mut K,
    permute: bool,
) -> Result<Vec<StepRecord>, MpcError> {
    model.validate()?;
    cfg.validate(model)?;
    if steps == 0 {
        return Err(MpcError::Config("at least one step is required".into()));
    }
    if x0.len() != model.n() || u_prev0.len() != model.m() {
        return Err(MpcError::Config("initial state shape does not match the plant".into()));
    }
    let m = model.m();
    let mut state = PlantState {
        x: x0.clone(),
        u_prev: u_prev0.clone(),
        k: 0,
    };
    let mut log = Vec::with_capacity(steps);
    for k in 0..steps {
        state.k = k;
        let plaintext = build_condensed_qp(model, cfg, &state);
        let (l, q) = (plaintext.num_vars(), plaintext.num_constraints());
        let key = keys
            .key_for(k, l, q, permute)
            .map_err(|source| MpcError::Cipher { step: k, source })?;
        let ciphertext = cipher::encrypt(&plaintext, &key).map_err(|source| MpcError::Cipher { step: k, source })?;
        let y_star = match ciphertext.solve() {
            Ok(sol) => sol.primal,
            Err(NumericsError::Infeasible) => {
                return Err(MpcError::Infeasible {
                    step: k,
                    x: state.x.iter().copied().collect(),
                })
            }
            Err(source) => return Err(MpcError::Solver { step: k, source }),
        };
        let z_star = cipher::decrypt_solution(&y_star, &key).map_err(|source| MpcError::Cipher { step: k, source })?;
        let u = z_star.rows(0, m).into_owned();
        let next = model.step(&state.x, &u);
        log.push(StepRecord {
            k,
            plaintext,
            key,
            ciphertext,
            y_star,
            z_star,
            x: state.x.clone(),
            u: u.clone(),
            y_ref: cfg.reference.sample(k, model.p()),
        });
        state.x = next;
        state.u_prev = u;
    }
    Ok(log)
}

//! The random affine transformation of a QP and everything the client and
//! the adversary need around it.
//!
//! A client holding `(H, G, f, e)` draws a key `(R, r)` and substitutes
//! `z = R y + r`, which turns the QP into one over `y` with
//!
//! ```text
//! H~ = R^T H R,   G~ = G R,   f~ = R^T (f + H r),   e~ = e - G r.
//! ```
//!
//! Optionally the constraint rows are shuffled by a permutation `P`
//! (`G~' = P G R`, `e~' = P (e - G r)`); the cost is never permuted.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, condition_number, Matrix, NumericsError, Vector};
use crate::serde_rows;

/// Keys whose condition number exceeds this are redrawn.
pub const MAX_KEY_CONDITION: f64 = 1e8;
const MAX_KEY_DRAWS: usize = 100;
/// Relative residual below which a guess counts as consistent.
pub const CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CipherError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no well-conditioned key after {0} draws")]
    ResampleLimitExceeded(usize),
    #[error("composing matrix is singular")]
    SingularComposer,
    #[error("invalid key range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("not a permutation: {0}")]
    InvalidPermutation(String),
    #[error("transformed Hessian lost positive definiteness")]
    NotPositiveDefinite,
    #[error("constraint matrix has rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A permutation of constraint rows, stored as `(P x)[i] = x[map[i]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl TryFrom<Vec<usize>> for Permutation {
    type Error = CipherError;

    fn try_from(map: Vec<usize>) -> Result<Self, Self::Error> {
        let mut seen = vec![false; map.len()];
        for &i in &map {
            if i >= map.len() || seen[i] {
                return Err(CipherError::InvalidPermutation(format!("{map:?}")));
            }
            seen[i] = true;
        }
        Ok(Permutation(map))
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation(map)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }

    /// Matrix product `self * other`.
    pub fn compose(&self, other: &Permutation) -> Self {
        Permutation(self.0.iter().map(|&i| other.0[i]).collect())
    }

    pub fn apply_vec(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.0.len(), self.0.iter().map(|&i| x[i]))
    }

    pub fn apply_rows(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(self.0.len(), m.ncols(), |i, j| m[(self.0[i], j)])
    }

    /// `P M P^T`.
    pub fn conjugate(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(self.0.len(), self.0.len(), |i, j| m[(self.0[i], self.0[j])])
    }

    pub fn to_matrix(&self) -> Matrix {
        let n = self.0.len();
        let mut p = DMatrix::zeros(n, n);
        for (i, &j) in self.0.iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        p
    }
}

/// Plaintext QP parameters for one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpInstance {
    #[serde(rename = "H", with = "serde_rows::matrix")]
    pub h: Matrix,
    #[serde(rename = "G", with = "serde_rows::matrix")]
    pub g: Matrix,
    #[serde(with = "serde_rows::vector")]
    pub f: Vector,
    #[serde(with = "serde_rows::vector")]
    pub e: Vector,
    pub step: usize,
}

impl QpInstance {
    pub fn num_vars(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.g.nrows()
    }

    pub fn solve(&self) -> Result<numerics::QpSolution, NumericsError> {
        numerics::solve_qp(&self.h, &self.g, &self.f, &self.e)
    }
}

/// Per-step secret `(R, r, P)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformKey {
    #[serde(rename = "R", with = "serde_rows::matrix")]
    pub r_mat: Matrix,
    #[serde(rename = "r", with = "serde_rows::vector")]
    pub r_vec: Vector,
    #[serde(rename = "P")]
    pub perm: Option<Permutation>,
    pub step: usize,
}

impl TransformKey {
    pub fn identity(l: usize, step: usize) -> Self {
        TransformKey {
            r_mat: Matrix::identity(l, l),
            r_vec: Vector::zeros(l),
            perm: None,
            step,
        }
    }
}

/// What the solver sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ciphertext {
    #[serde(rename = "H_tilde", with = "serde_rows::matrix")]
    pub h: Matrix,
    #[serde(rename = "G_tilde", with = "serde_rows::matrix")]
    pub g: Matrix,
    #[serde(rename = "f_tilde", with = "serde_rows::vector")]
    pub f: Vector,
    #[serde(rename = "e_tilde", with = "serde_rows::vector")]
    pub e: Vector,
    pub permuted: bool,
    pub step: usize,
}

impl Ciphertext {
    pub fn num_vars(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.g.nrows()
    }

    /// The cloud's job: solve the transformed QP.
    pub fn solve(&self) -> Result<numerics::QpSolution, NumericsError> {
        numerics::solve_qp(&self.h, &self.g, &self.f, &self.e)
    }

    /// Undo a (known or recovered) row permutation: `G~ = P^T G~'`, `e~ = P^T e~'`.
    pub fn unpermuted(&self, perm: &Permutation) -> Ciphertext {
        let inv = perm.inverse();
        Ciphertext {
            h: self.h.clone(),
            g: inv.apply_rows(&self.g),
            f: self.f.clone(),
            e: inv.apply_vec(&self.e),
            permuted: false,
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Trivial,
    Svd,
    Structure,
    Composed,
    Reconstructed,
    Truth,
}

/// A candidate reconstruction of the plaintext and key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guess {
    #[serde(rename = "H_hat", with = "serde_rows::matrix")]
    pub h: Matrix,
    #[serde(rename = "G_hat", with = "serde_rows::matrix")]
    pub g: Matrix,
    #[serde(rename = "f_hat", with = "serde_rows::vector")]
    pub f: Vector,
    #[serde(rename = "e_hat", with = "serde_rows::vector")]
    pub e: Vector,
    #[serde(rename = "R_hat", with = "serde_rows::matrix")]
    pub r_mat: Matrix,
    #[serde(rename = "r_hat", with = "serde_rows::vector")]
    pub r_vec: Vector,
    pub provenance: Provenance,
}

impl Guess {
    /// `H^ = H~, G^ = G~, f^ = f~, e^ = e~, R^ = I, r^ = 0`.
    pub fn trivial(c: &Ciphertext) -> Guess {
        let l = c.num_vars();
        Guess {
            h: c.h.clone(),
            g: c.g.clone(),
            f: c.f.clone(),
            e: c.e.clone(),
            r_mat: Matrix::identity(l, l),
            r_vec: Vector::zeros(l),
            provenance: Provenance::Trivial,
        }
    }

    /// The guess an oracle would make: plaintext and key verbatim.
    pub fn truth(p: &QpInstance, key: &TransformKey) -> Guess {
        Guess {
            h: p.h.clone(),
            g: match &key.perm {
                Some(perm) => perm.apply_rows(&p.g),
                None => p.g.clone(),
            },
            f: p.f.clone(),
            e: match &key.perm {
                Some(perm) => perm.apply_vec(&p.e),
                None => p.e.clone(),
            },
            r_mat: key.r_mat.clone(),
            r_vec: key.r_vec.clone(),
            provenance: Provenance::Truth,
        }
    }

    /// The plaintext optimizer this guess implies for a cloud answer `y*`.
    pub fn optimizer(&self, y_star: &Vector) -> Vector {
        &self.r_mat * y_star + &self.r_vec
    }
}

/// Draws a key with entries i.i.d. uniform on `[lo, hi]`.
pub fn keygen(l: usize, q: usize, lo: f64, hi: f64, permute: bool, seed: u64) -> Result<TransformKey, CipherError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keygen_with(&mut rng, l, q, lo, hi, permute, 0)
}

pub fn keygen_with<R: Rng + ?Sized>(
    rng: &mut R,
    l: usize,
    q: usize,
    lo: f64,
    hi: f64,
    permute: bool,
    step: usize,
) -> Result<TransformKey, CipherError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(CipherError::InvalidRange(lo, hi));
    }
    if l == 0 || q == 0 {
        return Err(CipherError::ShapeMismatch(format!("l = {l}, q = {q}")));
    }
    let mut r_mat = None;
    for _ in 0..MAX_KEY_DRAWS {
        let cand = Matrix::from_fn(l, l, |_, _| rng.random_range(lo..=hi));
        if condition_number(&cand)? <= MAX_KEY_CONDITION {
            r_mat = Some(cand);
            break;
        }
    }
    let r_mat = r_mat.ok_or(CipherError::ResampleLimitExceeded(MAX_KEY_DRAWS))?;
    let r_vec = Vector::from_fn(l, |_, _| rng.random_range(lo..=hi));
    let perm = permute.then(|| Permutation::random(q, rng));
    Ok(TransformKey {
        r_mat,
        r_vec,
        perm,
        step,
    })
}

/// A supply of per-step keys for the closed loop.
pub trait KeySource {
    fn key_for(&mut self, step: usize, l: usize, q: usize, permute: bool) -> Result<TransformKey, CipherError>;
}

/// Fresh uniform keys. The key for step `k` depends only on `(seed, k)`.
#[derive(Debug, Clone)]
pub struct RandomKeys {
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl RandomKeys {
    pub fn new(lo: f64, hi: f64, seed: u64) -> Self {
        RandomKeys { lo, hi, seed }
    }
}

impl KeySource for RandomKeys {
    fn key_for(&mut self, step: usize, l: usize, q: usize, permute: bool) -> Result<TransformKey, CipherError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step as u64);
        keygen_with(&mut rng, l, q, self.lo, self.hi, permute, step)
    }
}

/// `R = I`, `r = 0`, no permutation: the ciphertext is the plaintext.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityKeys;

impl KeySource for IdentityKeys {
    fn key_for(&mut self, step: usize, l: usize, _q: usize, _permute: bool) -> Result<TransformKey, CipherError> {
        Ok(TransformKey::identity(l, step))
    }
}

fn check_key_shapes(l: usize, q: usize, key: &TransformKey) -> Result<(), CipherError> {
    if key.r_mat.nrows() != l || key.r_mat.ncols() != l || key.r_vec.len() != l {
        return Err(CipherError::ShapeMismatch(format!(
            "key R {}x{}, r {} for l = {l}",
            key.r_mat.nrows(),
            key.r_mat.ncols(),
            key.r_vec.len()
        )));
    }
    if let Some(p) = &key.perm {
        if p.len() != q {
            return Err(CipherError::ShapeMismatch(format!(
                "permutation of {} rows for q = {q}",
                p.len()
            )));
        }
    }
    Ok(())
}

pub fn encrypt(p: &QpInstance, key: &TransformKey) -> Result<Ciphertext, CipherError> {
    let l = p.num_vars();
    let q = p.num_constraints();
    if p.h.ncols() != l || p.g.ncols() != l || p.f.len() != l || p.e.len() != q {
        return Err(CipherError::ShapeMismatch("inconsistent QP instance".into()));
    }
    check_key_shapes(l, q, key)?;
    let r = &key.r_mat;
    let mut h = r.transpose() * &p.h * r;
    h = (&h + h.transpose()) * 0.5;
    let mut g = &p.g * r;
    let f = r.transpose() * (&p.f + &p.h * &key.r_vec);
    let mut e = &p.e - &p.g * &key.r_vec;
    if let Some(perm) = &key.perm {
        g = perm.apply_rows(&g);
        e = perm.apply_vec(&e);
    }

    if nalgebra::Cholesky::new(h.clone()).is_none() {
        return Err(CipherError::NotPositiveDefinite);
    }
    let rank = numerics::svd(&g)?.numeric_rank;
    if rank != l {
        return Err(CipherError::RankDeficient { rank, expected: l });
    }
    Ok(Ciphertext {
        h,
        g,
        f,
        e,
        permuted: key.perm.is_some(),
        step: p.step,
    })
}

/// `z* = R y* + r`.
pub fn decrypt_solution(y_star: &Vector, key: &TransformKey) -> Result<Vector, CipherError> {
    if y_star.len() != key.r_mat.ncols() {
        return Err(CipherError::ShapeMismatch(format!(
            "y* has {} entries, key expects {}",
            y_star.len(),
            key.r_mat.ncols()
        )));
    }
    Ok(&key.r_mat * y_star + &key.r_vec)
}

/// Derives another guess from `g` through a second transformation
/// `(R~, r~)`. Consistency with a ciphertext is preserved.
pub fn compose_guess(g: &Guess, r_tilde: &Matrix, rv_tilde: &Vector) -> Result<Guess, CipherError> {
    let l = g.h.nrows();
    if r_tilde.nrows() != l || r_tilde.ncols() != l || rv_tilde.len() != l {
        return Err(CipherError::ShapeMismatch("composer does not match guess".into()));
    }
    if condition_number(r_tilde)? > 1e12 {
        return Err(CipherError::SingularComposer);
    }
    let inv = r_tilde.clone().try_inverse().ok_or(CipherError::SingularComposer)?;
    let mut h = r_tilde.transpose() * &g.h * r_tilde;
    h = (&h + h.transpose()) * 0.5;
    Ok(Guess {
        h,
        g: &g.g * r_tilde,
        f: r_tilde.transpose() * (&g.f + &g.h * rv_tilde),
        e: &g.e - &g.g * rv_tilde,
        r_mat: &inv * &g.r_mat,
        r_vec: &inv * (&g.r_vec - rv_tilde),
        provenance: Provenance::Composed,
    })
}

/// Relative residuals of the four consistency equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResiduals {
    pub h: f64,
    pub g: f64,
    pub f: f64,
    pub e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub consistent: bool,
    pub residuals: ConsistencyResiduals,
}

impl Consistency {
    /// Only the `H~`/`G~` equations.
    pub fn matrices_consistent(&self) -> bool {
        self.residuals.h <= CONSISTENCY_TOL && self.residuals.g <= CONSISTENCY_TOL
    }
}

fn relative(residual: f64, target: f64) -> f64 {
    residual / target.max(1.0)
}

pub fn check_consistency(g: &Guess, c: &Ciphertext) -> Result<Consistency, CipherError> {
    let l = c.num_vars();
    let q = c.num_constraints();
    let shapes_ok = g.h.shape() == (l, l)
        && g.g.shape() == (q, l)
        && g.r_mat.shape() == (l, l)
        && g.f.len() == l
        && g.e.len() == q
        && g.r_vec.len() == l;
    if !shapes_ok {
        return Err(CipherError::ShapeMismatch("guess does not match ciphertext".into()));
    }
    let rh = &g.r_mat;
    let h_res = relative((rh.transpose() * &g.h * rh - &c.h).norm(), c.h.norm());
    let g_res = relative((&g.g * rh - &c.g).norm(), c.g.norm());
    let f_res = relative((rh.transpose() * (&g.f + &g.h * &g.r_vec) - &c.f).norm(), c.f.norm());
    let e_res = relative((&g.e - &g.g * &g.r_vec - &c.e).norm(), c.e.norm());
    let residuals = ConsistencyResiduals {
        h: h_res,
        g: g_res,
        f: f_res,
        e: e_res,
    };
    Ok(Consistency {
        consistent: [h_res, g_res, f_res, e_res].iter().all(|&r| r <= CONSISTENCY_TOL),
        residuals,
    })
}

use serde::{Deserialize, Serialize};

use super::{AttackError, StepObservation};
use crate::cipher::{Guess, Provenance};
use crate::numerics::{solve_underdetermined, svd, Matrix, Vector};
use crate::serde_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    pub unknowns: usize,
    pub rank: usize,
    pub nullspace_dim: usize,
}

impl RankReport {
    fn of(a: &Matrix) -> Result<RankReport, AttackError> {
        let rank = svd(a)?.numeric_rank;
        Ok(RankReport {
            unknowns: a.ncols(),
            rank,
            nullspace_dim: a.ncols() - rank,
        })
    }
}

/// Per-step guesses that reproduce every observed ciphertext.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub steps: Vec<usize>,
    pub guesses: Vec<Guess>,
    /// The shared constant part of `e^` when it was pinned across steps.
    #[serde(with = "serde_rows::opt_vector")]
    pub e_fix_hat: Option<Vector>,
    #[serde(with = "serde_rows::vector")]
    pub anchor_used: Vector,
    /// Rank of the linear system before anchoring, when one was formed.
    pub rank_report: Option<RankReport>,
}

impl ReconstructionResult {
    /// `z^_k = R^_k y*_k + r^_k` for each reconstructed step.
    pub fn optimizers(&self, obs: &[StepObservation]) -> Vec<Vector> {
        self.guesses
            .iter()
            .zip(obs)
            .map(|(g, o)| g.optimizer(&o.y_star))
            .collect()
    }
}

fn check_inputs(obs: &[StepObservation], guesses: &[Guess]) -> Result<(usize, usize), AttackError> {
    if obs.is_empty() {
        return Err(AttackError::TooFewObservations { need: 1, got: 0 });
    }
    if obs.len() != guesses.len() {
        return Err(AttackError::ShapeMismatch(format!(
            "{} observations but {} guesses",
            obs.len(),
            guesses.len()
        )));
    }
    let l = obs[0].ciphertext.num_vars();
    let q = obs[0].ciphertext.num_constraints();
    for (o, g) in obs.iter().zip(guesses) {
        if o.ciphertext.num_vars() != l
            || o.ciphertext.num_constraints() != q
            || o.y_star.len() != l
            || g.r_mat.shape() != (l, l)
        {
            return Err(AttackError::ShapeMismatch(format!(
                "step {} has inconsistent dimensions",
                o.step
            )));
        }
    }
    Ok((l, q))
}

fn inverse_transpose(r: &Matrix, step: usize) -> Result<Matrix, AttackError> {
    r.transpose().try_inverse().ok_or(AttackError::SingularRHat(step))
}

/// Completes a guess of step `o` from shared `(H^, G^)`, its `R^` and a
/// chosen `r^`.
fn complete(o: &StepObservation, h: &Matrix, g: &Matrix, r_mat: &Matrix, r_vec: Vector) -> Result<Guess, AttackError> {
    let c = &o.ciphertext;
    let f = inverse_transpose(r_mat, o.step)? * &c.f - h * &r_vec;
    let e = &c.e + g * &r_vec;
    Ok(Guess {
        h: h.clone(),
        g: g.clone(),
        f,
        e,
        r_mat: r_mat.clone(),
        r_vec,
        provenance: Provenance::Reconstructed,
    })
}

/// Pins the affine key part at every step by declaring the optimizer to be
/// `anchor`: `r^_k = anchor - R^_k y*_k`. `H^`, `G^` are taken from the
/// first guess, `R^_k` from each step's own guess.
pub fn reconstruct_with_anchor(
    obs: &[StepObservation],
    guesses: &[Guess],
    anchor: &Vector,
) -> Result<ReconstructionResult, AttackError> {
    let (l, _) = check_inputs(obs, guesses)?;
    if anchor.len() != l {
        return Err(AttackError::ShapeMismatch(format!(
            "anchor has {} entries, need {l}",
            anchor.len()
        )));
    }
    let (h, g) = (&guesses[0].h, &guesses[0].g);
    let out = obs
        .iter()
        .zip(guesses)
        .map(|(o, guess)| complete(o, h, g, &guess.r_mat, anchor - &guess.r_mat * &o.y_star))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReconstructionResult {
        steps: obs.iter().map(|o| o.step).collect(),
        guesses: out,
        e_fix_hat: None,
        anchor_used: anchor.clone(),
        rank_report: None,
    })
}

/// Stacked consistency equations for steps that share `(H, G, f, e)` and
/// differ only in their keys. Unknowns are `[e^, f^, r^_1, ..., r^_s]`:
///
/// ```text
/// e^ - G^ r^_i            = e~_i
/// R^_i^T f^ + R^_i^T H^ r^_i = f~_i
/// ```
#[derive(Debug, Clone)]
pub struct MultiInstanceSystem {
    pub a: Matrix,
    pub b: Vector,
    pub q: usize,
    pub l: usize,
    pub steps: Vec<usize>,
    r_mats: Vec<Matrix>,
    y_stars: Vec<Vector>,
    h: Matrix,
    g: Matrix,
}

pub fn build_multi_instance_system(
    obs: &[StepObservation],
    guesses: &[Guess],
) -> Result<MultiInstanceSystem, AttackError> {
    let (l, q) = check_inputs(obs, guesses)?;
    let s = obs.len();
    let (h, g) = (&guesses[0].h, &guesses[0].g);
    let mut a = Matrix::zeros(s * (q + l), q + l + s * l);
    let mut b = Vector::zeros(s * (q + l));
    for (i, (o, guess)) in obs.iter().zip(guesses).enumerate() {
        let row = i * (q + l);
        let col = q + l + i * l;
        let rt = guess.r_mat.transpose();
        a.view_mut((row, 0), (q, q)).fill_with_identity();
        a.view_mut((row, col), (q, l)).copy_from(&(-g));
        b.rows_mut(row, q).copy_from(&o.ciphertext.e);
        a.view_mut((row + q, q), (l, l)).copy_from(&rt);
        a.view_mut((row + q, col), (l, l)).copy_from(&(&rt * h));
        b.rows_mut(row + q, l).copy_from(&o.ciphertext.f);
    }
    Ok(MultiInstanceSystem {
        a,
        b,
        q,
        l,
        steps: obs.iter().map(|o| o.step).collect(),
        r_mats: guesses.iter().map(|g| g.r_mat.clone()).collect(),
        y_stars: obs.iter().map(|o| o.y_star.clone()).collect(),
        h: h.clone(),
        g: g.clone(),
    })
}

impl MultiInstanceSystem {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn rank_report(&self) -> Result<RankReport, AttackError> {
        RankReport::of(&self.a)
    }

    /// Appends `r^_i = anchor - R^_i y*_i` for the `i`-th stacked step.
    pub fn with_anchor(&self, i: usize, anchor: &Vector) -> Result<MultiInstanceSystem, AttackError> {
        if i >= self.num_steps() || anchor.len() != self.l {
            return Err(AttackError::ShapeMismatch("anchor does not fit the system".into()));
        }
        let (rows, cols) = self.a.shape();
        let mut a = self.a.clone().resize_vertically(rows + self.l, 0.0);
        a.view_mut((rows, self.q + self.l + i * self.l), (self.l, self.l))
            .fill_with_identity();
        let mut b = self.b.clone().resize_vertically(rows + self.l, 0.0);
        b.rows_mut(rows, self.l)
            .copy_from(&(anchor - &self.r_mats[i] * &self.y_stars[i]));
        debug_assert_eq!(a.ncols(), cols);
        Ok(MultiInstanceSystem { a, b, ..self.clone() })
    }

    /// Minimum-norm least-squares solution turned into per-step guesses.
    pub fn solve(&self, anchor: &Vector) -> Result<ReconstructionResult, AttackError> {
        let sol = solve_underdetermined(&self.a, &self.b)?;
        let (q, l) = (self.q, self.l);
        let e = sol.solution.rows(0, q).into_owned();
        let f = sol.solution.rows(q, l).into_owned();
        let guesses = (0..self.num_steps())
            .map(|i| Guess {
                h: self.h.clone(),
                g: self.g.clone(),
                f: f.clone(),
                e: e.clone(),
                r_mat: self.r_mats[i].clone(),
                r_vec: sol.solution.rows(q + l + i * l, l).into_owned(),
                provenance: Provenance::Reconstructed,
            })
            .collect();
        Ok(ReconstructionResult {
            steps: self.steps.clone(),
            guesses,
            e_fix_hat: Some(e),
            anchor_used: anchor.clone(),
            rank_report: Some(RankReport {
                unknowns: self.a.ncols(),
                rank: sol.rank,
                nullspace_dim: sol.nullspace_dim,
            }),
        })
    }
}

/// Dense system for steps that share `H`, `G` and the first `q_fix`
/// entries of `e`. Unknowns are `e^_fix` followed, per step, by
/// `[e^_var, f^, r^]`. Meant for inspecting the rank on small subsets;
/// `extend_spec2` solves the same equations by elimination.
#[derive(Debug, Clone)]
pub struct Spec2System {
    pub a: Matrix,
    pub b: Vector,
    pub q_fix: usize,
    pub q_var: usize,
    pub l: usize,
}

impl Spec2System {
    fn step_col(&self, i: usize) -> usize {
        self.q_fix + i * (self.q_var + 2 * self.l)
    }

    /// Offset of `r^` of the `i`-th step in the unknown vector.
    pub fn r_col(&self, i: usize) -> usize {
        self.step_col(i) + self.q_var + self.l
    }

    pub fn rank_report(&self) -> Result<RankReport, AttackError> {
        RankReport::of(&self.a)
    }

    /// Appends `r^_i = value`.
    pub fn with_anchor(&self, i: usize, value: &Vector) -> Spec2System {
        let rows = self.a.nrows();
        let mut a = self.a.clone().resize_vertically(rows + self.l, 0.0);
        a.view_mut((rows, self.r_col(i)), (self.l, self.l)).fill_with_identity();
        let mut b = self.b.clone().resize_vertically(rows + self.l, 0.0);
        b.rows_mut(rows, self.l).copy_from(value);
        Spec2System { a, b, ..self.clone() }
    }
}

pub fn build_spec2_system(
    obs: &[StepObservation],
    guesses: &[Guess],
    q_fix: usize,
) -> Result<Spec2System, AttackError> {
    let (l, q) = check_inputs(obs, guesses)?;
    if q_fix > q {
        return Err(AttackError::ShapeMismatch(format!("q_fix = {q_fix} exceeds q = {q}")));
    }
    let q_var = q - q_fix;
    let s = obs.len();
    let (h, g) = (&guesses[0].h, &guesses[0].g);
    let mut sys = Spec2System {
        a: Matrix::zeros(s * (q + l), q_fix + s * (q_var + 2 * l)),
        b: Vector::zeros(s * (q + l)),
        q_fix,
        q_var,
        l,
    };
    for (i, (o, guess)) in obs.iter().zip(guesses).enumerate() {
        let row = i * (q + l);
        let col = sys.step_col(i);
        let r_col = sys.r_col(i);
        let rt = guess.r_mat.transpose();
        sys.a.view_mut((row, 0), (q_fix, q_fix)).fill_with_identity();
        sys.a.view_mut((row + q_fix, col), (q_var, q_var)).fill_with_identity();
        sys.a.view_mut((row, r_col), (q, l)).copy_from(&(-g));
        sys.b.rows_mut(row, q).copy_from(&o.ciphertext.e);
        sys.a.view_mut((row + q, col + q_var), (l, l)).copy_from(&rt);
        sys.a.view_mut((row + q, r_col), (l, l)).copy_from(&(&rt * h));
        sys.b.rows_mut(row + q, l).copy_from(&o.ciphertext.f);
    }
    Ok(sys)
}

/// Extends a solved step to a whole episode whose constraint vectors share
/// their first `q_fix` entries. The solved step fixes
/// `e^_fix = e~_fix,s + G^_fix r^_s`; every other step then has
/// `G^_fix r^_k = e^_fix - e~_fix,k`, which determines `r^_k` once
/// `G^_fix` has full column rank.
pub fn extend_spec2(
    obs: &[StepObservation],
    guesses: &[Guess],
    solved: usize,
    solved_r_vec: &Vector,
    q_fix: usize,
) -> Result<ReconstructionResult, AttackError> {
    let (l, q) = check_inputs(obs, guesses)?;
    if solved >= obs.len() || solved_r_vec.len() != l {
        return Err(AttackError::ShapeMismatch(
            "solved step does not fit the episode".into(),
        ));
    }
    if q_fix > q {
        return Err(AttackError::ShapeMismatch(format!("q_fix = {q_fix} exceeds q = {q}")));
    }
    let (h, g) = (&guesses[0].h, &guesses[0].g);
    let g_fix = g.rows(0, q_fix).into_owned();
    let fix_rank = if q_fix == 0 { 0 } else { svd(&g_fix)?.numeric_rank };
    if fix_rank < l {
        return Err(AttackError::UnderdeterminedAfterAnchor {
            rank: fix_rank,
            expected: l,
        });
    }
    let e_fix = obs[solved].ciphertext.e.rows(0, q_fix) + &g_fix * solved_r_vec;

    let mut out = Vec::with_capacity(obs.len());
    for (i, (o, guess)) in obs.iter().zip(guesses).enumerate() {
        let r_vec = if i == solved {
            solved_r_vec.clone()
        } else {
            let rhs = &e_fix - o.ciphertext.e.rows(0, q_fix);
            solve_underdetermined(&g_fix, &rhs)?.solution
        };
        out.push(complete(o, h, g, &guess.r_mat, r_vec)?);
    }
    let s = obs.len();
    let q_var = q - q_fix;
    let unknowns = q_fix + s * (q_var + 2 * l);
    Ok(ReconstructionResult {
        steps: obs.iter().map(|o| o.step).collect(),
        guesses: out,
        e_fix_hat: Some(e_fix),
        anchor_used: &guesses[solved].r_mat * &obs[solved].y_star + solved_r_vec,
        rank_report: Some(RankReport {
            unknowns,
            rank: unknowns - l,
            nullspace_dim: l,
        }),
    })
}

use super::{invariants, AttackError};
use crate::cipher::{Ciphertext, Guess, Provenance};
use crate::numerics::{condition_number, svd, Matrix, Vector};

const MAX_GUESS_CONDITION: f64 = 1e12;

/// Guess read off the SVD of the invariant `M = U D U^T`:
/// `H^ = D^-1`, `G^ = U` (first `l` columns), `R^ = G^^T G~`.
///
/// When the nonzero singular values of `M` are distinct the result depends
/// on `M` alone, so it is the same for every step sharing `M`. With ties
/// the singular subspaces, and hence `G^`, are not unique.
pub fn svd_guess(c: &Ciphertext) -> Result<Guess, AttackError> {
    let l = c.num_vars();
    let inv = invariants(c)?;
    let dec = svd(&inv.m)?;
    if dec.numeric_rank < l {
        return Err(AttackError::RankDeficientInvariant {
            rank: dec.numeric_rank,
            expected: l,
        });
    }
    let g = dec.u.columns(0, l).into_owned();
    let h = Matrix::from_diagonal(&dec.singular_values.rows(0, l).map(|s| 1.0 / s));
    let r_mat = g.transpose() * &c.g;
    finish(c, h, g, r_mat, Provenance::Svd)
}

/// Whether the `l` leading singular values of `M` are separated by more
/// than `rel_gap` relative to the largest one.
pub fn distinct_singular_values(m: &Matrix, l: usize, rel_gap: f64) -> Result<bool, AttackError> {
    let s = svd(m)?.singular_values;
    let scale = s.get(0).copied().unwrap_or(0.0);
    Ok((1..l.min(s.len())).all(|i| s[i - 1] - s[i] > rel_gap * scale))
}

/// Guess for constraint matrices of the form `[I; -I; ...]`: the top block
/// of `G~` is then the key itself.
pub fn structure_guess(c: &Ciphertext) -> Result<Guess, AttackError> {
    let l = c.num_vars();
    let q = c.num_constraints();
    if q < 2 * l {
        return Err(AttackError::StructureMismatch(format!(
            "{q} constraints cannot hold two {l}x{l} blocks"
        )));
    }
    let top = c.g.rows(0, l).into_owned();
    let next = c.g.rows(l, l);
    let mismatch = (&top + next).amax();
    if mismatch > 1e-8 * top.amax().max(1.0) {
        return Err(AttackError::StructureMismatch(format!(
            "rows {l}..{} are not the negated top block (max deviation {mismatch:.3e})",
            2 * l
        )));
    }
    if condition_number(&top)? > MAX_GUESS_CONDITION {
        return Err(AttackError::SingularRHat(c.step));
    }
    let r_inv = top.clone().try_inverse().ok_or(AttackError::SingularRHat(c.step))?;
    let mut g = &c.g * &r_inv;
    for i in 0..l {
        for j in 0..l {
            let one = if i == j { 1.0 } else { 0.0 };
            g[(i, j)] = one;
            g[(l + i, j)] = -one;
        }
    }
    let h = r_inv.transpose() * &c.h * &r_inv;
    finish(c, h, g, top, Provenance::Structure)
}

/// Completes `(H^, G^, R^)` with `r^ = 0`, `f^ = R^^-T f~`, `e^ = e~`.
fn finish(c: &Ciphertext, h: Matrix, g: Matrix, r_mat: Matrix, provenance: Provenance) -> Result<Guess, AttackError> {
    let l = c.num_vars();
    if condition_number(&r_mat)? > MAX_GUESS_CONDITION {
        return Err(AttackError::SingularRHat(c.step));
    }
    let r_inv_t = r_mat
        .transpose()
        .try_inverse()
        .ok_or(AttackError::SingularRHat(c.step))?;
    Ok(Guess {
        h: (&h + h.transpose()) * 0.5,
        g,
        f: r_inv_t * &c.f,
        e: c.e.clone(),
        r_mat,
        r_vec: Vector::zeros(l),
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{check_consistency, encrypt, keygen, QpInstance};
    use crate::harness::streams::{random_instance, random_stream};
    use crate::numerics::rel_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn boxed_instance(seed: u64) -> QpInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_instance(&mut rng, 3, 10, 0);
        for i in 0..3 {
            for j in 0..3 {
                p.g[(i, j)] = if i == j { 1.0 } else { 0.0 };
                p.g[(3 + i, j)] = if i == j { -1.0 } else { 0.0 };
            }
            p.e[i] = 2.0;
            p.e[3 + i] = 2.0;
        }
        p
    }

    #[test]
    fn svd_guess_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_instance(&mut rng, 4, 12, 0);
        let c = encrypt(&p, &keygen(4, 12, -10.0, 10.0, false, 4).unwrap()).unwrap();
        let g = svd_guess(&c).unwrap();
        assert_eq!(g.provenance, Provenance::Svd);
        let res = check_consistency(&g, &c).unwrap();
        assert!(res.consistent, "{res:?}");
        assert!((g.g.transpose() * &g.g - Matrix::identity(4, 4)).amax() < 1e-10);
        // H^ is diagonal and decreasing (inverse of descending singular values)
        for i in 1..4 {
            assert!(g.h[(i, i)] >= g.h[(i - 1, i - 1)]);
        }
    }

    #[test]
    fn svd_guess_is_shared_across_a_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stream = random_stream(&mut rng, 4, 12, 5, false);
        let guesses: Vec<Guess> = stream
            .iter()
            .enumerate()
            .map(|(k, p)| {
                svd_guess(&encrypt(p, &keygen(4, 12, -10.0, 10.0, false, 100 + k as u64).unwrap()).unwrap()).unwrap()
            })
            .collect();
        let inv = invariants(&encrypt(&stream[0], &keygen(4, 12, -10.0, 10.0, false, 1).unwrap()).unwrap()).unwrap();
        assert!(distinct_singular_values(&inv.m, 4, 1e-6).unwrap());
        for g in &guesses[1..] {
            assert!(rel_diff(&g.h, &guesses[0].h) < 1e-6);
            assert!(rel_diff(&g.g, &guesses[0].g) < 1e-6);
        }
    }

    #[test]
    fn rank_deficient_invariant_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = random_instance(&mut rng, 3, 6, 0);
        let col = p.g.column(0).into_owned();
        p.g.set_column(2, &col);
        let c = Ciphertext {
            h: p.h.clone(),
            g: p.g.clone(),
            f: p.f.clone(),
            e: p.e.clone(),
            permuted: false,
            step: 0,
        };
        assert!(matches!(
            svd_guess(&c),
            Err(AttackError::RankDeficientInvariant { rank: 2, expected: 3 })
        ));
    }

    #[test]
    fn structure_guess_recovers_key_and_plaintext() {
        let p = boxed_instance(7);
        let key = keygen(3, 10, -10.0, 10.0, false, 7).unwrap();
        let c = encrypt(&p, &key).unwrap();
        let g = structure_guess(&c).unwrap();
        assert!(rel_diff(&g.r_mat, &key.r_mat) < 1e-12);
        assert!(rel_diff(&g.g, &p.g) < 1e-9);
        assert!(rel_diff(&g.h, &p.h) < 1e-8);
        assert!(check_consistency(&g, &c).unwrap().consistent);
    }

    #[test]
    fn structure_guess_rejects_generic_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_instance(&mut rng, 3, 10, 0);
        let c = encrypt(&p, &keygen(3, 10, -10.0, 10.0, false, 8).unwrap()).unwrap();
        assert!(matches!(structure_guess(&c), Err(AttackError::StructureMismatch(_))));
    }

    #[test]
    fn structure_guess_needs_two_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_instance(&mut rng, 4, 6, 0);
        let c = encrypt(&p, &keygen(4, 6, -10.0, 10.0, false, 9).unwrap()).unwrap();
        assert!(matches!(structure_guess(&c), Err(AttackError::StructureMismatch(_))));
    }
}

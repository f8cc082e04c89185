//! The honest-but-curious solver's side: everything here consumes only
//! ciphertexts, the solver's own answers `y*`, and (for permutations) one
//! absolute permutation supplied from outside.

mod detect;
mod guess;
mod permutation;
mod reconstruct;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{CipherError, Ciphertext};
use crate::numerics::{self, Matrix, NumericsError, Vector};
use crate::serde_rows;

pub use detect::{detect_specs, detect_specs_unordered, SpecReport};
pub use guess::{distinct_singular_values, structure_guess, svd_guess};
pub use permutation::{resolve_permutations, AmbiguityGroup, AmbiguitySet, PermutationMap, PermutationOptions};
pub use reconstruct::{
    build_multi_instance_system, build_spec2_system, extend_spec2, reconstruct_with_anchor, MultiInstanceSystem,
    RankReport, ReconstructionResult, Spec2System,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("transformed Hessian of step {0} is singular")]
    SingularHTilde(usize),
    #[error("invariant has numeric rank {rank}, expected {expected}")]
    RankDeficientInvariant { rank: usize, expected: usize },
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("guessed key of step {0} is singular")]
    SingularRHat(usize),
    #[error("system still underdetermined after anchoring: rank {rank}, need {expected}")]
    UnderdeterminedAfterAnchor { rank: usize, expected: usize },
    #[error("ambiguous row matching at steps {0:?}")]
    AmbiguousMatching(Vec<usize>),
    #[error("step {0}: invariant rows do not match the reference step")]
    PermutationMismatch(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rows are permuted but no absolute permutation is known")]
    MissingReferencePermutation,
    #[error("stream does not exhibit {0}")]
    SpecificationMissing(String),
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

/// What the solver observes at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepObservation {
    pub step: usize,
    pub ciphertext: Ciphertext,
    #[serde(with = "serde_rows::vector")]
    pub y_star: Vector,
}

/// `M = G~ H~^-1 G~^T` and `v = G~ H~^-1 f~ + e~`; both are unchanged by
/// the affine part of the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantPair {
    #[serde(with = "serde_rows::matrix")]
    pub m: Matrix,
    #[serde(with = "serde_rows::vector")]
    pub v: Vector,
    pub step: usize,
}

pub fn invariants(c: &Ciphertext) -> Result<InvariantPair, AttackError> {
    let (m, v) = numerics::dual_data(&c.h, &c.g, &c.f, &c.e).map_err(|err| match err {
        NumericsError::NotPositiveDefinite => AttackError::SingularHTilde(c.step),
        other => AttackError::Numerics(other),
    })?;
    Ok(InvariantPair { m, v, step: c.step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{encrypt, keygen, TransformKey};
    use crate::harness::streams::random_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_key_gives_plaintext_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_instance(&mut rng, 3, 8, 0);
        let c = encrypt(&p, &TransformKey::identity(3, 0)).unwrap();
        let inv = invariants(&c).unwrap();
        let h_inv = p.h.clone().try_inverse().unwrap();
        assert!(numerics::rel_diff(&inv.m, &(&p.g * &h_inv * p.g.transpose())) < 1e-12);
        assert!(numerics::rel_diff_vec(&inv.v, &(&p.g * &h_inv * &p.f + &p.e)) < 1e-12);
    }

    #[test]
    fn two_keys_same_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_instance(&mut rng, 5, 12, 0);
        let a = invariants(&encrypt(&p, &keygen(5, 12, -10.0, 10.0, false, 1).unwrap()).unwrap()).unwrap();
        let b = invariants(&encrypt(&p, &keygen(5, 12, -10.0, 10.0, false, 2).unwrap()).unwrap()).unwrap();
        assert!(numerics::rel_diff(&a.m, &b.m) < 1e-8);
        assert!(numerics::rel_diff_vec(&a.v, &b.v) < 1e-8);
    }

    #[test]
    fn permuted_invariants_are_conjugated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_instance(&mut rng, 4, 10, 0);
        let key = keygen(4, 10, -10.0, 10.0, true, 3).unwrap();
        let plain = invariants(
            &encrypt(
                &p,
                &TransformKey {
                    perm: None,
                    ..key.clone()
                },
            )
            .unwrap(),
        )
        .unwrap();
        let perm = invariants(&encrypt(&p, &key).unwrap()).unwrap();
        let pk = key.perm.unwrap();
        assert!(numerics::rel_diff(&perm.m, &pk.conjugate(&plain.m)) < 1e-8);
        assert!(numerics::rel_diff_vec(&perm.v, &pk.apply_vec(&plain.v)) < 1e-8);
    }

    #[test]
    fn singular_hessian_is_reported() {
        let c = Ciphertext {
            h: Matrix::zeros(2, 2),
            g: Matrix::identity(2, 2),
            f: Vector::zeros(2),
            e: Vector::zeros(2),
            permuted: false,
            step: 4,
        };
        assert_eq!(invariants(&c).unwrap_err(), AttackError::SingularHTilde(4));
    }
}

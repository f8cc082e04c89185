//! Random affine transformations ("RT cipher") of quadratic programs, a
//! linear MPC client that produces a stream of such programs, and the
//! ciphertext-only attacks that recover the hidden program data.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense kernels (active-set QP solver with duals, an LCP
//!   route for the explicit dual, SVD and rank-revealing least squares).
//! * [`cipher`]: key generation, encryption of QP instances, solution
//!   recovery, guesses and their consistency.
//! * [`mpc`]: the plant, condensed QP construction and the closed loop that
//!   outsources every QP to an untrusted solver.
//! * [`attack`]: invariants, structure detection, key/parameter recovery and
//!   permutation resolution from what the solver observes.
//! * [`harness`]: scenarios, episode logs, metrics and file output.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod attack;
pub mod cipher;
pub mod harness;
pub mod mpc;
pub mod numerics;
pub mod serde_rows;

pub use numerics::{Matrix, Vector};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::streams::random_instance;
use super::{run_scenario, ScenarioConfig};
use crate::attack::{invariants, structure_guess, svd_guess};
use crate::cipher::{check_consistency, decrypt_solution, encrypt, keygen_with};
use crate::numerics::{dual_data, rel_diff, rel_diff_vec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestCheck {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<SelftestCheck>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Worst {
    name: &'static str,
    tolerance: f64,
    worst: f64,
}

impl Worst {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Worst {
            name,
            tolerance,
            worst: 0.0,
        }
    }

    fn see(&mut self, x: f64) {
        // NaN must fail the check, so it wins over any number.
        if x.is_nan() || x > self.worst {
            self.worst = x;
        }
    }

    fn fail(&mut self) {
        self.worst = f64::INFINITY;
    }

    fn finish(self) -> SelftestCheck {
        SelftestCheck {
            name: self.name.into(),
            worst: self.worst,
            tolerance: self.tolerance,
            passed: self.worst <= self.tolerance,
        }
    }
}

/// Round trip, invariants, dual agreement and guess consistency on
/// `instances` random `(l = 10, q = 60)` problems, plus key recovery on
/// one short closed-loop episode.
pub fn selftest(instances: usize, seed: u64) -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut round_trip = Worst::new("decrypted optimizer matches plaintext", 1e-6);
    let mut invariant = Worst::new("invariants unchanged by the key", 1e-8);
    let mut duals = Worst::new("dual optimizers agree", 1e-6);
    let mut svd_consistent = Worst::new("svd guess is consistent", 1e-6);

    for k in 0..instances {
        let p = random_instance(&mut rng, 10, 60, k);
        let Ok(key) = keygen_with(&mut rng, 10, 60, -10.0, 10.0, false, k) else {
            round_trip.fail();
            continue;
        };
        let Ok(c) = encrypt(&p, &key) else {
            round_trip.fail();
            continue;
        };
        match (p.solve(), c.solve()) {
            (Ok(plain), Ok(cipher)) => {
                match decrypt_solution(&cipher.primal, &key) {
                    Ok(z) => round_trip.see((z - &plain.primal).amax()),
                    Err(_) => round_trip.fail(),
                }
                duals.see((&cipher.dual - &plain.dual).amax() / plain.dual.amax().max(1.0));
            }
            _ => {
                round_trip.fail();
                duals.fail();
            }
        }
        match (dual_data(&p.h, &p.g, &p.f, &p.e), invariants(&c)) {
            (Ok((m, v)), Ok(inv)) => {
                invariant.see(rel_diff(&inv.m, &m));
                invariant.see(rel_diff_vec(&inv.v, &v));
            }
            _ => invariant.fail(),
        }
        match svd_guess(&c).map(|g| check_consistency(&g, &c)) {
            Ok(Ok(res)) => {
                let r = res.residuals;
                svd_consistent.see(r.h.max(r.g).max(r.f).max(r.e));
            }
            _ => svd_consistent.fail(),
        }
    }

    let mut key_recovery = Worst::new("structure guess recovers the robot keys", 1e-9);
    match run_scenario(&ScenarioConfig::setpoint(5, seed)) {
        Ok((log, _)) => {
            for r in &log.records {
                match structure_guess(&r.ciphertext) {
                    Ok(g) => key_recovery.see(rel_diff(&g.r_mat, &r.key.r_mat)),
                    Err(_) => key_recovery.fail(),
                }
            }
        }
        Err(_) => key_recovery.fail(),
    }

    SelftestReport {
        checks: [round_trip, invariant, duals, svd_consistent, key_recovery]
            .into_iter()
            .map(Worst::finish)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let report = selftest(5, 1);
        assert!(report.passed(), "{report:#?}");
        assert_eq!(report.checks.len(), 5);
    }

    #[test]
    fn nan_fails_a_check() {
        let mut w = Worst::new("x", 1.0);
        w.see(0.5);
        w.see(f64::NAN);
        w.see(0.7);
        assert!(!w.finish().passed);
    }
}

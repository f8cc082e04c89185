// The stacked equations over steps with identical plaintexts always miss
// exactly `l` ranks; one anchored optimizer fills them.

use rtqp::attack::{build_multi_instance_system, structure_guess, StepObservation};
use rtqp::cipher::{encrypt, Guess, KeySource, RandomKeys};
use rtqp::harness::{run_scenario, ScenarioConfig};
use rtqp::Vector;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (log, _) = run_scenario(&ScenarioConfig::setpoint(21, 1))?;
    let plain = &log.records[20].plaintext;
    let (l, q) = (plain.num_vars(), plain.num_constraints());
    let mut keys = RandomKeys::new(-10.0, 10.0, 99);

    let mut obs = Vec::new();
    let mut guesses: Vec<Guess> = Vec::new();
    for s in 1..=3 {
        let key = keys.key_for(s, l, q, false)?;
        let c = encrypt(plain, &key)?;
        let y_star = c.solve()?.primal;
        guesses.push(structure_guess(&c)?);
        obs.push(StepObservation {
            step: s,
            ciphertext: c,
            y_star,
        });

        let sys = build_multi_instance_system(&obs, &guesses)?;
        let rr = sys.rank_report()?;
        let anchored = sys.with_anchor(0, &Vector::zeros(l))?;
        println!(
            "s = {s}: {} unknowns, rank {} (q + l s = {}), after anchoring nullspace {}",
            rr.unknowns,
            rr.rank,
            q + l * s,
            anchored.rank_report()?.nullspace_dim
        );
        if rr.rank != q + l * s || anchored.rank_report()?.nullspace_dim != 0 {
            return Err("unexpected rank".into());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

// Row permutations on top of the affine key. On a generic stream one
// known permutation gives all others; on the robot the symmetric axes
// leave interchangeable rows until equal `v'` pin them down.

use rtqp::attack::{invariants, resolve_permutations, InvariantPair, PermutationOptions};
use rtqp::harness::{run_scenario, Scenario, ScenarioConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::new(
        Scenario::RandomStream {
            l: 6,
            q: 20,
            vary_hessian: false,
        },
        10,
        2,
    );
    cfg.permute = true;
    let (log, _) = run_scenario(&cfg)?;
    let pairs: Vec<InvariantPair> = log
        .records
        .iter()
        .map(|r| invariants(&r.ciphertext))
        .collect::<Result<_, _>>()?;
    let p0 = log.records[0].key.perm.clone().ok_or("unpermuted log")?;
    let map = resolve_permutations(&pairs, 0, &p0, &PermutationOptions::default())?;
    let hits = log
        .records
        .iter()
        .zip(&map.absolute)
        .filter(|(r, p)| p.as_ref() == r.key.perm.as_ref())
        .count();
    println!("generic stream: {hits}/{} permutations recovered", log.records.len());

    let mut cfg = ScenarioConfig::tracking(51, 1);
    cfg.permute = true;
    let (log, _) = run_scenario(&cfg)?;
    let pick = [10, 30, 50];
    let pairs: Vec<InvariantPair> = pick
        .iter()
        .map(|&k| invariants(&log.records[k].ciphertext))
        .collect::<Result<_, _>>()?;
    let p10 = log.records[10].key.perm.clone().ok_or("unpermuted log")?;
    let plain = resolve_permutations(&pairs, 10, &p10, &PermutationOptions::default())?;
    for a in &plain.ambiguity_sets {
        let rows: usize = a.groups.iter().map(|g| g.rows.len()).sum();
        println!(
            "robot, step {}: {rows} rows in {} ambiguous groups",
            a.step,
            a.groups.len()
        );
    }
    let refined = resolve_permutations(
        &pairs,
        10,
        &p10,
        &PermutationOptions {
            refine_sets: vec![pick.to_vec()],
            ..Default::default()
        },
    )?;
    let ok = pick
        .iter()
        .zip(&refined.absolute)
        .all(|(&k, p)| p.as_ref() == log.records[k].key.perm.as_ref());
    println!("with equal v' on {pick:?}: all recovered = {ok}");
    if hits != 10 || plain.ambiguity_sets.is_empty() || !ok {
        return Err("permutation recovery failed".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

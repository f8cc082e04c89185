// The regulator experiment end to end: simulate, detect the settled
// steps, anchor `z^* = 0` there and recover every applied input.

use rtqp::harness::{run_attack, run_scenario, AttackOptions, ScenarioConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (log, _) = run_scenario(&ScenarioConfig::setpoint(21, 1))?;
    let report = run_attack(&log, &AttackOptions::default())?;
    let m = &report.metrics;
    println!("constant M: {}", m.spec1);
    println!("constant-v sets: {:?}", m.spec3_sets);
    println!("||v|| constant on: {:?}", report.spec_report.norm_sets);
    println!("anchored at k = {} in {:?}", m.anchor_step, m.k_used);
    println!("k     u1        u1^       u2        u2^");
    for i in &report.inputs {
        println!(
            "{:<4} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            i.k, i.truth[0], i.estimate[0], i.truth[1], i.estimate[1]
        );
    }
    println!("max |error| = {:.2e}", m.max_abs_error);
    if m.max_abs_error > 1e-3 {
        return Err("inputs not recovered".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

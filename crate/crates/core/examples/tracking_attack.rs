// The circular reference: the cloud spots the period from the
// invariants, anchors a wrong `z^* = 0` and still recovers the input
// signals up to a constant offset.

use rtqp::harness::{run_attack, run_scenario, AttackOptions, KSelection, ScenarioConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (log, _) = run_scenario(&ScenarioConfig::tracking(60, 1))?;
    let report = run_attack(
        &log,
        &AttackOptions {
            k_selection: KSelection::Containing(10),
            ..Default::default()
        },
    )?;
    let m = &report.metrics;
    println!("period estimate: {:?}", m.period_estimate);
    println!("set used: {:?}, anchor k = {}", m.k_used, m.anchor_step);
    println!("offset per component: {:?}", m.offset);
    println!("offset spread (std):  {:?}", m.offset_std);
    let anchor_truth = &log.records[m.anchor_step].z_star;
    println!(
        "true input at the anchor: ({:.4}, {:.4})",
        anchor_truth[0], anchor_truth[1]
    );
    if m.offset_std.iter().any(|&s| s > 1e-3) {
        return Err("offset is not constant".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

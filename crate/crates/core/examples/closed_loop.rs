// Run the encrypted MPC loop and write the episode files.

use rtqp::harness::{run_scenario, ScenarioConfig};
use rtqp::mpc::PlantModel;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("rtqp-closed-loop-example");
    let mut cfg = ScenarioConfig::tracking(60, 3);
    cfg.output_dir = Some(dir.clone());
    let (log, files) = run_scenario(&cfg)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    let model = PlantModel::robot();
    for r in log.records.iter().step_by(10) {
        let y = model.output(&r.x);
        println!(
            "k = {:>2}: y = ({:>7.3}, {:>7.3})  ref = ({:>7.3}, {:>7.3})  u = ({:>6.3}, {:>6.3})",
            r.k, y[0], y[1], r.y_ref[0], r.y_ref[1], r.u[0], r.u[1]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

// Box constraints on the inputs put `[I; -I]` on top of `G`, so the top
// block of `G~ = G R` is the key itself.

use rtqp::attack::structure_guess;
use rtqp::harness::{run_scenario, ScenarioConfig};
use rtqp::numerics::rel_diff;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (log, _) = run_scenario(&ScenarioConfig::setpoint(3, 5))?;
    for r in &log.records {
        let g = structure_guess(&r.ciphertext)?;
        let key_err = rel_diff(&g.r_mat, &r.key.r_mat);
        let h_err = rel_diff(&g.h, &r.plaintext.h);
        let g_err = rel_diff(&g.g, &r.plaintext.g);
        println!("k = {}: key {key_err:.1e}, H {h_err:.1e}, G {g_err:.1e}", r.k);
        if key_err > 1e-9 || h_err > 1e-6 || g_err > 1e-6 {
            return Err(format!("step {} not recovered", r.k).into());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

// The primal active-set solver and the dual pivoting solver reach the
// same multipliers by unrelated routes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtqp::harness::streams::random_instance;
use rtqp::numerics::{solve_dual_qp, solve_qp};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..5 {
        let p = random_instance(&mut rng, 8, 30, k);
        let primal = solve_qp(&p.h, &p.g, &p.f, &p.e)?;
        let dual = solve_dual_qp(&p.h, &p.g, &p.f, &p.e)?;
        let gap = (&primal.dual - &dual).amax();
        println!(
            "instance {k}: {} active, {} iterations, KKT residual {:.1e}, multiplier gap {gap:.1e}",
            primal.active_set.len(),
            primal.iterations,
            primal.kkt_residual
        );
        if gap > 1e-6 {
            return Err("solvers disagree".into());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

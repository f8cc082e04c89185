// A consistent guess from the invariant alone, and how every other
// consistent guess (including the truth) is one composition away.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtqp::attack::svd_guess;
use rtqp::cipher::{check_consistency, compose_guess, encrypt, keygen, Guess};
use rtqp::harness::streams::random_instance;
use rtqp::numerics::rel_diff;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let plain = random_instance(&mut rng, 5, 15, 0);
    let key = keygen(5, 15, -10.0, 10.0, false, 11)?;
    let c = encrypt(&plain, &key)?;

    let guess = svd_guess(&c)?;
    let res = check_consistency(&guess, &c)?;
    println!(
        "svd guess consistent: {} (residuals {:?})",
        res.consistent, res.residuals
    );

    // The truth is the composition with R~ = R^ R^-1, r~ = r^ - R~ r.
    let truth = Guess::truth(&plain, &key);
    let r_tilde = &guess.r_mat * key.r_mat.clone().try_inverse().ok_or("singular key")?;
    let rv_tilde = &guess.r_vec - &r_tilde * &key.r_vec;
    let recovered = compose_guess(&guess, &r_tilde, &rv_tilde)?;
    let err = rel_diff(&recovered.h, &truth.h).max(rel_diff(&recovered.g, &truth.g));
    println!("composed guess reaches (H, G) with error {err:.2e}");
    if !res.consistent || err > 1e-6 {
        return Err("guess or composition failed".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

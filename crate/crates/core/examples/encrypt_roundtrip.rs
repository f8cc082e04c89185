// Encrypt a random QP, let the "cloud" solve the transformed problem and
// map its answer back.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtqp::cipher::{decrypt_solution, encrypt, keygen};
use rtqp::harness::streams::random_instance;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let plain = random_instance(&mut rng, 10, 60, 0);
    let key = keygen(10, 60, -10.0, 10.0, true, 7)?;
    let cipher = encrypt(&plain, &key)?;

    let y = cipher.solve()?.primal;
    let z = decrypt_solution(&y, &key)?;
    let truth = plain.solve()?.primal;

    let err = (&z - &truth).amax();
    println!("l = 10, q = 60, permuted rows: {}", cipher.permuted);
    println!("|z - z*|_inf = {err:.2e}");
    if err > 1e-6 {
        return Err(format!("round trip error {err:e}").into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

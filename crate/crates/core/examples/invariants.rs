// The same plaintext under two keys: the ciphertexts differ, but
// `G~ H~^-1 G~^T` and `G~ H~^-1 f~ + e~` do not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtqp::attack::invariants;
use rtqp::cipher::{encrypt, keygen};
use rtqp::harness::streams::random_instance;
use rtqp::numerics::{rel_diff, rel_diff_vec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let plain = random_instance(&mut rng, 6, 20, 0);
    let a = encrypt(&plain, &keygen(6, 20, -10.0, 10.0, false, 1)?)?;
    let b = encrypt(&plain, &keygen(6, 20, -10.0, 10.0, false, 2)?)?;

    println!("ciphertext H differs by {:.2e} (relative)", rel_diff(&a.h, &b.h));
    let (ia, ib) = (invariants(&a)?, invariants(&b)?);
    let dm = rel_diff(&ia.m, &ib.m);
    let dv = rel_diff_vec(&ia.v, &ib.v);
    println!("invariant M differs by {dm:.2e}, v by {dv:.2e}");
    if dm > 1e-8 || dv > 1e-8 {
        return Err("invariants moved with the key".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

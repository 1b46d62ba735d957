//! Fixtures shared by the benchmarks.

use hdpbnc::{Dataset, Instance, Schema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows` instances over `attributes` ternary attributes and a binary
/// class that depends on the first three.
pub fn synthetic(attributes: usize, rows: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<Instance> = (0..rows)
        .map(|_| {
            let x: Vec<u32> = (0..attributes).map(|_| rng.random_range(0..3)).collect();
            let signal = x.iter().take(3).sum::<u32>() >= 3;
            let y = if rng.random_bool(0.85) { signal } else { !signal };
            Instance::new(x, y as u32)
        })
        .collect();
    Dataset::from_instances(Schema::categorical(&vec![3; attributes], 2), &instances).unwrap()
}

//! Fixtures shared by the benchmarks.

use gdd_core::{Rng, Tensor};

/// Uniform `[0, 1)` tensor drawn from `seed`.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.uniform()).collect(), shape).expect("shape matches data")
}

//! Shared inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semitrace::linalg::{CMatrix, C64};

/// Dense random Hermitian matrix with entries of order one.
pub fn random_hermitian(n: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let mut h = g.clone();
    h.add_assign_scaled(C64::new(1.0, 0.0), &g.adjoint());
    h
}

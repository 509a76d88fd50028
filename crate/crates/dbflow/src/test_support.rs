//! Seeded random operators shared across module tests.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::operator::{Hermitian, Operator};

pub fn random_operator(dim: usize, seed: u64) -> Operator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = Array2::<C64>::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..dim {
            mat[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    Operator::new(mat).unwrap()
}

/// `(G + G^dag)/2` of a random matrix; exactly Hermitian entrywise.
pub fn random_hermitian(dim: usize, seed: u64) -> Hermitian {
    let a = random_operator(dim, seed);
    let sym = a.add(&a.dagger()).unwrap().scaled(C64::new(0.5, 0.0));
    Hermitian::with_default_tol(sym).unwrap()
}

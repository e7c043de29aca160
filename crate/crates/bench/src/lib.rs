//! Deterministic fixtures shared by the kernel benchmarks.

use oulab::numkit::Matrix;
use oulab::poly::Polynomial;
use oulab::{DerivedModel, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A non-normal Hurwitz drift of size `d`: `-2I` plus a strictly upper
/// triangular perturbation.
pub fn drift(d: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
    Matrix::from_fn(d, d, |a, b| match a.cmp(&b) {
        std::cmp::Ordering::Equal => -2.0,
        std::cmp::Ordering::Less => rng.random_range(-1.0..1.0),
        std::cmp::Ordering::Greater => 0.0,
    })
}

pub fn model(d: usize) -> DerivedModel {
    let spec = ModelSpec::new("bench", drift(d), Matrix::identity(d, d)).expect("valid fixture");
    DerivedModel::derive(&spec).expect("Hurwitz fixture")
}

pub fn polynomial(d: usize, degree: u32) -> Polynomial {
    Polynomial::random(d, degree, &mut ChaCha8Rng::seed_from_u64(7))
}

/// SPD matrix `G Gᵀ + I/2`.
pub fn spd(d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + Matrix::identity(d, d) * 0.5
}

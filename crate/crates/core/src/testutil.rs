//! Shared fixtures for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::model::{Dims, ModelState};
use crate::simplex::SimplexPoint;

/// Random coefficients with `m = 2`; no allocations.
pub(crate) fn random_state(rng: &mut ChaCha8Rng, n: usize, k: u32, p: usize) -> ModelState {
    let dims = Dims { components: n, m: 2, p };
    let mut s = ModelState::zeros(dims, k);
    let mut normal = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    for v in s.weights.intercept.iter_mut() {
        *v = normal(1.5);
    }
    for v in s.weights.slopes.iter_mut() {
        *v = normal(2.0);
    }
    for v in s.atoms.intercept.iter_mut() {
        *v = normal(1.5);
    }
    for v in s.atoms.slopes.iter_mut() {
        *v = normal(2.0);
    }
    s
}

/// Interior responses spread over the simplex with uniform covariates.
pub(crate) fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
    let mut data = Dataset::new(2, p);
    for _ in 0..n {
        let a: f64 = rng.random_range(0.05..0.85);
        let b: f64 = rng.random_range(0.05..(0.95 - a));
        let x = (0..p).map(|_| rng.random::<f64>()).collect();
        data.push(SimplexPoint::new(vec![a, b]).unwrap(), x).unwrap();
    }
    data
}

//! Univariate slice sampling with stepping-out and shrinkage.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSampler {
    /// Initial bracket width.
    pub width: f64,
    /// Maximum number of stepping-out expansions, split at random between
    /// the two ends of the bracket.
    pub max_steps: u32,
    /// Shrinkage proposals tried before the update is abandoned.
    pub max_shrinks: u32,
}

impl Default for SliceSampler {
    fn default() -> Self {
        Self { width: 1.0, max_steps: 10, max_shrinks: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDraw {
    pub value: f64,
    pub evaluations: u32,
    /// The update was abandoned and `value` is the starting point.
    pub failed: bool,
}

impl SliceSampler {
    /// One transition leaving the density `exp(ln_target)` invariant.
    pub fn draw<R, F>(&self, x0: f64, mut ln_target: F, rng: &mut R) -> SliceDraw
    where
        R: Rng + ?Sized,
        F: FnMut(f64) -> f64,
    {
        let mut evaluations = 1;
        let f0 = ln_target(x0);
        if !f0.is_finite() {
            return SliceDraw { value: x0, evaluations, failed: true };
        }
        let exp: f64 = Exp1.sample(rng);
        let level = f0 - exp;

        let w = self.width;
        let mut left = x0 - w * rng.random::<f64>();
        let mut right = left + w;
        if self.max_steps > 0 {
            let mut left_steps = (self.max_steps as f64 * rng.random::<f64>()).floor() as u32;
            let mut right_steps = self.max_steps - 1 - left_steps.min(self.max_steps - 1);
            while left_steps > 0 && ln_target(left) > level {
                evaluations += 1;
                left -= w;
                left_steps -= 1;
            }
            evaluations += left_steps.min(1);
            while right_steps > 0 && ln_target(right) > level {
                evaluations += 1;
                right += w;
                right_steps -= 1;
            }
            evaluations += right_steps.min(1);
        }

        for _ in 0..self.max_shrinks {
            let candidate = left + (right - left) * rng.random::<f64>();
            evaluations += 1;
            if ln_target(candidate) > level {
                return SliceDraw { value: candidate, evaluations, failed: false };
            }
            if candidate < x0 {
                left = candidate;
            } else {
                right = candidate;
            }
        }
        SliceDraw { value: x0, evaluations, failed: true }
    }
}

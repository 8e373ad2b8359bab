//! Parametric Dirichlet regression baseline: `y | x ~ Dir(exp(B x))` with
//! independent normal priors on the coefficients, fitted by coordinate-wise
//! slice sampling on zero-adjusted responses.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::DensityGrid;
use crate::sampler::{chain_rng, ChainConfig, Diagnostics, PosteriorSamples};
use crate::simplex::{SimplexGrid, SimplexPoint};

/// Shrinks a composition towards the barycenter so that no part is zero:
/// each of the `D = m + 1` parts becomes `(y_d (n - 1) + 1 / D) / n`,
/// evaluated as `(y_d (n - 1) D + 1) / (n D)` so that integer-valued
/// inputs give correctly rounded results.
pub fn smithson_transform(y: &SimplexPoint, n: usize) -> Result<SimplexPoint> {
    if n < 2 {
        return Err(Error::Domain("zero adjustment needs a sample size of at least 2".into()));
    }
    let d = (y.dim() + 1) as f64;
    let nf = n as f64;
    let coords = y.coords().iter().map(|v| (v * (nf - 1.0) * d + 1.0) / (nf * d)).collect();
    SimplexPoint::new(coords)
}

/// Applies [`smithson_transform`] to every response with `n` the sample
/// size.
pub fn transform_dataset(data: &Dataset) -> Result<Dataset> {
    let n = data.len();
    let y = data.responses().iter().map(|y| smithson_transform(y, n)).collect::<Result<Vec<_>>>()?;
    Dataset::from_parts(data.m(), data.p(), y, data.covariates().map(<[f64]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdrVariant {
    /// One coefficient vector per part, `m + 1` in total.
    Full,
    /// `m` coefficient vectors; the last Dirichlet parameter is fixed at one.
    FixedLast,
}

impl PdrVariant {
    fn free_parts(self, m: usize) -> usize {
        match self {
            PdrVariant::Full => m + 1,
            PdrVariant::FixedLast => m,
        }
    }
}

/// Coefficients `beta[l * (p + 1) + r]`; `r = 0` is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdrState {
    pub variant: PdrVariant,
    pub m: usize,
    pub p: usize,
    pub beta: Vec<f64>,
}

impl PdrState {
    pub fn zeros(variant: PdrVariant, m: usize, p: usize) -> Self {
        Self { variant, m, p, beta: vec![0.0; variant.free_parts(m) * (p + 1)] }
    }

    pub fn coefficients(&self, l: usize) -> &[f64] {
        let w = self.p + 1;
        &self.beta[l * w..(l + 1) * w]
    }

    /// `ln gamma_l(x)` for every part `l = 0..=m`.
    pub fn ln_params(&self, x: &[f64]) -> Vec<f64> {
        (0..=self.m)
            .map(|l| {
                if l < self.variant.free_parts(self.m) {
                    let b = self.coefficients(l);
                    b[0] + b[1..].iter().zip(x).map(|(u, v)| u * v).sum::<f64>()
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn params(&self, x: &[f64]) -> Vec<f64> {
        self.ln_params(x).into_iter().map(f64::exp).collect()
    }
}

fn ln_dir_from_params(ln_y: &[f64], gamma: &[f64]) -> f64 {
    let total: f64 = gamma.iter().sum();
    let mut value = ln_gamma(total);
    for (g, ly) in gamma.iter().zip(ln_y) {
        value += (g - 1.0) * ly - ln_gamma(*g);
    }
    value
}

/// Per-observation Dirichlet log-likelihoods. Responses must be interior.
pub fn pdr_observation_log_likelihoods(data: &Dataset, state: &PdrState) -> Result<Vec<f64>> {
    check_dims(data, state)?;
    (0..data.len())
        .map(|i| {
            let y = data.y(i);
            if !y.is_interior() {
                return Err(Error::Domain(format!("observation {} is on the boundary; transform it first", i + 1)));
            }
            Ok(ln_dir_from_params(&y.log_parts(), &state.params(data.x(i))))
        })
        .collect()
}

pub fn pdr_log_likelihood(data: &Dataset, state: &PdrState) -> Result<f64> {
    Ok(pdr_observation_log_likelihoods(data, state)?.iter().sum())
}

fn check_dims(data: &Dataset, state: &PdrState) -> Result<()> {
    if data.m() != state.m || data.p() != state.p {
        return Err(Error::Domain(format!(
            "state has m={}, p={} but data has m={}, p={}",
            state.m,
            state.p,
            data.m(),
            data.p()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdrOptions {
    pub variant: PdrVariant,
    pub prior_variance: f64,
    /// Apply the zero adjustment before fitting.
    pub transform: bool,
}

impl Default for PdrOptions {
    fn default() -> Self {
        Self { variant: PdrVariant::Full, prior_variance: 100.0, transform: true }
    }
}

/// Design rank check on `[1, X]`.
fn check_design(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Ok(());
    }
    let p = data.p() + 1;
    let mut gram = nalgebra::DMatrix::zeros(p, p);
    for x in data.covariates() {
        let row = nalgebra::DVector::from_iterator(p, std::iter::once(1.0).chain(x.iter().copied()));
        gram += &row * row.transpose();
    }
    if nalgebra::Cholesky::new(gram).is_none() {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Slice-sampling fit. Log-likelihoods are recorded on the (possibly
/// transformed) responses used in the fit.
pub fn fit_pdr(data: &Dataset, options: &PdrOptions, config: &ChainConfig) -> Result<PosteriorSamples<PdrState>> {
    config.validate()?;
    if !(options.prior_variance > 0.0) {
        return Err(Error::Config("pdr prior variance must be positive".into()));
    }
    check_design(data)?;
    let fitted = if options.transform && data.len() >= 2 { transform_dataset(data)? } else { data.clone() };
    let (n, m, p) = (fitted.len(), fitted.m(), fitted.p());
    let ln_y: Vec<Vec<f64>> = fitted.responses().iter().map(|y| y.log_parts()).collect();
    if ln_y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("responses must be interior; enable the transform".into()));
    }
    let mut rng = chain_rng(config.seed, 0);
    let slice = config.slice_sampler();
    let mut state = PdrState::zeros(options.variant, m, p);
    let free = options.variant.free_parts(m);
    let w = p + 1;
    // cached Dirichlet parameters gamma[i][l]
    let mut gamma: Vec<Vec<f64>> = (0..n).map(|i| state.params(fitted.x(i))).collect();
    let mut diag = Diagnostics::default();
    let mut samples = PosteriorSamples::new();
    let covariate = |i: usize, r: usize| if r == 0 { 1.0 } else { fitted.x(i)[r - 1] };

    for iter in 0..config.n_iter {
        for l in 0..free {
            for r in 0..w {
                let v0 = state.beta[l * w + r];
                let target = |v: f64| {
                    let delta = v - v0;
                    let mut total = -0.5 * v * v / options.prior_variance;
                    for i in 0..n {
                        let g = &gamma[i];
                        let new_l = g[l] * (delta * covariate(i, r)).exp();
                        let sum: f64 = g.iter().sum::<f64>() - g[l] + new_l;
                        total += ln_gamma(sum) - ln_gamma(new_l) + (new_l - 1.0) * ln_y[i][l];
                    }
                    total
                };
                let draw = slice.draw(v0, target, &mut rng);
                diag.slice_updates += 1;
                diag.slice_evaluations += draw.evaluations as u64;
                diag.slice_failures += draw.failed as u64;
                let delta = draw.value - v0;
                if delta != 0.0 {
                    for (i, g) in gamma.iter_mut().enumerate() {
                        g[l] *= (delta * covariate(i, r)).exp();
                    }
                }
                state.beta[l * w + r] = draw.value;
            }
        }
        // refresh the cache from the coefficients to stop rounding drift
        for (i, g) in gamma.iter_mut().enumerate() {
            *g = state.params(fitted.x(i));
        }
        if iter >= config.burn_in && (iter - config.burn_in + 1) % config.thin == 0 {
            let loglik: Vec<f64> = (0..n).map(|i| ln_dir_from_params(&ln_y[i], &gamma[i])).collect();
            let ln_prior: f64 = state
                .beta
                .iter()
                .map(|b| -0.5 * ((2.0 * std::f64::consts::PI * options.prior_variance).ln() + b * b / options.prior_variance))
                .sum();
            let lp = ln_prior + loglik.iter().sum::<f64>();
            if !lp.is_finite() {
                return Err(Error::Domain(format!("non-finite log posterior at sweep {iter}")));
            }
            samples.states.push(state.clone());
            samples.iterations.push(iter + 1);
            samples.loglik.push(loglik);
            samples.log_posterior.push(lp);
        }
    }
    samples.diagnostics = diag;
    Ok(samples)
}

/// Posterior predictive density `mean_t Dir(y | exp(B_t x))` on a grid.
pub fn pdr_predictive_density(states: &[PdrState], x_grid: &[Vec<f64>], y_grid: &SimplexGrid) -> Result<DensityGrid> {
    let first = states.first().ok_or_else(|| Error::Domain("no retained states".into()))?;
    if y_grid.points().iter().any(|y| y.dim() != first.m) {
        return Err(Error::GridMismatch(format!("response grid dimension differs from m={}", first.m)));
    }
    if x_grid.iter().any(|x| x.len() != first.p) {
        return Err(Error::GridMismatch(format!("covariate grid entries must have p={}", first.p)));
    }
    let ln_y: Vec<Vec<f64>> = y_grid.points().iter().map(|y| y.log_parts()).collect();
    let scale = 1.0 / states.len() as f64;
    let slices: Vec<Vec<f64>> = x_grid
        .par_iter()
        .map(|x| {
            let params: Vec<Vec<f64>> = states.iter().map(|s| s.params(x)).collect();
            ln_y.iter()
                .map(|ly| params.iter().map(|g| ln_dir_from_params(ly, g).exp()).sum::<f64>() * scale)
                .collect()
        })
        .collect();
    DensityGrid::new(x_grid.to_vec(), y_grid.clone(), slices.concat())
}

/// Draws a dataset from a known regression with `x ~ Uniform(0, 1)^p`.
pub fn simulate_pdr<R: Rng + ?Sized>(state: &PdrState, n: usize, rng: &mut R) -> Result<Dataset> {
    let mut data = Dataset::new(state.m, state.p);
    for _ in 0..n {
        let x: Vec<f64> = (0..state.p).map(|_| rng.random::<f64>()).collect();
        let y = crate::simgen::sample_dirichlet(&state.params(&x), rng)?;
        data.push(y, x)?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{dirichlet_log_density, DirichletParam};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transform_hand_example() {
        // full composition (0, 1, 0), n = 9, D = 3
        let y = SimplexPoint::new(vec![0.0, 1.0]).unwrap();
        let t = smithson_transform(&y, 9).unwrap();
        assert_eq!(t.coords(), &[1.0 / 27.0, 25.0 / 27.0]);
        assert!((t.last() - 1.0 / 27.0).abs() < 1e-15);
        let bary = SimplexPoint::new(vec![1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let t = smithson_transform(&bary, 57).unwrap();
        for v in t.coords() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let corner = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        let t = smithson_transform(&corner, 10).unwrap();
        assert!((t.coords()[1] - 1.0 / 30.0).abs() < 1e-15);
        assert!(t.is_interior());
    }

    #[test]
    fn transform_keeps_unit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a: f64 = rng.random();
            let b: f64 = rng.random::<f64>() * (1.0 - a);
            let t = smithson_transform(&SimplexPoint::new(vec![a, b]).unwrap(), rng.random_range(2..1000)).unwrap();
            assert!((t.full().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_coefficients_give_the_uniform_dirichlet() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = crate::testutil::random_dataset(&mut rng, 7, 1);
        let state = PdrState::zeros(PdrVariant::Full, 2, 1);
        let ll = pdr_log_likelihood(&data, &state).unwrap();
        assert!((ll - 7.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn barycenter_with_symmetric_parameters() {
        let mut data = Dataset::new(2, 1);
        data.push(SimplexPoint::new(vec![1.0 / 3.0, 1.0 / 3.0]).unwrap(), vec![0.0]).unwrap();
        let mut state = PdrState::zeros(PdrVariant::Full, 2, 1);
        for l in 0..3 {
            state.beta[l * 2] = 2f64.ln();
        }
        let want =
            dirichlet_log_density(data.y(0), &DirichletParam::new(vec![2.0, 2.0, 2.0]).unwrap()).unwrap();
        assert!((pdr_log_likelihood(&data, &state).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn random_coefficients_match_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = crate::testutil::random_dataset(&mut rng, 5, 2);
        for variant in [PdrVariant::Full, PdrVariant::FixedLast] {
            let mut state = PdrState::zeros(variant, 2, 2);
            state.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.5));
            let mut want = 0.0;
            for i in 0..5 {
                let x = data.x(i);
                let alpha: Vec<f64> = (0..3)
                    .map(|l| {
                        if variant == PdrVariant::FixedLast && l == 2 {
                            1.0
                        } else {
                            let b = &state.beta[l * 3..l * 3 + 3];
                            (b[0] + b[1] * x[0] + b[2] * x[1]).exp()
                        }
                    })
                    .collect();
                want += dirichlet_log_density(data.y(i), &DirichletParam::new(alpha).unwrap()).unwrap();
            }
            assert!((pdr_log_likelihood(&data, &state).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn no_data_recovers_the_prior() {
        let data = Dataset::new(2, 1);
        let config = ChainConfig { n_iter: 20_000, burn_in: 0, thin: 1, ..ChainConfig::desk() };
        let samples = fit_pdr(&data, &PdrOptions::default(), &config).unwrap();
        let draws: Vec<f64> = samples.states.iter().map(|s| s.beta[3]).collect();
        let t = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / t;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
        // slice draws from N(0, 100) starting at 0 are nearly independent
        assert!(mean.abs() < 3.0 * (100.0 / t).sqrt() * 2.0, "{mean}");
        assert!((var / 100.0 - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn predictive_density_of_one_draw_is_the_dirichlet() {
        let mut state = PdrState::zeros(PdrVariant::Full, 2, 1);
        state.beta = vec![0.5, 1.0, 1.2, -0.4, 0.8, 0.0];
        let y_grid = SimplexGrid::centroid(0.01).unwrap();
        let x_grid = vec![vec![0.3], vec![0.9]];
        let grid = pdr_predictive_density(std::slice::from_ref(&state), &x_grid, &y_grid).unwrap();
        for (j, x) in x_grid.iter().enumerate() {
            let alpha = DirichletParam::new(state.params(x)).unwrap();
            for (v, y) in grid.slice(j).iter().zip(y_grid.points()) {
                let want = dirichlet_log_density(y, &alpha).unwrap().exp();
                assert!((v - want).abs() <= 1e-12 * want.max(1.0));
            }
            assert!((grid.slice_mass(j) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = crate::testutil::random_dataset(&mut rng, 30, 1);
        let config = ChainConfig { n_iter: 200, burn_in: 100, thin: 10, ..ChainConfig::desk() };
        let a = fit_pdr(&data, &PdrOptions::default(), &config).unwrap();
        let b = fit_pdr(&data, &PdrOptions::default(), &config).unwrap();
        assert_eq!(a, b);
        assert!(a.log_posterior.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn boundary_data_needs_the_transform() {
        let mut data = Dataset::new(2, 1);
        data.push(SimplexPoint::new(vec![0.0, 0.5]).unwrap(), vec![0.2]).unwrap();
        data.push(SimplexPoint::new(vec![0.3, 0.5]).unwrap(), vec![0.7]).unwrap();
        let config = ChainConfig { n_iter: 20, burn_in: 10, thin: 1, ..ChainConfig::desk() };
        let raw = PdrOptions { transform: false, ..PdrOptions::default() };
        assert!(fit_pdr(&data, &raw, &config).is_err());
        assert!(fit_pdr(&data, &PdrOptions::default(), &config).is_ok());
    }
}

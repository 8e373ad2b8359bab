//! The dependent MBP regression model: link functions, linear predictors,
//! truncated stick-breaking weights, spike-and-slab priors and conditional
//! density evaluation.
//!
//! One [`ModelState`] covers all four dependency structures. The selection
//! indicators only switch the prior covariance of the slope vectors between
//! a concentrated spike and a diffuse slab; the stored slopes are always used
//! when the density is evaluated.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mbp::{alpha_of, ceil_coord, DegreeK, LatticeWeights, K_MAX};
use crate::simplex::{dirichlet_log_density, log_sum_exp, LnGammaTable, SimplexPoint};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Logistic link for the stick-breaking fractions.
pub fn link_weight(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln(link_weight(a))`.
#[inline]
pub fn ln_link_weight(a: f64) -> f64 {
    -softplus(-a)
}

/// `ln(1 - link_weight(a))`.
#[inline]
pub fn ln_link_weight_complement(a: f64) -> f64 {
    -softplus(a)
}

#[inline]
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// Additive-logistic link `(e^b_1, ..., e^b_m) / (1 + sum e^b_l)`.
pub fn link_atom(b: &[f64]) -> SimplexPoint {
    let mut theta = vec![0.0; b.len()];
    atom_into(b, &mut theta);
    SimplexPoint::new(theta).expect("softmax output lies in the simplex")
}

#[inline]
pub(crate) fn atom_into(b: &[f64], theta: &mut [f64]) {
    let shift = b.iter().copied().fold(0.0, f64::max);
    let mut denom = (-shift).exp();
    for (t, &bl) in theta.iter_mut().zip(b) {
        *t = (bl - shift).exp();
        denom += *t;
    }
    for t in theta.iter_mut() {
        *t /= denom;
    }
}

/// Inverse of [`link_atom`] on the open simplex.
pub fn link_atom_inv(theta: &SimplexPoint) -> Result<Vec<f64>> {
    if !theta.is_interior() {
        return Err(Error::Domain("atom inverse needs an interior point".into()));
    }
    let ln_last = theta.last().ln();
    Ok(theta.coords().iter().map(|t| t.ln() - ln_last).collect())
}

/// Truncated stick-breaking weights. The last fraction is treated as one, so
/// the final weight absorbs the remaining mass and the weights summed in
/// order are exactly one.
pub fn stick_weights(fractions: &[f64]) -> Vec<f64> {
    let n = fractions.len();
    let mut weights = Vec::with_capacity(n);
    if n == 0 {
        return weights;
    }
    let mut remaining = 1.0;
    let mut assigned = 0.0;
    for &v in &fractions[..n - 1] {
        // capping at the unassigned mass keeps every partial sum <= 1
        let w = (v * remaining).min(1.0 - assigned);
        remaining *= 1.0 - v;
        assigned += w;
        weights.push(w);
    }
    weights.push((1.0 - assigned).max(0.0));
    weights
}

/// Selection indicators `(gamma_eta, gamma_z)`; `true` selects the slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionIndicators {
    pub eta: bool,
    pub z: bool,
}

impl SelectionIndicators {
    /// Categories in prior order: fully dependent, single-weights,
    /// single-atoms, predictor independent.
    pub const CATEGORIES: [SelectionIndicators; 4] = [
        SelectionIndicators { eta: true, z: true },
        SelectionIndicators { eta: false, z: true },
        SelectionIndicators { eta: true, z: false },
        SelectionIndicators { eta: false, z: false },
    ];

    pub fn category(self) -> usize {
        match (self.eta, self.z) {
            (true, true) => 0,
            (false, true) => 1,
            (true, false) => 2,
            (false, false) => 3,
        }
    }

    pub fn from_category(c: usize) -> Self {
        Self::CATEGORIES[c]
    }

    pub fn label(self) -> &'static str {
        match self.category() {
            0 => "(1,1)",
            1 => "(0,1)",
            2 => "(1,0)",
            _ => "(0,0)",
        }
    }
}

/// Prior probabilities `(1/t^2, (t-1)/(2t^2), (t-1)/(2t^2), (t-1)/t)`.
pub fn selection_prior(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [1.0 / t2, (t - 1.0) / (2.0 * t2), (t - 1.0) / (2.0 * t2), (t - 1.0) / t]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Poisson rate of the polynomial degree.
    pub lambda: f64,
    pub sigma2_eta: f64,
    pub sigma2_z: f64,
    pub tau1_eta: f64,
    pub tau2_eta: f64,
    pub tau1_z: f64,
    pub tau2_z: f64,
    /// Selection prior parameter, `t > 1`.
    pub t: f64,
    /// Stick-breaking truncation level `N`.
    pub truncation: usize,
    pub k_max: u32,
}

impl PriorConfig {
    /// `t = 2`: independent model a priori at 0.5, fully dependent at 0.25.
    pub fn prior_i() -> Self {
        Self {
            lambda: 25.0,
            sigma2_eta: 100.0,
            sigma2_z: 100.0,
            tau1_eta: 0.01,
            tau2_eta: 100.0,
            tau1_z: 0.01,
            tau2_z: 100.0,
            t: 2.0,
            truncation: 20,
            k_max: K_MAX,
        }
    }

    /// `t = 10`: strongly favours parsimonious structures.
    pub fn prior_ii() -> Self {
        Self { t: 10.0, ..Self::prior_i() }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "prior-I" | "prior-i" | "I" => Ok(Self::prior_i()),
            "prior-II" | "prior-ii" | "II" => Ok(Self::prior_ii()),
            other => Err(Error::Config(format!("unknown prior preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("sigma2_eta", self.sigma2_eta),
            ("sigma2_z", self.sigma2_z),
            ("tau1_eta", self.tau1_eta),
            ("tau2_eta", self.tau2_eta),
            ("tau1_z", self.tau1_z),
            ("tau2_z", self.tau2_z),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior.{name} must be a positive number, got {v}")));
            }
        }
        if self.tau1_eta > self.tau2_eta || self.tau1_z > self.tau2_z {
            return Err(Error::Config("prior spike scale must not exceed the slab scale".into()));
        }
        if !(self.t > 1.0) {
            return Err(Error::Config(format!("prior.t must exceed 1, got {}", self.t)));
        }
        if self.truncation == 0 {
            return Err(Error::Config("prior.truncation must be >= 1".into()));
        }
        if self.k_max == 0 || self.k_max > 10_000 {
            return Err(Error::Config(format!("prior.k_max out of range: {}", self.k_max)));
        }
        Ok(())
    }

    pub fn selection_prior(&self) -> [f64; 4] {
        selection_prior(self.t)
    }

    pub fn tau_eta(&self, slab: bool) -> f64 {
        if slab {
            self.tau2_eta
        } else {
            self.tau1_eta
        }
    }

    pub fn tau_z(&self, slab: bool) -> f64 {
        if slab {
            self.tau2_z
        } else {
            self.tau1_z
        }
    }
}

/// Log pmf of `Poisson(lambda)` truncated to `k >= 1`.
pub fn truncated_poisson_ln_pmf(k: u32, lambda: f64) -> f64 {
    let kf = k as f64;
    kf * lambda.ln() - lambda - statrs::function::gamma::ln_gamma(kf + 1.0) - (-(-lambda).exp()).ln_1p()
}

/// Zellner-type slope covariance `tau (X'X)^{-1}`, stored through the Gram
/// matrix `X'X` of the design without intercept.
#[derive(Debug, Clone)]
pub struct SlopePrior {
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    ln_det_gram: f64,
}

impl SlopePrior {
    /// Builds `X'X` from design rows of length `p`.
    pub fn from_design<'a, I>(rows: I, p: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut gram = DMatrix::zeros(p, p);
        for row in rows {
            let x = DVector::from_column_slice(row);
            gram += &x * x.transpose();
        }
        Self::from_gram(gram)
    }

    pub fn from_gram(gram: DMatrix<f64>) -> Result<Self> {
        if gram.nrows() != gram.ncols() {
            return Err(Error::Domain("Gram matrix must be square".into()));
        }
        let chol = Cholesky::new(gram.clone()).ok_or(Error::RankDeficient)?;
        let ln_det_gram = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !ln_det_gram.is_finite() {
            return Err(Error::RankDeficient);
        }
        Ok(Self { gram, chol, ln_det_gram })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `beta' X'X beta`.
    pub fn quadratic(&self, beta: &[f64]) -> f64 {
        let p = self.dim();
        let mut q = 0.0;
        for r in 0..p {
            for c in 0..p {
                q += beta[r] * self.gram[(r, c)] * beta[c];
            }
        }
        q
    }

    /// `ln N_p(beta | 0, tau (X'X)^{-1})`.
    pub fn ln_density(&self, beta: &[f64], tau: f64) -> f64 {
        let p = self.dim() as f64;
        -0.5 * p * (LN_2PI + tau.ln()) + 0.5 * self.ln_det_gram - 0.5 * self.quadratic(beta) / tau
    }

    /// A draw from `N_p(0, tau (X'X)^{-1})`.
    pub fn sample<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> Vec<f64> {
        let p = self.dim();
        let eps = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // X'X = L L' so L'^{-1} eps has covariance (X'X)^{-1}
        let solved = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&eps)
            .expect("Cholesky factor is nonsingular");
        solved.iter().map(|v| v * tau.sqrt()).collect()
    }
}

/// Coefficients of the stick-breaking linear predictors
/// `eta_j(x) = intercept_j + x' slopes_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCoeffs {
    /// `N` intercepts.
    pub intercept: Vec<f64>,
    /// `N x p`, row-major by component.
    pub slopes: Vec<f64>,
}

/// Coefficients of the atom linear predictors
/// `z_jl(x) = intercept_jl + x' slopes_jl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomCoeffs {
    /// `N x m`.
    pub intercept: Vec<f64>,
    /// `N x m x p`.
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub components: usize,
    pub m: usize,
    pub p: usize,
}

/// One state of the Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub k: u32,
    pub dims: Dims,
    pub weights: WeightCoeffs,
    pub atoms: AtomCoeffs,
    pub gammas: SelectionIndicators,
    /// Zero-based component memberships, one per observation.
    pub allocations: Vec<usize>,
}

impl ModelState {
    /// All coefficients zero, `k` as given, no allocations.
    pub fn zeros(dims: Dims, k: u32) -> Self {
        let Dims { components: n, m, p } = dims;
        Self {
            k,
            dims,
            weights: WeightCoeffs { intercept: vec![0.0; n], slopes: vec![0.0; n * p] },
            atoms: AtomCoeffs { intercept: vec![0.0; n * m], slopes: vec![0.0; n * m * p] },
            gammas: SelectionIndicators { eta: true, z: true },
            allocations: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { components: n, m, p } = self.dims;
        if self.k == 0 {
            return Err(Error::Domain("state has k = 0".into()));
        }
        if n == 0 || m == 0 {
            return Err(Error::Domain("state needs N >= 1 and m >= 1".into()));
        }
        let shapes = [
            (self.weights.intercept.len(), n),
            (self.weights.slopes.len(), n * p),
            (self.atoms.intercept.len(), n * m),
            (self.atoms.slopes.len(), n * m * p),
        ];
        if shapes.iter().any(|(a, b)| a != b) {
            return Err(Error::Domain("coefficient arrays do not match the state dimensions".into()));
        }
        if self.allocations.iter().any(|&s| s >= n) {
            return Err(Error::Domain("allocation outside 1..N".into()));
        }
        let finite = self
            .weights
            .intercept
            .iter()
            .chain(&self.weights.slopes)
            .chain(&self.atoms.intercept)
            .chain(&self.atoms.slopes)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn degree(&self) -> DegreeK {
        DegreeK::new(self.k).expect("validated state has k >= 1")
    }

    pub fn weight_slopes(&self, j: usize) -> &[f64] {
        let p = self.dims.p;
        &self.weights.slopes[j * p..(j + 1) * p]
    }

    pub fn atom_slopes(&self, j: usize, l: usize) -> &[f64] {
        let (m, p) = (self.dims.m, self.dims.p);
        let start = (j * m + l) * p;
        &self.atoms.slopes[start..start + p]
    }

    /// `eta_j(x)`.
    #[inline]
    pub fn eta(&self, j: usize, x: &[f64]) -> f64 {
        let p = self.dims.p;
        let slopes = &self.weights.slopes[j * p..(j + 1) * p];
        self.weights.intercept[j] + dot(slopes, x)
    }

    /// `z_jl(x)`.
    #[inline]
    pub fn z(&self, j: usize, l: usize, x: &[f64]) -> f64 {
        let (m, p) = (self.dims.m, self.dims.p);
        let idx = j * m + l;
        self.atoms.intercept[idx] + dot(&self.atoms.slopes[idx * p..(idx + 1) * p], x)
    }

    pub fn z_vector(&self, j: usize, x: &[f64]) -> Vec<f64> {
        (0..self.dims.m).map(|l| self.z(j, l, x)).collect()
    }

    /// Atom `theta_j(x)`.
    pub fn atom(&self, j: usize, x: &[f64]) -> SimplexPoint {
        link_atom(&self.z_vector(j, x))
    }

    /// Stick fractions `V_j(x)`; the last one is fixed at one.
    pub fn fractions(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dims.components;
        (0..n)
            .map(|j| if j + 1 == n { 1.0 } else { link_weight(self.eta(j, x)) })
            .collect()
    }

    /// `w_j(x)` on the linear scale.
    pub fn stick_weights(&self, x: &[f64]) -> Vec<f64> {
        stick_weights(&self.fractions(x))
    }

    /// `ln w_j(x)` computed without leaving log space.
    pub fn ln_stick_weights(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dims.components;
        let mut out = Vec::with_capacity(n);
        let mut ln_remaining = 0.0;
        for j in 0..n {
            if j + 1 == n {
                out.push(ln_remaining);
            } else {
                let eta = self.eta(j, x);
                out.push(ln_remaining + ln_link_weight(eta));
                ln_remaining += ln_link_weight_complement(eta);
            }
        }
        out
    }

    /// Lattice cell `ceil(k theta_j(x))` of component `j`.
    pub fn cell(&self, j: usize, x: &[f64]) -> Vec<u32> {
        self.atom(j, x).coords().iter().map(|&t| ceil_coord(self.k, t)).collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `ln f_x(y) = ln sum_j w_j(x) dir(y | alpha(k, ceil(k theta_j(x))))`.
pub fn conditional_log_density(y: &SimplexPoint, x: &[f64], state: &ModelState) -> Result<f64> {
    check_inputs(y, x, state)?;
    let k = state.degree();
    let ln_w = state.ln_stick_weights(x);
    let mut terms = Vec::with_capacity(ln_w.len());
    for (j, lw) in ln_w.iter().enumerate() {
        let alpha = alpha_of(k, &state.cell(j, x))?;
        terms.push(lw + dirichlet_log_density(y, &alpha)?);
    }
    Ok(log_sum_exp(&terms))
}

/// Mixture weights on the fixed lattice: stick weights of atoms falling in
/// the same cell are pooled.
pub fn aggregated_weights(x: &[f64], state: &ModelState) -> Result<LatticeWeights> {
    if x.len() != state.dims.p {
        return Err(Error::Domain(format!("covariate has {} entries, model has p={}", x.len(), state.dims.p)));
    }
    let mut out = LatticeWeights::new();
    for (j, w) in state.stick_weights(x).into_iter().enumerate() {
        *out.entry(state.cell(j, x)).or_insert(0.0) += w;
    }
    Ok(out)
}

fn check_inputs(y: &SimplexPoint, x: &[f64], state: &ModelState) -> Result<()> {
    if y.dim() != state.dims.m {
        return Err(Error::Domain(format!("response has m={}, model has m={}", y.dim(), state.dims.m)));
    }
    if x.len() != state.dims.p {
        return Err(Error::Domain(format!("covariate has {} entries, model has p={}", x.len(), state.dims.p)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("covariate entries must be finite".into()));
    }
    if state.k == 0 {
        return Err(Error::Domain("state has k = 0".into()));
    }
    Ok(())
}

#[inline]
fn ln_normal(v: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * v * v / var
}

/// Per-category slope log densities `[ln p(slopes | c)]` for the four
/// selection categories, restricted to the components flagged in the masks.
/// `None` masks include every component.
pub fn slope_ln_likelihoods(
    state: &ModelState,
    prior: &PriorConfig,
    slope_prior: &SlopePrior,
    eta_mask: Option<&[bool]>,
    z_mask: Option<&[bool]>,
) -> [f64; 4] {
    let Dims { components: n, m, .. } = state.dims;
    let mut eta_ln = [0.0; 2];
    let mut z_ln = [0.0; 2];
    for (slot, slab) in [(0usize, false), (1, true)] {
        let tau_eta = prior.tau_eta(slab);
        let tau_z = prior.tau_z(slab);
        for j in 0..n {
            if eta_mask.is_none_or(|mask| mask[j]) {
                eta_ln[slot] += slope_prior.ln_density(state.weight_slopes(j), tau_eta);
            }
            if z_mask.is_none_or(|mask| mask[j]) {
                for l in 0..m {
                    z_ln[slot] += slope_prior.ln_density(state.atom_slopes(j, l), tau_z);
                }
            }
        }
    }
    let mut out = [0.0; 4];
    for (c, cat) in SelectionIndicators::CATEGORIES.iter().enumerate() {
        out[c] = eta_ln[cat.eta as usize] + z_ln[cat.z as usize];
    }
    out
}

/// Joint log prior of a state.
pub fn log_prior(state: &ModelState, prior: &PriorConfig, slope_prior: &SlopePrior) -> f64 {
    let mut total = 0.0;
    total += state.weights.intercept.iter().map(|&b| ln_normal(b, prior.sigma2_eta)).sum::<f64>();
    total += state.atoms.intercept.iter().map(|&b| ln_normal(b, prior.sigma2_z)).sum::<f64>();
    let c = state.gammas.category();
    total += slope_ln_likelihoods(state, prior, slope_prior, None, None)[c];
    total += prior.selection_prior()[c].ln();
    total += truncated_poisson_ln_pmf(state.k, prior.lambda);
    if state.k > prior.k_max {
        return f64::NEG_INFINITY;
    }
    total
}

/// Table-driven lattice Dirichlet evaluation used in the sampler hot loops.
#[derive(Debug, Clone)]
pub struct LatticeKernel {
    m: usize,
    table: LnGammaTable,
}

impl LatticeKernel {
    pub fn new(m: usize, k_max: u32) -> Self {
        Self { m, table: LnGammaTable::new(k_max + m as u32 + 1) }
    }

    /// `ln dir(y | alpha(k, ceil(k h(z))))` given the atom predictor `z` and
    /// the logs of all `m + 1` parts of `y`. `scratch` must hold `m` values.
    #[inline]
    pub fn ln_dir(&self, k: u32, z: &[f64], ln_y: &[f64], scratch: &mut [f64]) -> f64 {
        atom_into(z, scratch);
        self.ln_dir_theta(k, scratch, ln_y)
    }

    #[inline]
    pub fn ln_dir_theta(&self, k: u32, theta: &[f64], ln_y: &[f64]) -> f64 {
        let mut cell = [0u32; 8];
        if theta.len() <= cell.len() {
            for (c, &t) in cell.iter_mut().zip(theta) {
                *c = ceil_coord(k, t);
            }
            self.ln_dir_cell(k, &cell[..theta.len()], ln_y)
        } else {
            let cell: Vec<u32> = theta.iter().map(|&t| ceil_coord(k, t)).collect();
            self.ln_dir_cell(k, &cell, ln_y)
        }
    }

    /// `ln dir(y | alpha(k, cell))` for a cell already known to lie in `H0`.
    #[inline]
    pub fn ln_dir_cell(&self, k: u32, cell: &[u32], ln_y: &[f64]) -> f64 {
        let m = self.m as u32;
        let mut value = self.table.get(k + m);
        let mut used = 0u32;
        for (&a, &ly) in cell.iter().zip(ln_y) {
            used += a;
            value -= self.table.get(a);
            if a > 1 {
                value += (a - 1) as f64 * ly;
            }
        }
        let last = k + m - used;
        value -= self.table.get(last);
        if last > 1 {
            value += (last - 1) as f64 * ln_y[self.m];
        }
        value
    }
}

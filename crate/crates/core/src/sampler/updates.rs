//! The individual moves of a sweep. Each move is conditional on the current
//! allocations except where noted.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::slice::SliceSampler;
use super::{Diagnostics, Posterior};
use crate::error::{Error, Result};
use crate::model::{
    atom_into, ln_link_weight, ln_link_weight_complement, slope_ln_likelihoods, truncated_poisson_ln_pmf, ModelState,
    SelectionIndicators,
};
use crate::simplex::log_sum_exp;

/// `ln w_j(x_i) + ln dir(y_i | alpha(k, ceil(k theta_j(x_i))))` for every
/// component `j`.
pub fn allocation_log_weights(state: &ModelState, post: &Posterior<'_>, i: usize, out: &mut [f64]) {
    let n = state.dims.components;
    let m = state.dims.m;
    let x = post.data.x(i);
    let ln_y = post.ln_y(i);
    let mut z = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut ln_remaining = 0.0;
    for (j, slot) in out.iter_mut().enumerate().take(n) {
        let ln_w = if j + 1 == n {
            ln_remaining
        } else {
            let eta = state.eta(j, x);
            let v = ln_remaining + ln_link_weight(eta);
            ln_remaining += ln_link_weight_complement(eta);
            v
        };
        for (l, zl) in z.iter_mut().enumerate() {
            *zl = state.z(j, l, x);
        }
        *slot = ln_w + post.kernel().ln_dir(state.k, &z, ln_y, &mut scratch);
    }
}

/// Normalized allocation probabilities of observation `i`.
pub fn allocation_probabilities(state: &ModelState, post: &Posterior<'_>, i: usize) -> Result<Vec<f64>> {
    let mut lw = vec![0.0; state.dims.components];
    allocation_log_weights(state, post, i, &mut lw);
    let total = log_sum_exp(&lw);
    if total == f64::NEG_INFINITY {
        return Err(Error::Degenerate(i));
    }
    Ok(lw.iter().map(|v| (v - total).exp()).collect())
}

/// Per-observation mixture log-likelihood `ln f_{x_i}(y_i)`.
pub fn observation_log_likelihoods(state: &ModelState, post: &Posterior<'_>) -> Vec<f64> {
    let mut lw = vec![0.0; state.dims.components];
    (0..post.data.len())
        .map(|i| {
            allocation_log_weights(state, post, i, &mut lw);
            log_sum_exp(&lw)
        })
        .collect()
}

fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Resamples every `s_i`. Fails with [`Error::Degenerate`] naming the first
/// observation whose component likelihoods are all zero; allocations of
/// earlier observations are already updated in that case.
pub fn update_allocations<R: Rng + ?Sized>(state: &mut ModelState, post: &Posterior<'_>, rng: &mut R) -> Result<()> {
    let n_obs = post.data.len();
    state.allocations.resize(n_obs, 0);
    for i in 0..n_obs {
        let probs = allocation_probabilities(state, post, i)?;
        state.allocations[i] = draw_categorical(&probs, rng);
    }
    Ok(())
}

#[inline]
fn ln_normal_kernel(v: f64, var: f64) -> f64 {
    -0.5 * v * v / var
}

/// Slope prior as a function of coordinate `r` with the others held fixed,
/// up to a constant.
struct SlopeCoordinatePrior {
    g_rr: f64,
    cross: f64,
    tau: f64,
}

impl SlopeCoordinatePrior {
    fn new(post: &Posterior<'_>, beta: &[f64], r: usize, tau: f64) -> Self {
        let gram = post.slope_prior.gram();
        let cross = (0..beta.len()).filter(|&c| c != r).map(|c| gram[(r, c)] * beta[c]).sum();
        Self { g_rr: gram[(r, r)], cross, tau }
    }

    #[inline]
    fn ln(&self, v: f64) -> f64 {
        -0.5 * (self.g_rr * v * v + 2.0 * v * self.cross) / self.tau
    }
}

fn record(diag: &mut Diagnostics, draw: &super::slice::SliceDraw) {
    diag.slice_updates += 1;
    diag.slice_evaluations += draw.evaluations as u64;
    diag.slice_failures += draw.failed as u64;
}

/// Updates every scalar coefficient. Blocks with likelihood terms are slice
/// sampled one coordinate at a time; blocks without any (unoccupied atoms,
/// sticks beyond the last occupied component and the final stick) are drawn
/// exactly from their prior.
pub fn update_coefficients_slice<R: Rng + ?Sized>(
    state: &mut ModelState,
    post: &Posterior<'_>,
    slice: &SliceSampler,
    rng: &mut R,
    diag: &mut Diagnostics,
) {
    let n = state.dims.components;
    let (m, p) = (state.dims.m, state.dims.p);
    let prior = post.prior;
    let k = state.k;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &s) in state.allocations.iter().enumerate() {
        members[s].push(i);
    }
    let max_alloc = state.allocations.iter().copied().max();

    // weight blocks: observations with s_i = j contribute ln V_j, those with
    // s_i > j contribute ln(1 - V_j)
    let tau_eta = prior.tau_eta(state.gammas.eta);
    for j in 0..n {
        let active = j + 1 < n && max_alloc.is_some_and(|s| s >= j);
        if !active {
            state.weights.intercept[j] = normal_draw(prior.sigma2_eta, rng);
            let draw = post.slope_prior.sample(tau_eta, rng);
            state.weights.slopes[j * p..(j + 1) * p].copy_from_slice(&draw);
            continue;
        }
        let obs: Vec<(usize, bool)> = state
            .allocations
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= j)
            .map(|(i, &s)| (i, s == j))
            .collect();
        let mut eta: Vec<f64> = obs.iter().map(|&(i, _)| state.eta(j, post.data.x(i))).collect();

        for r in 0..=p {
            let v0 = if r == 0 { state.weights.intercept[j] } else { state.weights.slopes[j * p + r - 1] };
            let coord_prior = (r > 0).then(|| SlopeCoordinatePrior::new(post, state.weight_slopes(j), r - 1, tau_eta));
            let covariate = |i: usize| if r == 0 { 1.0 } else { post.data.x(i)[r - 1] };
            let target = |v: f64| {
                let delta = v - v0;
                let mut total = match &coord_prior {
                    Some(cp) => cp.ln(v),
                    None => ln_normal_kernel(v, prior.sigma2_eta),
                };
                for (&(i, hit), &e) in obs.iter().zip(&eta) {
                    let a = e + delta * covariate(i);
                    total += if hit { ln_link_weight(a) } else { ln_link_weight_complement(a) };
                }
                total
            };
            let draw = slice.draw(v0, target, rng);
            record(diag, &draw);
            let delta = draw.value - v0;
            if delta != 0.0 {
                for (e, &(i, _)) in eta.iter_mut().zip(&obs) {
                    *e += delta * covariate(i);
                }
            }
            if r == 0 {
                state.weights.intercept[j] = draw.value;
            } else {
                state.weights.slopes[j * p + r - 1] = draw.value;
            }
        }
    }

    // atom blocks
    let tau_z = prior.tau_z(state.gammas.z);
    let mut z_tmp = vec![0.0; m];
    let mut theta = vec![0.0; m];
    for j in 0..n {
        if members[j].is_empty() {
            for l in 0..m {
                let idx = j * m + l;
                state.atoms.intercept[idx] = normal_draw(prior.sigma2_z, rng);
                let draw = post.slope_prior.sample(tau_z, rng);
                state.atoms.slopes[idx * p..(idx + 1) * p].copy_from_slice(&draw);
            }
            continue;
        }
        let obs = &members[j];
        let mut z: Vec<f64> = Vec::with_capacity(obs.len() * m);
        for &i in obs {
            let x = post.data.x(i);
            z.extend((0..m).map(|l| state.z(j, l, x)));
        }
        for l in 0..m {
            let idx = j * m + l;
            for r in 0..=p {
                let v0 = if r == 0 { state.atoms.intercept[idx] } else { state.atoms.slopes[idx * p + r - 1] };
                let coord_prior =
                    (r > 0).then(|| SlopeCoordinatePrior::new(post, state.atom_slopes(j, l), r - 1, tau_z));
                let covariate = |i: usize| if r == 0 { 1.0 } else { post.data.x(i)[r - 1] };
                let target = |v: f64| {
                    let delta = v - v0;
                    let mut total = match &coord_prior {
                        Some(cp) => cp.ln(v),
                        None => ln_normal_kernel(v, prior.sigma2_z),
                    };
                    for (q, &i) in obs.iter().enumerate() {
                        z_tmp.copy_from_slice(&z[q * m..(q + 1) * m]);
                        z_tmp[l] += delta * covariate(i);
                        atom_into(&z_tmp, &mut theta);
                        total += post.kernel().ln_dir_theta(k, &theta, post.ln_y(i));
                        if total == f64::NEG_INFINITY {
                            break;
                        }
                    }
                    total
                };
                let draw = slice.draw(v0, target, rng);
                record(diag, &draw);
                let delta = draw.value - v0;
                if delta != 0.0 {
                    for (q, &i) in obs.iter().enumerate() {
                        z[q * m + l] += delta * covariate(i);
                    }
                }
                if r == 0 {
                    state.atoms.intercept[idx] = draw.value;
                } else {
                    state.atoms.slopes[idx * p + r - 1] = draw.value;
                }
            }
        }
    }
}

/// Number of admissible proposals from `k`: `{k-s..k+s} \ {k}` within
/// `1..=k_max`.
pub fn k_proposal_count(k: u32, halfwidth: u32, k_max: u32) -> u32 {
    let lo = k.saturating_sub(halfwidth).max(1);
    let hi = (k + halfwidth).min(k_max);
    hi - lo + 1 - u32::from((lo..=hi).contains(&k))
}

/// Uniform draw from the admissible proposals.
pub fn propose_k<R: Rng + ?Sized>(k: u32, halfwidth: u32, k_max: u32, rng: &mut R) -> u32 {
    let lo = k.saturating_sub(halfwidth).max(1);
    let count = k_proposal_count(k, halfwidth, k_max);
    let pick = lo + rng.random_range(0..count);
    if pick >= k {
        pick + 1
    } else {
        pick
    }
}

/// Log of the MH ratio correction `q(k | k') / q(k' | k)`.
pub fn k_proposal_correction(k: u32, k_new: u32, halfwidth: u32, k_max: u32) -> f64 {
    (k_proposal_count(k, halfwidth, k_max) as f64).ln() - (k_proposal_count(k_new, halfwidth, k_max) as f64).ln()
}

fn allocated_atoms(state: &ModelState, post: &Posterior<'_>) -> Vec<f64> {
    let m = state.dims.m;
    let mut thetas = vec![0.0; post.data.len() * m];
    let mut z = vec![0.0; m];
    for (i, &s) in state.allocations.iter().enumerate() {
        let x = post.data.x(i);
        for (l, zl) in z.iter_mut().enumerate() {
            *zl = state.z(s, l, x);
        }
        atom_into(&z, &mut thetas[i * m..(i + 1) * m]);
    }
    thetas
}

fn degree_log_likelihood(k: u32, thetas: &[f64], m: usize, post: &Posterior<'_>) -> f64 {
    let mut total = 0.0;
    for i in 0..post.data.len() {
        total += post.kernel().ln_dir_theta(k, &thetas[i * m..(i + 1) * m], post.ln_y(i));
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    total
}

/// Metropolis-Hastings move on the degree given the allocations.
pub fn update_degree_mh<R: Rng + ?Sized>(
    state: &mut ModelState,
    post: &Posterior<'_>,
    halfwidth: u32,
    rng: &mut R,
    diag: &mut Diagnostics,
) {
    let k_max = post.prior.k_max;
    let k = state.k;
    if k_proposal_count(k, halfwidth, k_max) == 0 {
        return;
    }
    let k_new = propose_k(k, halfwidth, k_max, rng);
    let m = state.dims.m;
    let thetas = allocated_atoms(state, post);
    let current = degree_log_likelihood(k, &thetas, m, post);
    let proposed = degree_log_likelihood(k_new, &thetas, m, post);
    diag.k_proposals += 1;
    if proposed == f64::NEG_INFINITY {
        return;
    }
    let lambda = post.prior.lambda;
    let ln_ratio = proposed - current + truncated_poisson_ln_pmf(k_new, lambda) - truncated_poisson_ln_pmf(k, lambda)
        + k_proposal_correction(k, k_new, halfwidth, k_max);
    if current == f64::NEG_INFINITY || rng.random::<f64>().ln() < ln_ratio {
        state.k = k_new;
        diag.k_accepts += 1;
    }
}

/// Repairs a state in which some observation has zero likelihood under
/// every component. Such states lie outside the posterior support, so the
/// degree is moved to the value in `1..=k_max` with the largest
/// allocation-free log posterior; `k = 1` always qualifies because every
/// lattice atom is then the uniform Dirichlet. Returns whether `k` changed.
pub fn rescue_degree(state: &mut ModelState, post: &Posterior<'_>) -> bool {
    let lambda = post.prior.lambda;
    let mut trial = state.clone();
    let mut best = (f64::NEG_INFINITY, state.k);
    for k in 1..=post.prior.k_max {
        trial.k = k;
        let value = observation_log_likelihoods(&trial, post).iter().sum::<f64>() + truncated_poisson_ln_pmf(k, lambda);
        if value > best.0 {
            best = (value, k);
        }
    }
    let changed = best.1 != state.k;
    state.k = best.1;
    changed
}

/// Posterior probabilities of the four selection categories given the
/// slopes restricted by the masks (`None` uses every component).
pub fn gamma_posterior(
    state: &ModelState,
    post: &Posterior<'_>,
    eta_mask: Option<&[bool]>,
    z_mask: Option<&[bool]>,
) -> [f64; 4] {
    let ln_lik = slope_ln_likelihoods(state, post.prior, &post.slope_prior, eta_mask, z_mask);
    let pi = post.prior.selection_prior();
    let mut lw = [0.0; 4];
    for c in 0..4 {
        lw[c] = pi[c].ln() + ln_lik[c];
    }
    let total = log_sum_exp(&lw);
    lw.map(|v| (v - total).exp())
}

/// Joint categorical draw of `(gamma_eta, gamma_z)` given all slopes.
pub fn update_gammas<R: Rng + ?Sized>(state: &mut ModelState, post: &Posterior<'_>, rng: &mut R) {
    let probs = gamma_posterior(state, post, None, None);
    state.gammas = SelectionIndicators::from_category(draw_categorical(&probs, rng));
}

/// Components whose slopes carry likelihood information under the current
/// allocations: `(eta, z)` masks.
pub fn active_components(state: &ModelState) -> (Vec<bool>, Vec<bool>) {
    let n = state.dims.components;
    let mut z_mask = vec![false; n];
    for &s in &state.allocations {
        z_mask[s] = true;
    }
    let max_alloc = state.allocations.iter().copied().max();
    let eta_mask = (0..n).map(|j| j + 1 < n && max_alloc.is_some_and(|s| s >= j)).collect();
    (eta_mask, z_mask)
}

/// Draws the indicators with the slopes of inactive components integrated
/// out, then refreshes those slopes from their prior under the new
/// indicators.
pub fn update_gammas_collapsed<R: Rng + ?Sized>(state: &mut ModelState, post: &Posterior<'_>, rng: &mut R) {
    let (eta_mask, z_mask) = active_components(state);
    let probs = gamma_posterior(state, post, Some(&eta_mask), Some(&z_mask));
    state.gammas = SelectionIndicators::from_category(draw_categorical(&probs, rng));
    let (m, p) = (state.dims.m, state.dims.p);
    let tau_eta = post.prior.tau_eta(state.gammas.eta);
    let tau_z = post.prior.tau_z(state.gammas.z);
    for j in 0..state.dims.components {
        if !eta_mask[j] {
            let draw = post.slope_prior.sample(tau_eta, rng);
            state.weights.slopes[j * p..(j + 1) * p].copy_from_slice(&draw);
        }
        if !z_mask[j] {
            for l in 0..m {
                let idx = j * m + l;
                let draw = post.slope_prior.sample(tau_z, rng);
                state.atoms.slopes[idx * p..(idx + 1) * p].copy_from_slice(&draw);
            }
        }
    }
}

/// `sum_i ln w_{s_i}(x_i) + ln dir(y_i | s_i)`.
pub fn complete_log_likelihood(state: &ModelState, post: &Posterior<'_>) -> f64 {
    let n = state.dims.components;
    let m = state.dims.m;
    let mut z = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut total = 0.0;
    for (i, &s) in state.allocations.iter().enumerate() {
        let x = post.data.x(i);
        for j in 0..=s.min(n - 1) {
            if j + 1 == n {
                break;
            }
            let eta = state.eta(j, x);
            total += if j == s { ln_link_weight(eta) } else { ln_link_weight_complement(eta) };
        }
        for (l, zl) in z.iter_mut().enumerate() {
            *zl = state.z(s, l, x);
        }
        total += post.kernel().ln_dir(state.k, &z, post.ln_y(i), &mut scratch);
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    total
}

/// Metropolis move to a different selection category that rescales the
/// slopes of every switched block by `sqrt(tau_new / tau_old)`. The slope
/// prior terms cancel against the Jacobian, leaving the prior odds of the
/// categories times the likelihood ratio.
pub fn gamma_scale_move<R: Rng + ?Sized>(
    state: &mut ModelState,
    post: &Posterior<'_>,
    rng: &mut R,
    diag: &mut Diagnostics,
) {
    let current_cat = state.gammas.category();
    let mut new_cat = rng.random_range(0..3);
    if new_cat >= current_cat {
        new_cat += 1;
    }
    let new_gammas = SelectionIndicators::from_category(new_cat);
    let prior = post.prior;
    let mut trial = state.clone();
    if new_gammas.eta != state.gammas.eta {
        let c = (prior.tau_eta(new_gammas.eta) / prior.tau_eta(state.gammas.eta)).sqrt();
        trial.weights.slopes.iter_mut().for_each(|b| *b *= c);
    }
    if new_gammas.z != state.gammas.z {
        let c = (prior.tau_z(new_gammas.z) / prior.tau_z(state.gammas.z)).sqrt();
        trial.atoms.slopes.iter_mut().for_each(|b| *b *= c);
    }
    trial.gammas = new_gammas;
    diag.gamma_moves += 1;
    let proposed = complete_log_likelihood(&trial, post);
    if proposed == f64::NEG_INFINITY {
        return;
    }
    let pi = prior.selection_prior();
    let ln_ratio = pi[new_cat].ln() - pi[current_cat].ln() + proposed - complete_log_likelihood(state, post);
    if rng.random::<f64>().ln() < ln_ratio {
        *state = trial;
        diag.gamma_accepts += 1;
    }
}

/// One standard normal draw scaled to variance `var`.
pub(crate) fn normal_draw<R: Rng + ?Sized>(var: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    var.sqrt() * z
}

//! Blocked Gibbs sampler for the dependent MBP regression model.
//!
//! A sweep runs allocations, coefficients, degree and selection indicators
//! in that order. Retained states are kept together with the per-observation
//! mixture log-likelihoods needed by the fit criteria.

pub mod slice;
pub mod updates;

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{log_prior, Dims, LatticeKernel, ModelState, PriorConfig, SelectionIndicators, SlopePrior};

pub use slice::{SliceDraw, SliceSampler};
pub use updates::{
    active_components, allocation_probabilities, complete_log_likelihood, gamma_posterior, gamma_scale_move,
    k_proposal_correction, k_proposal_count, observation_log_likelihoods, propose_k, rescue_degree,
    update_allocations, update_coefficients_slice, update_degree_mh, update_gammas, update_gammas_collapsed,
};

/// Attempts at repairing an allocation step that finds an observation with
/// zero likelihood under every component.
pub const MAX_DEGENERATE_RETRIES: usize = 5;

/// RNG for stream `stream` of master seed `seed`. Replicates and chains use
/// distinct streams of one ChaCha8 key rather than perturbed seeds.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything a sweep needs that does not change during the chain.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    pub data: &'a Dataset,
    pub prior: &'a PriorConfig,
    pub slope_prior: SlopePrior,
    kernel: LatticeKernel,
    ln_y: Vec<f64>,
}

impl<'a> Posterior<'a> {
    /// Uses the Zellner covariance of the design; fails when `X'X` is
    /// singular.
    pub fn new(data: &'a Dataset, prior: &'a PriorConfig) -> Result<Self> {
        let slope_prior = SlopePrior::from_design(data.covariates(), data.p())?;
        Self::with_slope_prior(data, prior, slope_prior)
    }

    pub fn with_slope_prior(data: &'a Dataset, prior: &'a PriorConfig, slope_prior: SlopePrior) -> Result<Self> {
        prior.validate()?;
        if slope_prior.dim() != data.p() {
            return Err(Error::Domain(format!(
                "slope prior has dimension {}, data has p={}",
                slope_prior.dim(),
                data.p()
            )));
        }
        let ln_y = data.responses().iter().flat_map(|y| y.log_parts()).collect();
        Ok(Self { data, prior, slope_prior, kernel: LatticeKernel::new(data.m(), prior.k_max), ln_y })
    }

    pub fn kernel(&self) -> &LatticeKernel {
        &self.kernel
    }

    /// Logs of the `m + 1` parts of response `i`.
    #[inline]
    pub fn ln_y(&self, i: usize) -> &[f64] {
        let w = self.data.m() + 1;
        &self.ln_y[i * w..(i + 1) * w]
    }

    pub fn dims(&self) -> Dims {
        Dims { components: self.prior.truncation, m: self.data.m(), p: self.data.p() }
    }

    /// `ln p(state) + sum_i ln f_{x_i}(y_i)`, allocations summed out.
    pub fn log_posterior(&self, state: &ModelState) -> f64 {
        log_prior(state, self.prior, &self.slope_prior) + observation_log_likelihoods(state, self).iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaUpdate {
    /// Categorical draw given every slope.
    Full,
    /// Categorical draw with the slopes of empty components integrated out.
    Collapsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub slice_width: f64,
    /// Stepping-out budget of the slice sampler.
    pub slice_max_doublings: u32,
    pub k_proposal_halfwidth: u32,
    pub gamma_update: GammaUpdate,
    /// Adds a slope-rescaling Metropolis move between selection categories.
    pub gamma_scale_move: bool,
    pub initial_gammas: SelectionIndicators,
}

impl ChainConfig {
    /// 11,000 sweeps, 1,000 burn-in, every tenth state kept.
    pub fn desk() -> Self {
        Self {
            n_iter: 11_000,
            burn_in: 1_000,
            thin: 10,
            seed: 1,
            slice_width: 1.0,
            slice_max_doublings: 10,
            k_proposal_halfwidth: 3,
            gamma_update: GammaUpdate::Collapsed,
            gamma_scale_move: true,
            initial_gammas: SelectionIndicators { eta: true, z: true },
        }
    }

    /// 110,000 sweeps, 10,000 burn-in, every tenth state kept.
    pub fn full() -> Self {
        Self { n_iter: 110_000, burn_in: 10_000, ..Self::desk() }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!("chain.burn_in ({}) must be below chain.n_iter ({})", self.burn_in, self.n_iter)));
        }
        if self.seed > i64::MAX as u64 {
            // config files store integers as signed 64-bit
            return Err(Error::Config(format!("chain.seed must be at most {}", i64::MAX)));
        }
        if self.thin == 0 {
            return Err(Error::Config("chain.thin must be >= 1".into()));
        }
        if !(self.slice_width > 0.0 && self.slice_width.is_finite()) {
            return Err(Error::Config("chain.slice_width must be positive".into()));
        }
        if self.k_proposal_halfwidth == 0 {
            return Err(Error::Config("chain.k_proposal_halfwidth must be >= 1".into()));
        }
        Ok(())
    }

    /// `floor((n_iter - burn_in) / thin)`.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    pub fn slice_sampler(&self) -> SliceSampler {
        SliceSampler { width: self.slice_width, max_steps: self.slice_max_doublings, ..SliceSampler::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub slice_updates: u64,
    pub slice_evaluations: u64,
    pub slice_failures: u64,
    pub k_proposals: u64,
    pub k_accepts: u64,
    pub gamma_moves: u64,
    pub gamma_accepts: u64,
    pub degenerate_retries: u64,
}

impl Diagnostics {
    pub fn k_acceptance_rate(&self) -> f64 {
        self.k_accepts as f64 / self.k_proposals.max(1) as f64
    }
}

/// Retained draws of a chain. `loglik[t][i]` is the log-likelihood of
/// observation `i` under retained state `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples<S> {
    pub states: Vec<S>,
    pub iterations: Vec<usize>,
    pub loglik: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl<S> PosteriorSamples<S> {
    pub fn new() -> Self {
        Self { states: Vec::new(), iterations: Vec::new(), loglik: Vec::new(), log_posterior: Vec::new(), diagnostics: Diagnostics::default() }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.loglik.first().map_or(0, Vec::len)
    }
}

impl<S> Default for PosteriorSamples<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl PosteriorSamples<ModelState> {
    pub fn gamma_trace(&self) -> Vec<SelectionIndicators> {
        self.states.iter().map(|s| s.gammas).collect()
    }

    pub fn k_trace(&self) -> Vec<u32> {
        self.states.iter().map(|s| s.k).collect()
    }

    /// Relative frequency of each selection category in prior order.
    pub fn gamma_frequencies(&self) -> [f64; 4] {
        let mut counts = [0.0; 4];
        for s in &self.states {
            counts[s.gammas.category()] += 1.0;
        }
        let total = self.states.len().max(1) as f64;
        counts.map(|c| c / total)
    }

    /// Most frequent category; ties go to the earlier category.
    pub fn gamma_mode(&self) -> SelectionIndicators {
        let freq = self.gamma_frequencies();
        let mut best = 0;
        for c in 1..4 {
            if freq[c] > freq[best] {
                best = c;
            }
        }
        SelectionIndicators::from_category(best)
    }
}

/// Starting point: `k` at the rounded prior mean, zero stick coefficients,
/// standard normal atom intercepts and zero slopes.
pub fn initial_state(post: &Posterior<'_>, config: &ChainConfig, rng: &mut ChaCha8Rng) -> ModelState {
    let dims = post.dims();
    let k = (post.prior.lambda.round() as u32).clamp(1, post.prior.k_max);
    let mut state = ModelState::zeros(dims, k);
    for b in state.atoms.intercept.iter_mut() {
        *b = updates::normal_draw(1.0, rng);
    }
    state.gammas = config.initial_gammas;
    state
}

fn allocate_with_rescue(
    state: &mut ModelState,
    post: &Posterior<'_>,
    rng: &mut ChaCha8Rng,
    diag: &mut Diagnostics,
) -> Result<()> {
    let mut last = None;
    for _ in 0..=MAX_DEGENERATE_RETRIES {
        match update_allocations(state, post, rng) {
            Ok(()) => return Ok(()),
            Err(Error::Degenerate(i)) => {
                last = Some(i);
                diag.degenerate_retries += 1;
                if !rescue_degree(state, post) {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Degenerate(last.unwrap_or(0)))
}

/// One full sweep.
pub fn sweep(
    state: &mut ModelState,
    post: &Posterior<'_>,
    config: &ChainConfig,
    slice: &SliceSampler,
    rng: &mut ChaCha8Rng,
    diag: &mut Diagnostics,
) -> Result<()> {
    allocate_with_rescue(state, post, rng, diag)?;
    update_coefficients_slice(state, post, slice, rng, diag);
    update_degree_mh(state, post, config.k_proposal_halfwidth, rng, diag);
    match config.gamma_update {
        GammaUpdate::Full => update_gammas(state, post, rng),
        GammaUpdate::Collapsed => update_gammas_collapsed(state, post, rng),
    }
    if config.gamma_scale_move {
        gamma_scale_move(state, post, rng, diag);
    }
    Ok(())
}

/// Runs a chain from the default starting point.
pub fn run_chain(data: &Dataset, prior: &PriorConfig, config: &ChainConfig) -> Result<PosteriorSamples<ModelState>> {
    let post = Posterior::new(data, prior)?;
    run_chain_with(&post, config)
}

pub fn run_chain_with(post: &Posterior<'_>, config: &ChainConfig) -> Result<PosteriorSamples<ModelState>> {
    run_chain_on_stream(post, config, 0)
}

/// Runs a chain on RNG stream `stream` of `config.seed`.
pub fn run_chain_on_stream(
    post: &Posterior<'_>,
    config: &ChainConfig,
    stream: u64,
) -> Result<PosteriorSamples<ModelState>> {
    config.validate()?;
    let mut rng = chain_rng(config.seed, stream);
    let mut state = initial_state(post, config, &mut rng);
    run_chain_from(post, config, &mut state, &mut rng)
}

/// Runs `config.n_iter` sweeps from `state`, recording every `thin`-th
/// state after burn-in.
pub fn run_chain_from(
    post: &Posterior<'_>,
    config: &ChainConfig,
    state: &mut ModelState,
    rng: &mut ChaCha8Rng,
) -> Result<PosteriorSamples<ModelState>> {
    config.validate()?;
    let slice = config.slice_sampler();
    let mut samples = PosteriorSamples::new();
    let mut diag = Diagnostics::default();
    for iter in 0..config.n_iter {
        sweep(state, post, config, &slice, rng, &mut diag)?;
        if iter >= config.burn_in && (iter - config.burn_in + 1) % config.thin == 0 {
            let loglik = observation_log_likelihoods(state, post);
            let lp = log_prior(state, post.prior, &post.slope_prior) + loglik.iter().sum::<f64>();
            if lp.is_nan() {
                return Err(Error::Domain(format!("log posterior is NaN at sweep {iter}")));
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

#[derive(Serialize, Deserialize)]
struct SampleRecord<S> {
    iteration: usize,
    log_posterior: f64,
    state: S,
}

/// One JSON object per retained state: `{"iteration", "log_posterior", "state"}`.
pub fn write_samples_jsonl<S: Serialize, W: Write>(samples: &PosteriorSamples<S>, mut out: W) -> Result<()> {
    for ((state, &iteration), &log_posterior) in samples.states.iter().zip(&samples.iterations).zip(&samples.log_posterior) {
        serde_json::to_writer(&mut out, &SampleRecord { iteration, log_posterior, state })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads states written by [`write_samples_jsonl`]; log-likelihoods are
/// left empty.
pub fn read_samples_jsonl<S: DeserializeOwned, R: BufRead>(input: R) -> Result<PosteriorSamples<S>> {
    let mut samples = PosteriorSamples::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord<S> = serde_json::from_str(&line)?;
        samples.states.push(record.state);
        samples.iterations.push(record.iteration);
        samples.log_posterior.push(record.log_posterior);
    }
    Ok(samples)
}

/// `iteration,ll1,...,lln` with one row per retained state.
pub fn write_loglik_csv<W: Write>(iterations: &[usize], loglik: &[Vec<f64>], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let n = loglik.first().map_or(0, Vec::len);
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=n).map(|i| format!("ll{i}")));
    writer.write_record(&header)?;
    for (iteration, row) in iterations.iter().zip(loglik) {
        let mut record = vec![iteration.to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_loglik_csv<R: std::io::Read>(input: R) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_reader(input);
    let mut iterations = Vec::new();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Data(format!("loglik row {}: bad value `{v}`", r + 1)));
        let mut fields = record.iter();
        let it = fields.next().ok_or_else(|| Error::Data(format!("loglik row {} is empty", r + 1)))?;
        iterations.push(it.trim().parse::<usize>().map_err(|_| Error::Data(format!("loglik row {}: bad iteration", r + 1)))?);
        rows.push(fields.map(parse).collect::<Result<Vec<f64>>>()?);
    }
    Ok((iterations, rows))
}

/// `iteration,k,gamma_eta,gamma_z,log_posterior`.
pub fn write_traces_csv<W: Write>(samples: &PosteriorSamples<ModelState>, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["iteration", "k", "gamma_eta", "gamma_z", "log_posterior"])?;
    for ((s, it), lp) in samples.states.iter().zip(&samples.iterations).zip(&samples.log_posterior) {
        writer.write_record([
            it.to_string(),
            s.k.to_string(),
            u8::from(s.gammas.eta).to_string(),
            u8::from(s.gammas.z).to_string(),
            lp.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

//! Replicate simulation study: scenarios x priors x sample sizes x
//! replicates, fanned out over a thread pool and aggregated in a fixed order.
//!
//! Seeding: every dataset and chain uses the study's master seed with its own
//! ChaCha8 stream.
//!
//! - Data stream: `scenario_index << 56 | n << 20 | replicate`.
//! - Chain stream: `1 << 63 | prior_index << 52 | data stream`.
//!
//! Each replicate's dataset is shared by all priors, and a replicate's
//! result does not depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::config::GridConfig;
use crate::error::{Error, Result};
use crate::inference::{integrated_l1, l_infinity, predictive_density, true_density_grid, DensityGrid};
use crate::model::{PriorConfig, SelectionIndicators};
use crate::sampler::{run_chain_on_stream, ChainConfig, Posterior};
use crate::simgen::{sample_dataset_stream, Scenario};

const MAX_REPLICATES: usize = 1 << 20;
const MAX_SAMPLE_SIZE: usize = 1 << 32;

#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub seed: u64,
    pub replicates: usize,
    pub sizes: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    /// Named priors, in output order.
    pub priors: Vec<(String, PriorConfig)>,
    pub chain: ChainConfig,
    pub grid: GridConfig,
}

impl StudyPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.replicates > MAX_REPLICATES {
            return Err(Error::Config(format!("replicates must be in 1..={MAX_REPLICATES}")));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 2 || n >= MAX_SAMPLE_SIZE) {
            return Err(Error::Config("sample sizes must be at least 2".into()));
        }
        if self.scenarios.is_empty() || self.priors.is_empty() {
            return Err(Error::Config("study needs at least one scenario and one prior".into()));
        }
        if self.priors.len() > 16 {
            return Err(Error::Config("at most 16 priors per study".into()));
        }
        for (_, prior) in &self.priors {
            prior.validate()?;
        }
        self.chain.validate()
    }

    fn tasks(&self) -> Vec<Task> {
        let mut tasks = Vec::new();
        for &scenario in &self.scenarios {
            for prior in 0..self.priors.len() {
                for &n in &self.sizes {
                    for replicate in 0..self.replicates {
                        tasks.push(Task { scenario, prior, n, replicate });
                    }
                }
            }
        }
        tasks
    }
}

#[derive(Debug, Clone, Copy)]
struct Task {
    scenario: Scenario,
    prior: usize,
    n: usize,
    replicate: usize,
}

fn scenario_index(s: Scenario) -> u64 {
    Scenario::ALL.iter().position(|&t| t == s).unwrap_or(0) as u64
}

pub fn data_stream(scenario: Scenario, n: usize, replicate: usize) -> u64 {
    scenario_index(scenario) << 56 | (n as u64) << 20 | replicate as u64
}

pub fn chain_stream(scenario: Scenario, prior_index: usize, n: usize, replicate: usize) -> u64 {
    1 << 63 | (prior_index as u64) << 52 | data_stream(scenario, n, replicate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub il1: f64,
    pub linf: f64,
    pub gamma_mode: SelectionIndicators,
    pub agrees: bool,
    pub mean_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub scenario: Scenario,
    pub prior: String,
    pub n: usize,
    pub replicate: usize,
    /// Error message for a failed replicate.
    pub outcome: std::result::Result<ReplicateMetrics, String>,
}

/// One fitted replicate, scored against the scenario truth.
pub fn run_replicate(
    scenario: Scenario,
    n: usize,
    replicate: usize,
    prior_index: usize,
    plan: &StudyPlan,
    truth: &DensityGrid,
) -> Result<ReplicateMetrics> {
    let data = sample_dataset_stream(scenario, n, plan.seed, data_stream(scenario, n, replicate))?;
    let prior = &plan.priors[prior_index].1;
    let post = Posterior::new(&data, prior)?;
    let config = ChainConfig { seed: plan.seed, ..plan.chain.clone() };
    let samples = run_chain_on_stream(&post, &config, chain_stream(scenario, prior_index, n, replicate))?;
    let est = predictive_density(&samples.states, truth.x_grid(), truth.y_grid())?;
    let gamma_mode = samples.gamma_mode();
    let ks = samples.k_trace();
    Ok(ReplicateMetrics {
        il1: integrated_l1(&est, truth)?,
        linf: l_infinity(&est, truth)?,
        gamma_mode,
        agrees: gamma_mode == scenario.true_structure(),
        mean_k: ks.iter().map(|&k| f64::from(k)).sum::<f64>() / ks.len() as f64,
    })
}

/// Runs every task on a pool of `jobs` threads. Results come back in plan
/// order: scenario, prior, sample size, replicate.
pub fn run_study(plan: &StudyPlan, jobs: usize) -> Result<Vec<ReplicateResult>> {
    plan.validate()?;
    let y_grid = plan.grid.y_grid()?;
    let x_grid = plan.grid.x_grid();
    let truths: Vec<DensityGrid> =
        plan.scenarios.iter().map(|&s| true_density_grid(s, &x_grid, &y_grid)).collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let tasks = plan.tasks();
    let results = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let idx = plan.scenarios.iter().position(|&s| s == task.scenario).unwrap_or(0);
                let outcome = run_replicate(task.scenario, task.n, task.replicate, task.prior, plan, &truths[idx])
                    .map_err(|e| e.to_string());
                ReplicateResult {
                    scenario: task.scenario,
                    prior: plan.priors[task.prior].0.clone(),
                    n: task.n,
                    replicate: task.replicate,
                    outcome,
                }
            })
            .collect()
    });
    Ok(results)
}

/// Aggregate over the successful replicates of one (scenario, prior, n) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: Scenario,
    pub prior: String,
    pub n: usize,
    pub mean_il1: f64,
    pub agreement: f64,
    pub succeeded: usize,
    pub failed: usize,
}

pub fn summarize(results: &[ReplicateResult]) -> Vec<CellSummary> {
    let mut cells: Vec<CellSummary> = Vec::new();
    for r in results {
        let same = |c: &CellSummary| c.scenario == r.scenario && c.prior == r.prior && c.n == r.n;
        if !cells.last().is_some_and(same) {
            cells.push(CellSummary {
                scenario: r.scenario,
                prior: r.prior.clone(),
                n: r.n,
                mean_il1: 0.0,
                agreement: 0.0,
                succeeded: 0,
                failed: 0,
            });
        }
        let cell = cells.last_mut().expect("cell pushed above");
        match &r.outcome {
            Ok(m) => {
                cell.succeeded += 1;
                cell.mean_il1 += m.il1;
                cell.agreement += f64::from(u8::from(m.agrees));
            }
            Err(_) => cell.failed += 1,
        }
    }
    for cell in &mut cells {
        let s = cell.succeeded as f64;
        cell.mean_il1 = if cell.succeeded > 0 { cell.mean_il1 / s } else { f64::NAN };
        cell.agreement = if cell.succeeded > 0 { cell.agreement / s } else { f64::NAN };
    }
    cells
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        v.to_string()
    }
}

/// `scenario,prior,n,mean_IL1,replicates`.
pub fn il1_table_csv(cells: &[CellSummary]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["scenario", "prior", "n", "mean_IL1", "replicates"])?;
    for c in cells {
        out.write_record([c.scenario.to_string(), c.prior.clone(), c.n.to_string(), fmt_value(c.mean_il1), c.succeeded.to_string()])?;
    }
    out.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `scenario,prior,n,agreement,replicates`.
pub fn agreement_table_csv(cells: &[CellSummary]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["scenario", "prior", "n", "agreement", "replicates"])?;
    for c in cells {
        out.write_record([c.scenario.to_string(), c.prior.clone(), c.n.to_string(), fmt_value(c.agreement), c.succeeded.to_string()])?;
    }
    out.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// One row per replicate, failures included.
pub fn replicates_csv(results: &[ReplicateResult]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["scenario", "prior", "n", "replicate", "status", "il1", "linf", "gamma_eta", "gamma_z", "agrees", "mean_k"])?;
    for r in results {
        let head = [r.scenario.to_string(), r.prior.clone(), r.n.to_string(), (r.replicate + 1).to_string()];
        let tail: Vec<String> = match &r.outcome {
            Ok(m) => vec![
                "ok".into(),
                m.il1.to_string(),
                m.linf.to_string(),
                u8::from(m.gamma_mode.eta).to_string(),
                u8::from(m.gamma_mode.z).to_string(),
                u8::from(m.agrees).to_string(),
                m.mean_k.to_string(),
            ],
            Err(msg) => {
                let mut row = vec![format!("failed: {msg}")];
                row.extend(std::iter::repeat_n(String::new(), 6));
                row
            }
        };
        out.write_record(head.iter().chain(&tail))?;
    }
    out.into_inner().map_err(|e| Error::Io(e.into_error()))
}

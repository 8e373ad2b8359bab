//! Command implementations. Each writes its artifacts plus `manifest.json`
//! into the output directory and returns a short report for the terminal.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Scale};
use super::manifest::RunRecorder;
use super::study::{agreement_table_csv, il1_table_csv, replicates_csv, run_study, summarize, StudyPlan};
use super::{CompareArgs, EvaluateArgs, FitArgs, ModelKind, PredictArgs, SimulateArgs, StudyArgs};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{
    fit_criteria, integrated_l1, l_infinity, predictive_density, true_density_grid, DensityGrid, FitCriteria,
};
use crate::model::{ModelState, PriorConfig, SelectionIndicators};
use crate::pdr::{fit_pdr, pdr_predictive_density, PdrState};
use crate::sampler::{
    read_loglik_csv, read_samples_jsonl, run_chain_with, write_loglik_csv, write_samples_jsonl, write_traces_csv,
    Posterior, PosteriorSamples,
};
use crate::simgen::{sample_dataset, Scenario};
use crate::simplex::SimplexGrid;

pub const DATA_FILE: &str = "data.csv";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const LOGLIK_FILE: &str = "loglik.csv";
pub const TRACES_FILE: &str = "traces.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const GRID_FILE: &str = "density_grid.csv";
pub const TRUTH_GRID_FILE: &str = "truth_grid.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn simulate(args: &SimulateArgs) -> Result<String> {
    let data = sample_dataset(args.scenario, args.n, args.seed)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    let mut rec = RunRecorder::new("simulate", &args.out)?;
    rec.option("scenario", args.scenario).option("n", args.n).seed(args.seed);
    let path = rec.write(DATA_FILE, &csv)?;
    rec.finish()?;
    Ok(format!("scenario {}: {} observations written to {}", args.scenario, args.n, path.display()))
}

/// Opens `path` for reading; the error names the file.
pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(open(path)?)
}

fn criteria_or_none(loglik: &[Vec<f64>]) -> Option<FitCriteria> {
    fit_criteria(loglik).ok()
}

#[derive(Serialize)]
struct DmbppSummary {
    model: &'static str,
    n_obs: usize,
    retained: usize,
    gamma_mode: &'static str,
    gamma_frequencies: std::collections::BTreeMap<&'static str, f64>,
    mean_k: f64,
    k_acceptance: f64,
    slice_failures: u64,
    degenerate_retries: u64,
    lpml: Option<f64>,
    neg_n_waic: Option<f64>,
}

#[derive(Serialize)]
struct PdrSummary {
    model: &'static str,
    n_obs: usize,
    retained: usize,
    posterior_mean: Vec<f64>,
    posterior_sd: Vec<f64>,
    lpml: Option<f64>,
    neg_n_waic: Option<f64>,
}

fn mean_sd(draws: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let t = draws.clone().count() as f64;
    let mean = draws.clone().sum::<f64>() / t;
    let var = if t > 1.0 { draws.map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn fit(args: &FitArgs) -> Result<String> {
    let mut config = args.config.resolve()?;
    if let Some(name) = &args.prior {
        config.prior = PriorConfig::named(name)?;
    }
    if let Some(seed) = args.seed {
        config.chain.seed = seed;
    }
    config.validate()?;
    let data = read_dataset(&args.data)?;
    let model = match args.model {
        ModelKind::Dmbpp => "dmbpp",
        ModelKind::Pdr => "pdr",
    };

    let mut rec = RunRecorder::new("fit", &args.out)?;
    rec.input(&args.data)?;
    if let Some(path) = &args.config.config {
        rec.input(path)?;
    }
    rec.option("model", model).option("scale", args.config.scale);
    if let Some(name) = &args.prior {
        rec.option("prior", name);
    }
    rec.config_digest(config.digest()?).seed(config.chain.seed);
    rec.write(CONFIG_FILE, config.to_toml_string()?.as_bytes())?;

    let report = match args.model {
        ModelKind::Dmbpp => {
            let post = Posterior::new(&data, &config.prior)?;
            let samples = run_chain_with(&post, &config.chain)?;
            write_common(&mut rec, &samples)?;
            let mut traces = Vec::new();
            write_traces_csv(&samples, &mut traces)?;
            rec.write(TRACES_FILE, &traces)?;
            let criteria = criteria_or_none(&samples.loglik);
            let ks = samples.k_trace();
            let freq = samples.gamma_frequencies();
            let summary = DmbppSummary {
                model,
                n_obs: data.len(),
                retained: samples.len(),
                gamma_mode: samples.gamma_mode().label(),
                gamma_frequencies: SelectionIndicators::CATEGORIES
                    .iter()
                    .zip(freq)
                    .map(|(g, f)| (g.label(), f))
                    .collect(),
                mean_k: ks.iter().map(|&k| f64::from(k)).sum::<f64>() / ks.len().max(1) as f64,
                k_acceptance: samples.diagnostics.k_acceptance_rate(),
                slice_failures: samples.diagnostics.slice_failures,
                degenerate_retries: samples.diagnostics.degenerate_retries,
                lpml: criteria.as_ref().map(|c| c.lpml),
                neg_n_waic: criteria.as_ref().map(|c| c.neg_n_waic),
            };
            rec.write(SUMMARY_FILE, &json_bytes(&summary)?)?;
            format!(
                "dmbpp: {} draws kept, gamma mode {}, mean k {:.1}",
                summary.retained, summary.gamma_mode, summary.mean_k
            )
        }
        ModelKind::Pdr => {
            let samples = fit_pdr(&data, &config.pdr, &config.chain)?;
            write_common(&mut rec, &samples)?;
            rec.write(TRACES_FILE, &pdr_traces_csv(&samples)?)?;
            let criteria = criteria_or_none(&samples.loglik);
            let width = samples.states.first().map_or(0, |s| s.beta.len());
            let (posterior_mean, posterior_sd) =
                (0..width).map(|c| mean_sd(samples.states.iter().map(move |s| s.beta[c]))).unzip();
            let summary = PdrSummary {
                model,
                n_obs: data.len(),
                retained: samples.len(),
                posterior_mean,
                posterior_sd,
                lpml: criteria.as_ref().map(|c| c.lpml),
                neg_n_waic: criteria.as_ref().map(|c| c.neg_n_waic),
            };
            rec.write(SUMMARY_FILE, &json_bytes(&summary)?)?;
            format!("pdr: {} draws kept", summary.retained)
        }
    };
    let out = rec.root().display().to_string();
    rec.finish()?;
    Ok(format!("{report}; results in {out}"))
}

fn write_common<S: Serialize>(rec: &mut RunRecorder, samples: &PosteriorSamples<S>) -> Result<()> {
    let mut buf = Vec::new();
    write_samples_jsonl(samples, &mut buf)?;
    rec.write(SAMPLES_FILE, &buf)?;
    let mut buf = Vec::new();
    write_loglik_csv(&samples.iterations, &samples.loglik, &mut buf)?;
    rec.write(LOGLIK_FILE, &buf)?;
    Ok(())
}

/// `iteration,log_posterior,b{l}_{r}` with parts `l` from 1 and `r = 0` the
/// intercept.
fn pdr_traces_csv(samples: &PosteriorSamples<PdrState>) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    if let Some(first) = samples.states.first() {
        let w = first.p + 1;
        let mut header = vec!["iteration".to_string(), "log_posterior".to_string()];
        header.extend((0..first.beta.len()).map(|c| format!("b{}_{}", c / w + 1, c % w)));
        out.write_record(&header)?;
    }
    for ((s, it), lp) in samples.states.iter().zip(&samples.iterations).zip(&samples.log_posterior) {
        let mut row = vec![it.to_string(), lp.to_string()];
        row.extend(s.beta.iter().map(|b| b.to_string()));
        out.write_record(&row)?;
    }
    out.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Retained draws of either model, as read back from `samples.jsonl`.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedSamples {
    Dmbpp(PosteriorSamples<ModelState>),
    Pdr(PosteriorSamples<PdrState>),
}

impl FittedSamples {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        let first = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Data(format!("{} holds no samples", path.display())))?;
        let record: serde_json::Value = serde_json::from_str(first)?;
        if record["state"].get("beta").is_some() {
            Ok(Self::Pdr(read_samples_jsonl(text.as_bytes())?))
        } else {
            Ok(Self::Dmbpp(read_samples_jsonl(text.as_bytes())?))
        }
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        match self {
            Self::Dmbpp(s) => s.states.first().map_or(0, |s| s.dims.p),
            Self::Pdr(s) => s.states.first().map_or(0, |s| s.p),
        }
    }

    pub fn density(&self, x_grid: &[Vec<f64>], y_grid: &SimplexGrid) -> Result<DensityGrid> {
        match self {
            Self::Dmbpp(s) => predictive_density(&s.states, x_grid, y_grid),
            Self::Pdr(s) => pdr_predictive_density(&s.states, x_grid, y_grid),
        }
    }
}

fn read_x_grid(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let header = reader.headers()?.clone();
    for (j, name) in header.iter().enumerate() {
        if name.trim() != format!("x{}", j + 1) {
            return Err(Error::Data(format!("x-grid column {} is `{name}`, expected `x{}`", j + 1, j + 1)));
        }
    }
    reader
        .records()
        .enumerate()
        .map(|(r, rec)| {
            rec?.iter()
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Data(format!("x-grid row {}: bad value `{v}`", r + 1))))
                .collect()
        })
        .collect()
}

pub fn predict(args: &PredictArgs) -> Result<String> {
    let config = args.config.resolve()?;
    let fitted = FittedSamples::load(&args.samples)?;
    let p = fitted.p();
    let x_grid = if let Some(path) = &args.x_grid {
        read_x_grid(path)?
    } else if !args.x.is_empty() {
        if p != 1 {
            return Err(Error::GridMismatch(format!("--x takes one covariate but the fit has p={p}; use --x-grid")));
        }
        args.x.iter().map(|&v| vec![v]).collect()
    } else if p == 1 {
        config.grid.x_grid()
    } else {
        return Err(Error::GridMismatch(format!("the fit has p={p} covariates; pass --x-grid")));
    };
    let grid = fitted.density(&x_grid, &config.grid.y_grid()?)?;
    let mut csv = Vec::new();
    grid.write_csv(&mut csv)?;

    let mut rec = RunRecorder::new("predict", &args.out)?;
    rec.input(&args.samples)?;
    if let Some(path) = &args.x_grid {
        rec.input(path)?;
    }
    if !args.x.is_empty() {
        rec.option("x", args.x.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    }
    rec.config_digest(config.digest()?);
    let path = rec.write(GRID_FILE, &csv)?;
    rec.finish()?;
    Ok(format!("{} x {} density grid written to {}", x_grid.len(), grid.y_grid().len(), path.display()))
}

/// Contents of `metrics.json`. Criteria are `null` without a
/// log-likelihood matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub il1: f64,
    pub linf: f64,
    pub lpml: Option<f64>,
    pub neg_n_waic: Option<f64>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<String> {
    let config = args.config.resolve()?;
    let fitted = FittedSamples::load(&args.samples)?;
    let y_grid = config.grid.y_grid()?;
    let truth = match (&args.scenario, &args.truth_grid) {
        (Some(s), _) => true_density_grid(*s, &config.grid.x_grid(), &y_grid)?,
        (None, Some(path)) => DensityGrid::read_csv(open(path)?, y_grid)?,
        (None, None) => return Err(Error::Config("evaluate needs --scenario or --truth-grid".into())),
    };
    let est = fitted.density(truth.x_grid(), truth.y_grid())?;

    let default_loglik = args.samples.parent().unwrap_or(Path::new(".")).join(LOGLIK_FILE);
    let loglik_path: Option<PathBuf> = match &args.loglik {
        Some(path) => Some(path.clone()),
        None => default_loglik.exists().then_some(default_loglik),
    };
    let criteria = match &loglik_path {
        Some(path) => Some(fit_criteria(&read_loglik_csv(open(path)?)?.1)?),
        None => None,
    };
    let metrics = Metrics {
        il1: integrated_l1(&est, &truth)?,
        linf: l_infinity(&est, &truth)?,
        lpml: criteria.as_ref().map(|c| c.lpml),
        neg_n_waic: criteria.as_ref().map(|c| c.neg_n_waic),
    };

    let mut rec = RunRecorder::new("evaluate", &args.out)?;
    rec.input(&args.samples)?;
    if let Some(path) = &loglik_path {
        rec.input(path)?;
    }
    if let Some(path) = &args.truth_grid {
        rec.input(path)?;
    }
    if let Some(s) = args.scenario {
        rec.option("scenario", s);
    }
    rec.config_digest(config.digest()?);
    rec.write(METRICS_FILE, &json_bytes(&metrics)?)?;
    let mut csv = Vec::new();
    est.write_csv(&mut csv)?;
    rec.write(GRID_FILE, &csv)?;
    if args.scenario.is_some() {
        let mut csv = Vec::new();
        truth.write_csv(&mut csv)?;
        rec.write(TRUTH_GRID_FILE, &csv)?;
    }
    rec.finish()?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    Ok(format!(
        "IL1 {:.4}  Linf {:.4}  LPML {}  -nWAIC {}",
        metrics.il1,
        metrics.linf,
        fmt(metrics.lpml),
        fmt(metrics.neg_n_waic)
    ))
}

fn loglik_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(LOGLIK_FILE)
    } else {
        path.to_path_buf()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub criteria: FitCriteria,
}

/// Both fits ranked by LPML, then -nWAIC.
pub fn rank_fits(rows: &mut [ComparisonRow]) {
    rows.sort_by(|a, b| {
        b.criteria
            .lpml
            .total_cmp(&a.criteria.lpml)
            .then(b.criteria.neg_n_waic.total_cmp(&a.criteria.neg_n_waic))
    });
}

pub fn compare(args: &CompareArgs) -> Result<String> {
    let paths = [loglik_path(&args.a), loglik_path(&args.b)];
    let labels: Vec<String> = match args.labels.len() {
        0 => vec![args.a.display().to_string(), args.b.display().to_string()],
        2 => args.labels.clone(),
        _ => return Err(Error::Config("--labels takes two names, e.g. --labels dmbpp,pdr".into())),
    };
    let mut rows = Vec::new();
    for (path, label) in paths.iter().zip(&labels) {
        let (_, loglik) = read_loglik_csv(open(path)?)?;
        rows.push(ComparisonRow { label: label.clone(), criteria: fit_criteria(&loglik)? });
    }
    rank_fits(&mut rows);

    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut table = format!("{:<4}  {:<width$}  {:>14}  {:>14}  {:>8}\n", "rank", "model", "LPML", "-nWAIC", "excluded");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            table,
            "{:<4}  {:<width$}  {:>14.3}  {:>14.3}  {:>8}",
            i + 1,
            r.label,
            r.criteria.lpml,
            r.criteria.neg_n_waic,
            r.criteria.excluded_draws
        );
    }
    if (rows[0].criteria.neg_n_waic < rows[1].criteria.neg_n_waic) && rows[0].criteria.lpml != rows[1].criteria.lpml {
        table.push_str("note: LPML and -nWAIC rank the fits differently\n");
    }

    if let Some(out) = &args.out {
        let mut rec = RunRecorder::new("compare", out)?;
        for path in &paths {
            rec.input(path)?;
        }
        rec.option("labels", labels.join(","));
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["rank", "model", "lpml", "neg_n_waic", "excluded_draws"])?;
        for (i, r) in rows.iter().enumerate() {
            csv.write_record([
                (i + 1).to_string(),
                r.label.clone(),
                r.criteria.lpml.to_string(),
                r.criteria.neg_n_waic.to_string(),
                r.criteria.excluded_draws.to_string(),
            ])?;
        }
        rec.write(COMPARISON_FILE, &csv.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        rec.finish()?;
    }
    Ok(table)
}

fn canonical_prior_name(name: &str) -> Result<&'static str> {
    match name {
        "prior-I" | "prior-i" | "I" => Ok("prior-I"),
        "prior-II" | "prior-ii" | "II" => Ok("prior-II"),
        "config" => Ok("config"),
        other => Err(Error::Config(format!("unknown prior `{other}`; use prior-I, prior-II or config"))),
    }
}

#[derive(Serialize)]
struct StudyRecord<'a> {
    scale: Scale,
    seed: u64,
    replicates: usize,
    sizes: &'a [usize],
    scenarios: &'a [Scenario],
    priors: Vec<(&'a str, &'a PriorConfig)>,
    chain: &'a crate::sampler::ChainConfig,
    grid: &'a super::config::GridConfig,
}

pub fn replicate_study(args: &StudyArgs) -> Result<String> {
    let (config, digest) = match &args.config {
        Some(path) => {
            let config = RunConfig::load(path)?;
            let digest = config.digest()?;
            (config, Some(digest))
        }
        None => (RunConfig::defaults(args.scale), None),
    };
    let replicates = args.replicates.unwrap_or(match args.scale {
        Scale::Desk => 10,
        Scale::Full => 100,
    });
    let sizes = if args.n.is_empty() {
        match args.scale {
            Scale::Desk => vec![250],
            Scale::Full => vec![250, 500, 1000],
        }
    } else {
        args.n.clone()
    };
    let scenarios = if args.scenarios.is_empty() { Scenario::ALL.to_vec() } else { args.scenarios.clone() };
    let names: Vec<String> =
        if args.priors.is_empty() { vec!["prior-I".into(), "prior-II".into()] } else { args.priors.clone() };
    let mut priors = Vec::new();
    for name in &names {
        let name = canonical_prior_name(name)?;
        let prior = match name {
            "config" if args.config.is_none() => {
                return Err(Error::Config("prior `config` needs --config".into()));
            }
            "config" => config.prior.clone(),
            named => PriorConfig::named(named)?,
        };
        priors.push((name.to_string(), prior));
    }
    let plan = StudyPlan {
        seed: args.seed,
        replicates,
        sizes,
        scenarios,
        priors,
        chain: config.chain.clone(),
        grid: config.grid.clone(),
    };
    let results = run_study(&plan, args.jobs)?;
    let cells = summarize(&results);

    let mut rec = RunRecorder::new("replicate-study", &args.out)?;
    if let Some(path) = &args.config {
        rec.input(path)?;
    }
    if let Some(digest) = digest {
        rec.config_digest(digest);
    }
    rec.option("scale", args.scale).option("jobs", args.jobs).seed(args.seed);
    let record = StudyRecord {
        scale: args.scale,
        seed: plan.seed,
        replicates: plan.replicates,
        sizes: &plan.sizes,
        scenarios: &plan.scenarios,
        priors: plan.priors.iter().map(|(n, p)| (n.as_str(), p)).collect(),
        chain: &plan.chain,
        grid: &plan.grid,
    };
    rec.write("study.json", &json_bytes(&record)?)?;
    rec.write("replicates.csv", &replicates_csv(&results)?)?;
    rec.write("il1.csv", &il1_table_csv(&cells)?)?;
    rec.write("agreement.csv", &agreement_table_csv(&cells)?)?;
    rec.finish()?;

    let mut report = format!("{:<8}  {:<8}  {:>5}  {:>9}  {:>9}  {:>6}\n", "scenario", "prior", "n", "mean IL1", "agreement", "failed");
    for c in &cells {
        let _ = writeln!(
            report,
            "{:<8}  {:<8}  {:>5}  {:>9.3}  {:>9.2}  {:>6}",
            c.scenario.to_string(),
            c.prior,
            c.n,
            c.mean_il1,
            c.agreement,
            c.failed
        );
    }
    for r in results.iter().filter(|r| r.outcome.is_err()) {
        let _ = writeln!(
            report,
            "failed: scenario {} {} n={} replicate {}: {}",
            r.scenario,
            r.prior,
            r.n,
            r.replicate + 1,
            r.outcome.as_ref().err().map_or("", String::as_str)
        );
    }
    Ok(report)
}

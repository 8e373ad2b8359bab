//! The four simulation truths and their data generators. All scenarios live
//! on the 2-simplex with a single covariate uniform on `(0, 1)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::SelectionIndicators;
use crate::sampler::chain_rng;
use crate::simplex::{dirichlet_log_density, log_sum_exp, DirichletParam, SimplexPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
    III,
    IV,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::I, Scenario::II, Scenario::III, Scenario::IV];

    /// Which of weights and atoms depend on the covariate.
    pub fn true_structure(self) -> SelectionIndicators {
        match self {
            Scenario::I => SelectionIndicators { eta: true, z: true },
            Scenario::II => SelectionIndicators { eta: false, z: true },
            Scenario::III => SelectionIndicators { eta: true, z: false },
            Scenario::IV => SelectionIndicators { eta: false, z: false },
        }
    }

    /// Mixture weights and Dirichlet parameters at covariate `x`.
    pub fn components(self, x: f64) -> Vec<(f64, [f64; 3])> {
        let w = w1(x);
        match self {
            Scenario::I => vec![(w, theta1(x)), (1.0 - w, theta2(x))],
            Scenario::II => vec![(0.6, theta1(x)), (0.2, theta2(x)), (0.2, theta3(x))],
            Scenario::III => vec![(w, [10.0, 12.0, 12.0]), (1.0 - w, [24.0, 6.0, 6.0])],
            Scenario::IV => vec![(1.0, [35.0, 25.0, 40.0])],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
            Scenario::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            "IV" | "4" => Ok(Scenario::IV),
            other => Err(Error::Config(format!("unknown scenario `{other}` (expected I, II, III or IV)"))),
        }
    }
}

/// `x / (4 - 3x)`.
pub fn w1(x: f64) -> f64 {
    x / (4.0 - 3.0 * x)
}

pub fn theta1(x: f64) -> [f64; 3] {
    [25.0 - 20.0 * x, 5.0 + 25.0 * x, 3.0]
}

pub fn theta2(x: f64) -> [f64; 3] {
    [5.0, 5.0 + 15.0 * x, 30.0 - 17.0 * x]
}

pub fn theta3(x: f64) -> [f64; 3] {
    [5.0 + 9.0 * x, 30.0 + 9.0 * x, 3.0 + 9.0 * x]
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("covariate must lie in (0, 1), got {x}")));
    }
    Ok(())
}

/// Log density of the scenario mixture at an interior `y`.
pub fn true_log_density(s: Scenario, y: &SimplexPoint, x: f64) -> Result<f64> {
    check_x(x)?;
    if y.dim() != 2 || !y.is_interior() {
        return Err(Error::Domain("scenario densities are evaluated at interior points of the 2-simplex".into()));
    }
    let terms = s
        .components(x)
        .into_iter()
        .map(|(w, alpha)| Ok(w.ln() + dirichlet_log_density(y, &DirichletParam::new(alpha.to_vec())?)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_sum_exp(&terms))
}

/// Dirichlet draw through normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<SimplexPoint> {
    let mut g = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let dist = Gamma::new(a, 1.0).map_err(|e| Error::Domain(format!("gamma shape {a}: {e}")))?;
        g.push(dist.sample(rng));
    }
    let total: f64 = g.iter().sum();
    let coords: Vec<f64> = g[..alpha.len() - 1].iter().map(|v| v / total).collect();
    SimplexPoint::new(coords)
}

/// Mixture component index and response drawn at covariate `x`.
pub fn sample_observation<R: Rng + ?Sized>(s: Scenario, x: f64, rng: &mut R) -> Result<(usize, SimplexPoint)> {
    check_x(x)?;
    let comps = s.components(x);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = comps.len() - 1;
    for (c, (w, _)) in comps.iter().enumerate() {
        acc += w;
        if u < acc {
            pick = c;
            break;
        }
    }
    Ok((pick, sample_dirichlet(&comps[pick].1, rng)?))
}

/// `n` draws with `x ~ Uniform(0, 1)`; replicate `r` uses RNG stream `r`.
pub fn sample_dataset_stream(s: Scenario, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
    let mut rng = chain_rng(seed, stream);
    sample_with(s, n, &mut rng)
}

pub fn sample_dataset(s: Scenario, n: usize, seed: u64) -> Result<Dataset> {
    sample_dataset_stream(s, n, seed, 0)
}

fn sample_with(s: Scenario, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let mut data = Dataset::new(2, 1);
    for _ in 0..n {
        // open interval: a zero draw is redrawn
        let x = loop {
            let v: f64 = rng.random();
            if v > 0.0 {
                break v;
            }
        };
        let (_, y) = sample_observation(s, x, rng)?;
        data.push(y, vec![x])?;
    }
    Ok(data)
}

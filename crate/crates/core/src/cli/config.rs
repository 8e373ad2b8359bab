//! Run configuration file.
//!
//! A TOML document with a `schema_version` key and four tables. Every key is
//! required; missing or unknown keys are reported with their dotted path.
//!
//! ```toml
//! schema_version = 1
//!
//! [prior]
//! lambda = 25.0        # Poisson rate of the degree k
//! sigma2_eta = 100.0   # intercept variances
//! sigma2_z = 100.0
//! tau1_eta = 0.01      # spike scale
//! tau2_eta = 100.0     # slab scale
//! tau1_z = 0.01
//! tau2_z = 100.0
//! t = 2.0              # selection prior parameter
//! truncation = 20      # stick-breaking level N
//! k_max = 200
//!
//! [chain]
//! n_iter = 11000
//! burn_in = 1000
//! thin = 10
//! seed = 1
//! slice_width = 1.0
//! slice_max_doublings = 10
//! k_proposal_halfwidth = 3
//! gamma_update = "collapsed"   # or "full"
//! gamma_scale_move = true
//! initial_gammas = { eta = true, z = true }
//!
//! [pdr]
//! variant = "full"             # or "fixed-last"
//! prior_variance = 100.0
//! transform = true
//!
//! [grid]
//! y_spacing = 0.02
//! x_points = 19
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{default_x_grid, DEFAULT_X_GRID_SIZE, DEFAULT_Y_SPACING};
use crate::model::PriorConfig;
use crate::pdr::PdrOptions;
use crate::sampler::ChainConfig;
use crate::simplex::SimplexGrid;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Full,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Lattice spacing of the interior response grid.
    pub y_spacing: f64,
    /// Number of equispaced covariate values `j / (x_points + 1)`.
    pub x_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { y_spacing: DEFAULT_Y_SPACING, x_points: DEFAULT_X_GRID_SIZE }
    }
}

impl GridConfig {
    pub fn y_grid(&self) -> Result<SimplexGrid> {
        SimplexGrid::interior(self.y_spacing)
    }

    pub fn x_grid(&self) -> Vec<Vec<f64>> {
        default_x_grid(self.x_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub prior: PriorConfig,
    pub chain: ChainConfig,
    pub pdr: PdrOptions,
    pub grid: GridConfig,
}

impl RunConfig {
    /// Prior I with the chain lengths of `scale`.
    pub fn defaults(scale: Scale) -> Self {
        let chain = match scale {
            Scale::Desk => ChainConfig::desk(),
            Scale::Full => ChainConfig::full(),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            prior: PriorConfig::prior_i(),
            chain,
            pdr: PdrOptions::default(),
            grid: GridConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let expected = toml::Table::try_from(Self::defaults(Scale::Desk))
            .map_err(|e| Error::Config(e.to_string()))?;
        check_keys(&expected, &doc, "")?;
        let config: Self = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version is {}, this build reads {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.prior.validate()?;
        self.chain.validate()?;
        if !(self.pdr.prior_variance > 0.0 && self.pdr.prior_variance.is_finite()) {
            return Err(Error::Config("pdr.prior_variance must be positive".into()));
        }
        if !(self.grid.y_spacing > 0.0 && self.grid.y_spacing < 0.5) {
            return Err(Error::Config("grid.y_spacing must lie in (0, 0.5)".into()));
        }
        if self.grid.x_points == 0 {
            return Err(Error::Config("grid.x_points must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_keys(expected: &toml::Table, actual: &toml::Table, prefix: &str) -> Result<()> {
    let path = |key: &str| if prefix.is_empty() { key.to_string() } else { format!("{prefix}.{key}") };
    for (key, value) in expected {
        match actual.get(key) {
            None => return Err(Error::Config(format!("missing key `{}`", path(key)))),
            Some(toml::Value::Table(inner)) => {
                if let toml::Value::Table(want) = value {
                    check_keys(want, inner, &path(key))?;
                }
            }
            Some(_) => {}
        }
    }
    if let Some(key) = actual.keys().find(|k| !expected.contains_key(*k)) {
        return Err(Error::Config(format!("unknown key `{}`", path(key))));
    }
    Ok(())
}

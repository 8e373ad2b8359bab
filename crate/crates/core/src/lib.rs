//! Density regression for compositional responses with dependent
//! multivariate Bernstein polynomial processes.

pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod mbp;
pub mod model;
pub mod pdr;
pub mod sampler;
pub mod simgen;
pub mod simplex;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

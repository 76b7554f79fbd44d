//! Likelihood-free inference with Bayes linear estimation: rejection ABC,
//! semi-automatic summary statistics, regression and marginal adjustment,
//! and test models with exact posterior oracles.

pub mod abc;
pub mod bayes_linear;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod marginal;
pub mod mat;
pub mod models;
pub mod regression;
pub mod rng;
pub mod semiauto;

pub use error::{Error, Result};

//! Bayesian estimation of HIV epidemics in many areas at once.
//!
//! Each area is fitted independently with incremental mixture importance
//! sampling over an r-trend compartment model; the per-area ensembles are
//! then pooled under a two-level Gaussian prior by importance reweighting.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod likelihood;
pub mod normal;
pub mod par;
pub mod pooling;
pub mod priors;
pub mod sampler;

pub use data::{AreaDataset, Demography, ParamVector};
pub use error::{Error, Result};

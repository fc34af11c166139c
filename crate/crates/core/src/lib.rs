//! Bout detection and a two-part Bayesian measurement-error model for usual
//! daily moderate-to-vigorous physical activity (MVPA).
//!
//! Pipeline: minute-level METs → [`bouts`] (daily bout count `y1` and excess
//! MET-minutes `y2`) → [`mcmc`] (Generalized Poisson / lognormal model with
//! correlated person effects) → [`diagnose`], [`assess`], [`usual`].

pub mod assess;
pub mod bouts;
pub mod diagnose;
pub mod dist;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod mcmc;
pub mod simulate;
pub mod stats;
pub mod usual;

pub use bouts::{BoutConfig, BoutInterval, DayObservation};
pub use error::{Error, Result};
pub use ingest::{CovariateRecord, DesignMatrix, DesignSpec, MinuteSeries};
pub use linalg::Sym2;
pub use mcmc::{ChainConfig, CountFamily, ModelData, ModelParams, ParamState, PosteriorDraws, PriorConfig, PriorPreset};

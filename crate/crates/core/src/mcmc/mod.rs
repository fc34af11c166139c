//! Metropolis-within-Gibbs sampler for the two-part random-effects model.

mod archive;
mod chain;
mod kernel;
mod model;
mod prior;

#[cfg(test)]
mod tests;

pub use archive::{read_draws_binary, read_draws_csv, write_draws_binary, write_draws_csv, CSV_HEADER};
pub use chain::{
    chain_rng, data_fingerprint, initial_state, run_chains, AcceptanceLedger, ChainCheckpoint, ChainConfig,
    ChainDraws, Checkpoint, PosteriorDraws, RngSnapshot, Sampler,
};
pub use kernel::{
    sample_inv_gamma, sample_inv_wishart2, AcceptCounts, Counter, Kernel, KernelOptions, Proposals,
};
pub use model::{count_loglik, joint_loglik, CountFamily, CountKernel, DayDatum, ModelData, ModelParams, ParamState};
pub use prior::{PriorConfig, PriorPreset};

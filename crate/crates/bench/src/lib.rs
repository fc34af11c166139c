//! Fixtures shared by the benchmarks.

use mvpa_core::ingest::DesignMatrix;
use mvpa_core::mcmc::{initial_state, CountFamily, ModelData, ParamState, PriorConfig, PriorPreset};
use mvpa_core::simulate::{pams_like_design, simulate_dataset, table2_truth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A 1440-minute MET trace with roughly `density` of its minutes active.
pub fn random_day(density: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..1440)
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(3.0..7.0)
            } else {
                rng.random_range(1.0..2.9)
            }
        })
        .collect()
}

pub struct Problem {
    pub design: DesignMatrix,
    pub data: ModelData,
    pub prior: PriorConfig,
    pub state: ParamState,
}

/// PAMS-scale simulated data with a starting state.
pub fn problem(n: usize, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = pams_like_design(n, &mut rng).expect("design");
    let truth = table2_truth(design.columns());
    let sim = simulate_dataset(&truth, CountFamily::GenPoisson, &design, 2, &mut rng).expect("simulation");
    let data = ModelData::new(&sim.days, &design).expect("data");
    let prior = PriorConfig::preset(PriorPreset::Paper, design.p());
    let state = initial_state(&data, &prior, CountFamily::GenPoisson, 1).expect("initial state");
    Problem {
        design,
        data,
        prior,
        state,
    }
}

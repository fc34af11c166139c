//! Run configuration: one TOML file with a section per stage. Every key has
//! a default, so an empty file (or none) is valid; `--print-config` shows
//! the effective values.

use std::path::Path;

use mvpa_core::bouts::BoutConfig;
use mvpa_core::ingest::{CountConversion, Covariate, DesignSpec, IntensityKind};
use mvpa_core::mcmc::{ChainConfig, CountFamily, PriorPreset};
use mvpa_core::usual::{DEFAULT_DRAWS, PAG_DAILY};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bouts: BoutConfig,
    pub ingest: IngestSection,
    pub design: DesignSection,
    pub model: ModelSection,
    pub mcmc: McmcSection,
    pub assess: AssessSection,
    pub usual: UsualSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub intensity: IntensityKind,
    /// Persons with a day above this many bout MET-minutes are removed.
    pub outlier_cap: f64,
    /// Top pooled category of the day-pair table used by `preflight`.
    pub pair_cap: u32,
    /// Required when `intensity = "count"`.
    pub count_conversion: Option<CountConversion>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            intensity: IntensityKind::Met,
            outlier_cap: 2500.0,
            pair_cap: mvpa_core::diagnose::DEFAULT_PAIR_CAP,
            count_conversion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub intercept: bool,
    pub covariates: Vec<Covariate>,
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = DesignSpec::default();
        Self {
            intercept: d.intercept,
            covariates: d.covariates,
        }
    }
}

impl DesignSection {
    pub fn spec(&self) -> DesignSpec {
        DesignSpec {
            intercept: self.intercept,
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: CountFamily,
    /// `paper`, `set2`, `set3` or `set4`.
    pub prior: PriorPreset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub chains: usize,
    pub iters: u64,
    pub burnin: u64,
    pub thin: u64,
    pub adapt_window: u64,
    /// Iterations between checkpoint files.
    pub checkpoint_every: u64,
    pub re_steps: usize,
    pub disp_steps: usize,
    pub centered_moves: bool,
    pub expansion_moves: bool,
    pub collapsed_moves: bool,
    pub zero_shift_moves: bool,
}

impl Default for McmcSection {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self {
            chains: c.n_chains,
            iters: c.n_iter,
            burnin: c.n_burnin,
            thin: c.thin,
            adapt_window: c.adapt_window,
            checkpoint_every: 5_000,
            re_steps: c.re_steps,
            disp_steps: c.disp_steps,
            centered_moves: c.centered_moves,
            expansion_moves: c.expansion_moves,
            collapsed_moves: c.collapsed_moves,
            zero_shift_moves: c.zero_shift_moves,
        }
    }
}

impl McmcSection {
    pub fn chain_config(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            n_chains: self.chains,
            n_iter: self.iters,
            n_burnin: self.burnin,
            thin: self.thin,
            seed,
            adapt_window: self.adapt_window,
            re_steps: self.re_steps,
            disp_steps: self.disp_steps,
            centered_moves: self.centered_moves,
            expansion_moves: self.expansion_moves,
            collapsed_moves: self.collapsed_moves,
            zero_shift_moves: self.zero_shift_moves,
            ..ChainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessSection {
    pub replicates: usize,
    /// Also fit the negative-binomial count model and report both.
    pub compare_nb: bool,
}

impl Default for AssessSection {
    fn default() -> Self {
        Self {
            replicates: mvpa_core::assess::DEFAULT_REPLICATES,
            compare_nb: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsualSection {
    /// Posterior draws used (fewer if the archive is smaller).
    pub draws: usize,
    /// MET-minutes per day.
    pub threshold: f64,
    pub grid_max: f64,
    pub grid_step: f64,
}

impl Default for UsualSection {
    fn default() -> Self {
        Self {
            draws: DEFAULT_DRAWS,
            threshold: PAG_DAILY,
            grid_max: 300.0,
            grid_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub persons: usize,
    pub days: usize,
    pub family: CountFamily,
    /// Overrides the default count dispersion of the generating truth.
    pub dispersion: Option<f64>,
    /// Also write minute-level MET traces.
    pub minutes: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            persons: 1057,
            days: 2,
            family: CountFamily::GenPoisson,
            dispersion: None,
            minutes: false,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::format(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if !(self.ingest.outlier_cap > 0.0) {
            return bad(format!("ingest.outlier_cap must be positive, got {}", self.ingest.outlier_cap));
        }
        if self.ingest.intensity == IntensityKind::Count && self.ingest.count_conversion.is_none() {
            return bad("ingest.intensity = \"count\" needs an [ingest.count_conversion] table".into());
        }
        if self.mcmc.checkpoint_every == 0 {
            return bad("mcmc.checkpoint_every must be at least 1".into());
        }
        if !(self.usual.threshold > 0.0) {
            return bad(format!("usual.threshold must be positive, got {}", self.usual.threshold));
        }
        if !(self.usual.grid_step > 0.0 && self.usual.grid_max > 0.0) {
            return bad("usual.grid_max and usual.grid_step must be positive".into());
        }
        if self.usual.draws == 0 || self.assess.replicates == 0 {
            return bad("usual.draws and assess.replicates must be at least 1".into());
        }
        if self.simulate.persons == 0 || self.simulate.days == 0 {
            return bad("simulate.persons and simulate.days must be at least 1".into());
        }
        self.mcmc.chain_config(0).validate()?;
        Ok(())
    }
}

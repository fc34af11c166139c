use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Sym2;

/// Named prior sets: the default analysis prior plus three sensitivity sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorPreset {
    #[default]
    Paper,
    Set2,
    Set3,
    Set4,
}

impl std::str::FromStr for PriorPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" | "default" | "set1" => Ok(Self::Paper),
            "set2" => Ok(Self::Set2),
            "set3" => Ok(Self::Set3),
            "set4" => Ok(Self::Set4),
            other => Err(Error::Config(format!("unknown prior preset `{other}` (paper|set2|set3|set4)"))),
        }
    }
}

impl std::fmt::Display for PriorPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Set2 => "set2",
            Self::Set3 => "set3",
            Self::Set4 => "set4",
        })
    }
}

/// Hyperparameters of the model.
///
/// Covariances are stored row-major as nested vectors so the whole prior
/// round-trips through JSON/TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub gamma_mean: Vec<f64>,
    pub gamma_cov: Vec<Vec<f64>>,
    pub beta_mean: Vec<f64>,
    pub beta_cov: Vec<Vec<f64>>,
    /// Inverse-Wishart degrees of freedom `d0` for Σ_b.
    pub iw_df: f64,
    /// Inverse-Wishart scale `D0`.
    pub iw_scale: Sym2,
    /// Inverse-Gamma shape `a0` for σ_y².
    pub ig_shape: f64,
    /// Inverse-Gamma rate `b0`.
    pub ig_rate: f64,
    /// Support of the uniform prior on λ.
    pub lambda_bounds: (f64, f64),
    /// Gamma(shape, rate) prior on the negative-binomial dispersion κ.
    pub kappa_shape: f64,
    pub kappa_rate: f64,
}

fn scaled_identity(p: usize, v: f64) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { v } else { 0.0 }).collect())
        .collect()
}

impl PriorConfig {
    pub fn preset(preset: PriorPreset, p: usize) -> Self {
        let (mean, var, df, scale, a0, b0) = match preset {
            PriorPreset::Paper => (0.0, 100.0, 3.0, 1.0, 0.01, 0.01),
            PriorPreset::Set2 => (0.0, 1000.0, 8.0, 5.0, 5.0, 5.0),
            PriorPreset::Set3 => (0.0, 1.0, 4.0, 0.1, 0.1, 0.1),
            PriorPreset::Set4 => (5.0, 100.0, 4.0, 1.0, 0.1, 0.1),
        };
        Self {
            gamma_mean: vec![mean; p],
            gamma_cov: scaled_identity(p, var),
            beta_mean: vec![mean; p],
            beta_cov: scaled_identity(p, var),
            iw_df: df,
            iw_scale: Sym2::diag(scale, scale),
            ig_shape: a0,
            ig_rate: b0,
            lambda_bounds: (0.0, 1.0),
            kappa_shape: 1.0,
            kappa_rate: 0.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma_mean.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.gamma_mean.len() != p || self.beta_mean.len() != p {
            return bad(format!("prior means must have length {p}"));
        }
        for (name, cov) in [("gamma", &self.gamma_cov), ("beta", &self.beta_cov)] {
            if cov.len() != p || cov.iter().any(|r| r.len() != p) {
                return bad(format!("{name} prior covariance must be {p}x{p}"));
            }
            let m = to_matrix(cov);
            if (&m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) || m.clone().cholesky().is_none() {
                return bad(format!("{name} prior covariance must be symmetric positive definite"));
            }
        }
        if !(self.ig_shape > 0.0 && self.ig_rate > 0.0) {
            return bad("inverse-gamma shape and rate must be positive".into());
        }
        if !(self.iw_df > 1.0) {
            return bad(format!("inverse-Wishart df {} must exceed 1", self.iw_df));
        }
        if !self.iw_scale.is_pd() {
            return bad("inverse-Wishart scale must be positive definite".into());
        }
        let (lo, hi) = self.lambda_bounds;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad(format!("lambda bounds ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"));
        }
        if !(self.kappa_shape > 0.0 && self.kappa_rate > 0.0) {
            return bad("kappa prior shape and rate must be positive".into());
        }
        Ok(())
    }
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |i, j| rows[i][j])
}

/// Precisions and precision-weighted means derived once per run.
#[derive(Debug, Clone)]
pub(crate) struct PriorCache {
    pub gamma_prec: DMatrix<f64>,
    pub gamma_prec_mean: DVector<f64>,
    pub gamma_mean: DVector<f64>,
    pub beta_prec: DMatrix<f64>,
    pub beta_prec_mean: DVector<f64>,
}

impl PriorCache {
    pub fn new(prior: &PriorConfig) -> Result<Self> {
        let inv = |rows: &[Vec<f64>]| {
            to_matrix(rows)
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| Error::Config("prior covariance is not positive definite".into()))
        };
        let gamma_prec = inv(&prior.gamma_cov)?;
        let beta_prec = inv(&prior.beta_cov)?;
        let gamma_mean = DVector::from_vec(prior.gamma_mean.clone());
        let beta_mean = DVector::from_vec(prior.beta_mean.clone());
        Ok(Self {
            gamma_prec_mean: &gamma_prec * &gamma_mean,
            beta_prec_mean: &beta_prec * &beta_mean,
            gamma_prec,
            gamma_mean,
            beta_prec,
        })
    }

    /// `−½ (γ − m0)ᵀ V0⁻¹ (γ − m0)`.
    pub fn gamma_logprior(&self, gamma: &[f64]) -> f64 {
        let d = DVector::from_column_slice(gamma) - &self.gamma_mean;
        -0.5 * d.dot(&(&self.gamma_prec * &d))
    }
}

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assess::negbin;
use crate::bouts::DayObservation;
use crate::dist::{genpois_logpmf_parts, lognormal_logpdf_log, sample_branching};
use crate::error::{Error, Result};
use crate::ingest::DesignMatrix;
use crate::linalg::{bvn_logpdf, Sym2};
use crate::stats::ln_gamma;

/// Count law for the daily bout number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CountFamily {
    /// Generalized Poisson with dispersion λ ∈ (0, 1).
    #[default]
    GenPoisson,
    /// Negative binomial with mean μ and variance μ(1 + μ/κ).
    NegBinomial,
}

impl CountFamily {
    #[inline]
    pub fn log_pmf(self, y: u32, ln_fact: f64, ln_mu: f64, disp: f64) -> f64 {
        match self {
            Self::GenPoisson => genpois_logpmf_parts(y, ln_fact, ln_mu, disp),
            Self::NegBinomial => negbin::logpmf_parts(y, ln_fact, ln_mu, disp),
        }
    }

    pub fn p_zero(self, mu: f64, disp: f64) -> f64 {
        match self {
            Self::GenPoisson => (-mu * (1.0 - disp)).exp(),
            Self::NegBinomial => negbin::p_zero(mu, disp),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, mu: f64, disp: f64, rng: &mut R) -> u32 {
        let y = match self {
            Self::GenPoisson => sample_branching(mu * (1.0 - disp), disp, rng),
            Self::NegBinomial => negbin::sample(mu, disp, rng),
        };
        y.min(u32::MAX as u64) as u32
    }

    /// Approximate Fisher information for `ln μ` from one observation near `mu`.
    pub fn log_mean_information(self, mu: f64, disp: f64) -> f64 {
        match self {
            Self::GenPoisson => mu * (1.0 - disp) * (1.0 - disp),
            Self::NegBinomial => mu / (1.0 + mu / disp),
        }
    }

    pub fn dispersion_name(self) -> &'static str {
        match self {
            Self::GenPoisson => "lambda",
            Self::NegBinomial => "kappa",
        }
    }
}

/// Count law with its dispersion-only constants precomputed, for loops that
/// evaluate many observations at one dispersion value.
#[derive(Debug, Clone)]
pub enum CountKernel {
    GenPoisson { lambda: f64, ln1m: f64 },
    NegBinomial { kappa: f64, ln_kappa: f64, rising: Vec<f64> },
}

impl CountFamily {
    /// Prepare the kernel; `max_y` sizes the negative-binomial lookup table.
    pub fn kernel(self, disp: f64, max_y: u32) -> CountKernel {
        match self {
            Self::GenPoisson => CountKernel::GenPoisson {
                lambda: disp,
                ln1m: (-disp).ln_1p(),
            },
            Self::NegBinomial => {
                let mut rising = Vec::with_capacity(max_y as usize + 1);
                rising.push(0.0);
                let mut acc = 0.0;
                for k in 0..max_y {
                    acc += (disp + k as f64).ln();
                    rising.push(acc);
                }
                CountKernel::NegBinomial {
                    kappa: disp,
                    ln_kappa: disp.ln(),
                    rising,
                }
            }
        }
    }
}

impl CountKernel {
    #[inline]
    pub fn log_pmf(&self, y: u32, ln_fact: f64, ln_mu: f64) -> f64 {
        match self {
            Self::GenPoisson { lambda, ln1m } => {
                let ln_theta = ln_mu + ln1m;
                let theta = ln_theta.exp();
                if y == 0 {
                    return -theta;
                }
                let xf = y as f64;
                let inner = theta + xf * lambda;
                ln_theta + (xf - 1.0) * inner.ln() - inner - ln_fact
            }
            Self::NegBinomial { kappa, ln_kappa, rising } => {
                let hi = ln_kappa.max(ln_mu);
                let ln_k_mu = hi + ((ln_kappa.min(ln_mu) - hi).exp()).ln_1p();
                let mut v = kappa * (ln_kappa - ln_k_mu);
                if y > 0 {
                    let r = match rising.get(y as usize) {
                        Some(r) => *r,
                        None => ln_gamma(kappa + y as f64) - ln_gamma(*kappa),
                    };
                    v += r - ln_fact + y as f64 * (ln_mu - ln_k_mu);
                }
                v
            }
        }
    }

    /// Sum over one person's days sharing the same mean.
    #[inline]
    pub fn person_loglik(&self, days: &[DayDatum], ln_mu: f64) -> f64 {
        match self {
            Self::GenPoisson { lambda, ln1m } => {
                let ln_theta = ln_mu + ln1m;
                let theta = ln_theta.exp();
                let mut total = 0.0;
                for d in days {
                    total -= theta;
                    if d.y1 > 0 {
                        let xf = d.y1 as f64;
                        let inner = theta + xf * lambda;
                        total += ln_theta + (xf - 1.0) * inner.ln() - xf * lambda - d.ln_fact;
                    }
                }
                total
            }
            Self::NegBinomial { .. } => days.iter().map(|d| self.log_pmf(d.y1, d.ln_fact, ln_mu)).sum(),
        }
    }
}

impl std::str::FromStr for CountFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" | "genpois" | "gen_poisson" => Ok(Self::GenPoisson),
            "nb" | "negbin" | "neg_binomial" => Ok(Self::NegBinomial),
            other => Err(Error::Config(format!("unknown count family `{other}` (gp|nb)"))),
        }
    }
}

/// Population-level parameters: one posterior draw without the person effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Count dispersion: λ for the Generalized Poisson kernel, κ for the
    /// negative-binomial comparison kernel.
    pub lambda: f64,
    pub sigma2_y: f64,
    pub sigma_b: Sym2,
}

impl ModelParams {
    pub fn validate(&self, family: CountFamily) -> Result<()> {
        let disp_ok = match family {
            CountFamily::GenPoisson => self.lambda > 0.0 && self.lambda < 1.0,
            CountFamily::NegBinomial => self.lambda > 0.0 && self.lambda.is_finite(),
        };
        if !disp_ok {
            return Err(Error::Invalid(format!("dispersion {} out of range", self.lambda)));
        }
        if !(self.sigma2_y > 0.0 && self.sigma2_y.is_finite()) {
            return Err(Error::Invalid(format!("σ_y² = {} must be positive", self.sigma2_y)));
        }
        if !self.sigma_b.is_pd() {
            return Err(Error::Invalid(format!("Σ_b {:?} is not positive definite", self.sigma_b)));
        }
        if self.gamma.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite regression coefficient".into()));
        }
        Ok(())
    }

    /// Scalar summaries in archive order: γ, β, dispersion, σ_y², Σ_b entries, ρ_b.
    pub fn scalars(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.gamma.len() + self.beta.len() + 6);
        v.extend(&self.gamma);
        v.extend(&self.beta);
        v.push(self.lambda);
        v.push(self.sigma2_y);
        v.push(self.sigma_b.a);
        v.push(self.sigma_b.c);
        v.push(self.sigma_b.b);
        v.push(self.sigma_b.corr());
        v
    }

    pub fn scalar_names(columns: &[String], family: CountFamily) -> Vec<String> {
        let mut v: Vec<String> = columns.iter().map(|c| format!("gamma.{c}")).collect();
        v.extend(columns.iter().map(|c| format!("beta.{c}")));
        v.push(family.dispersion_name().to_string());
        for s in ["sigma2_y", "sigma2_b1", "sigma2_b2", "cov_b12", "rho_b"] {
            v.push(s.to_string());
        }
        v
    }
}

/// Full sampler state: population parameters plus `(b1i, b2i)` per person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub params: ModelParams,
    pub b: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayDatum {
    pub y1: u32,
    pub ln_fact: f64,
    /// `ln y2` on days with at least one bout.
    pub log_y2: Option<f64>,
}

impl DayDatum {
    pub fn new(y1: u32, y2: f64) -> Result<Self> {
        if (y1 == 0) != (y2 == 0.0) || !(y2 >= 0.0 && y2.is_finite()) {
            return Err(Error::Invalid(format!(
                "y2 must be positive exactly when y1 is (y1={y1}, y2={y2})"
            )));
        }
        Ok(Self {
            y1,
            ln_fact: ln_gamma(y1 as f64 + 1.0),
            log_y2: (y1 > 0).then(|| y2.ln()),
        })
    }
}

/// Observations grouped by person and aligned with the design rows, plus
/// cross-products reused by every sweep.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub person_ids: Vec<String>,
    pub columns: Vec<String>,
    pub days: Vec<Vec<DayDatum>>,
    z: Vec<f64>,
    p: usize,
    /// Σ over positive days of `Z_i Z_iᵀ`.
    pub(crate) ztz_positive: DMatrix<f64>,
    /// Σ over persons of `Z_i Z_iᵀ`.
    pub(crate) ztz: DMatrix<f64>,
    pub(crate) n_positive: usize,
    pub(crate) max_y1: u32,
}

impl ModelData {
    /// Pair day observations with design rows by `person_id`.
    pub fn new(days: &[DayObservation], design: &DesignMatrix) -> Result<Self> {
        let index: HashMap<&str, usize> = design
            .person_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut grouped: Vec<Vec<(u8, DayDatum)>> = vec![Vec::new(); design.n()];
        for d in days {
            let &i = index
                .get(d.person_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("person {} has no covariate row", d.person_id)))?;
            let datum = DayDatum::new(d.y1, d.y2).map_err(|e| Error::Invalid(format!("{}: {e}", d.person_id)))?;
            grouped[i].push((d.day_index, datum));
        }
        let mut per_person = Vec::with_capacity(design.n());
        for (i, mut g) in grouped.into_iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Invalid(format!("person {} has no observed days", design.person_ids[i])));
            }
            g.sort_by_key(|(d, _)| *d);
            per_person.push(g.into_iter().map(|(_, d)| d).collect());
        }
        let rows = (0..design.n()).map(|i| design.row(i).to_vec()).collect();
        Self::from_parts(design.person_ids.clone(), design.columns().to_vec(), rows, per_person)
    }

    pub fn from_parts(
        person_ids: Vec<String>,
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        days: Vec<Vec<DayDatum>>,
    ) -> Result<Self> {
        let n = rows.len();
        let p = columns.len();
        if days.len() != n || person_ids.len() != n || rows.iter().any(|r| r.len() != p) {
            return Err(Error::Invalid("design rows, ids and days must align".into()));
        }
        let z: Vec<f64> = rows.into_iter().flatten().collect();
        let mut ztz = DMatrix::zeros(p, p);
        let mut ztz_positive = DMatrix::zeros(p, p);
        let mut n_positive = 0;
        for (i, person_days) in days.iter().enumerate() {
            let zi = &z[i * p..(i + 1) * p];
            let k = person_days.iter().filter(|d| d.log_y2.is_some()).count();
            n_positive += k;
            for a in 0..p {
                for c in 0..p {
                    let v = zi[a] * zi[c];
                    ztz[(a, c)] += v;
                    ztz_positive[(a, c)] += k as f64 * v;
                }
            }
        }
        let max_y1 = days.iter().flatten().map(|d| d.y1).max().unwrap_or(0);
        Ok(Self {
            max_y1,
            person_ids,
            columns,
            days,
            z,
            p,
            ztz_positive,
            ztz,
            n_positive,
        })
    }

    pub fn n(&self) -> usize {
        self.days.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_positive(&self) -> usize {
        self.n_positive
    }

    pub fn max_y1(&self) -> u32 {
        self.max_y1
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn linear(&self, i: usize, coef: &[f64]) -> f64 {
        self.row(i).iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    /// Same data with new observations (used when re-simulating outcomes).
    pub fn with_days(&self, days: Vec<Vec<DayDatum>>) -> Result<Self> {
        let rows = (0..self.n()).map(|i| self.row(i).to_vec()).collect();
        Self::from_parts(self.person_ids.clone(), self.columns.clone(), rows, days)
    }
}

/// Sum of the count log-likelihood over all person-days.
pub fn count_loglik(state: &ParamState, data: &ModelData, family: CountFamily, gamma: &[f64], disp: f64) -> f64 {
    let mut total = 0.0;
    for (i, days) in data.days.iter().enumerate() {
        let ln_mu = data.linear(i, gamma) + state.b[i][0];
        for d in days {
            total += family.log_pmf(d.y1, d.ln_fact, ln_mu, disp);
        }
    }
    total
}

/// Log of the complete-data likelihood at a given state: count terms, the
/// lognormal terms of positive days, and the random-effect density.
///
/// Because `y2 > 0` exactly when `y1 > 0`, the participation probability
/// only enters through the count law's zero mass.
pub fn joint_loglik(state: &ParamState, data: &ModelData, family: CountFamily) -> Result<f64> {
    let p = &state.params;
    let inv = p.sigma_b.inverse()?;
    let log_det = p.sigma_b.det().ln();
    let mut total = 0.0;
    for (i, days) in data.days.iter().enumerate() {
        let [b1, b2] = state.b[i];
        let ln_mu = data.linear(i, &p.gamma) + b1;
        let mu2 = data.linear(i, &p.beta) + b2;
        let mut li = bvn_logpdf([b1, b2], &inv, log_det);
        for d in days {
            li += family.log_pmf(d.y1, d.ln_fact, ln_mu, p.lambda);
            if let Some(ly) = d.log_y2 {
                li += lognormal_logpdf_log(ly, mu2, p.sigma2_y);
            }
        }
        if !li.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite log-likelihood contribution for person {}",
                data.person_ids[i]
            )));
        }
        total += li;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{genpois_logpmf, GenPoissonParams, LogNormalParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(days: &[(u32, f64)]) -> ModelData {
        ModelData::from_parts(
            vec!["a".into()],
            vec!["x0".into()],
            vec![vec![1.0]],
            vec![days.iter().map(|&(a, b)| DayDatum::new(a, b).unwrap()).collect()],
        )
        .unwrap()
    }

    fn state(n: usize, gamma: f64, beta: f64, lambda: f64) -> ParamState {
        ParamState {
            params: ModelParams {
                gamma: vec![gamma],
                beta: vec![beta],
                lambda,
                sigma2_y: 0.5,
                sigma_b: Sym2::from_var_corr(0.8, 0.3, 0.4),
            },
            b: vec![[0.0, 0.0]; n],
        }
    }

    #[test]
    fn all_zero_person() {
        let data = single(&[(0, 0.0), (0, 0.0)]);
        let s = state(1, 0.7, 2.0, 0.2);
        let theta = 0.7f64.exp() * 0.8;
        let sb = s.params.sigma_b;
        let bvn0 = -(2.0 * std::f64::consts::PI).ln() - 0.5 * sb.det().ln();
        let ll = joint_loglik(&s, &data, CountFamily::GenPoisson).unwrap();
        assert!((ll - (-2.0 * theta + bvn0)).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_recomputation() {
        // independent route: build each term from the public kernels
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 7;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0, (i as f64 - 3.0) / 2.0]).collect();
        let mut days = Vec::new();
        let mut raw = Vec::new();
        for i in 0..n {
            let d: Vec<(u32, f64)> = (0..2)
                .map(|j| {
                    let y1 = ((i * 3 + j * 5) % 6) as u32;
                    let y2 = if y1 > 0 { 1.0 + rng.random::<f64>() * 40.0 } else { 0.0 };
                    (y1, y2)
                })
                .collect();
            days.push(d.iter().map(|&(a, b)| DayDatum::new(a, b).unwrap()).collect());
            raw.push(d);
        }
        let data = ModelData::from_parts(
            (0..n).map(|i| i.to_string()).collect(),
            vec!["a".into(), "b".into()],
            rows.clone(),
            days,
        )
        .unwrap();
        let mut s = state(n, 0.0, 0.0, 0.27);
        s.params.gamma = vec![0.4, -0.3];
        s.params.beta = vec![2.2, 0.1];
        for (i, b) in s.b.iter_mut().enumerate() {
            *b = [0.1 * i as f64 - 0.3, 0.05 * i as f64];
        }
        let got = joint_loglik(&s, &data, CountFamily::GenPoisson).unwrap();

        let sb = s.params.sigma_b;
        let mut expected = 0.0;
        for i in 0..n {
            let [b1, b2] = s.b[i];
            let mu1 = (0.4 * rows[i][0] - 0.3 * rows[i][1] + b1).exp();
            let mu2 = 2.2 * rows[i][0] + 0.1 * rows[i][1] + b2;
            // bivariate normal written out
            let det = sb.a * sb.c - sb.b * sb.b;
            let q = (sb.c * b1 * b1 - 2.0 * sb.b * b1 * b2 + sb.a * b2 * b2) / det;
            expected += -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q;
            for &(y1, y2) in &raw[i] {
                expected += genpois_logpmf(y1, GenPoissonParams::new(mu1, 0.27).unwrap());
                if y1 > 0 {
                    expected += LogNormalParams::new(mu2, 0.5).unwrap().logpdf(y2);
                }
            }
        }
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn prepared_kernels_match_direct_pmf() {
        let days: Vec<DayDatum> = [(0, 0.0), (1, 2.0), (4, 3.0), (17, 1.0), (60, 5.0)]
            .iter()
            .map(|&(a, b)| DayDatum::new(a, b).unwrap())
            .collect();
        for family in [CountFamily::GenPoisson, CountFamily::NegBinomial] {
            for &disp in &[0.05, 0.4, 0.93, 3.0] {
                if family == CountFamily::GenPoisson && disp >= 1.0 {
                    continue;
                }
                let k = family.kernel(disp, 20);
                for &ln_mu in &[-3.0, 0.2, 2.5] {
                    let direct: f64 = days.iter().map(|d| family.log_pmf(d.y1, d.ln_fact, ln_mu, disp)).sum();
                    let each: f64 = days.iter().map(|d| k.log_pmf(d.y1, d.ln_fact, ln_mu)).sum();
                    assert!((direct - each).abs() < 1e-10 * direct.abs().max(1.0));
                    assert!((direct - k.person_loglik(&days, ln_mu)).abs() < 1e-10 * direct.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn near_one_lambda_is_finite() {
        let data = single(&[(3, 2.0), (0, 0.0)]);
        let s = state(1, 0.5, 1.0, 1.0 - 1e-12);
        assert!(joint_loglik(&s, &data, CountFamily::GenPoisson).unwrap().is_finite());
    }

    #[test]
    fn inconsistent_pair_rejected() {
        assert!(DayDatum::new(0, 3.0).is_err());
        assert!(DayDatum::new(2, 0.0).is_err());
    }
}

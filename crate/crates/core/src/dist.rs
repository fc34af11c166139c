//! Probability kernels for the two-part model: the Generalized Poisson count
//! law (mean parameterisation), the lognormal positive part, and the mixture
//! density that glues them together.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ln_gamma;

/// Generalized Poisson in mean form: `θ = μ(1−λ)`, mean `μ`, variance `μ/(1−λ)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenPoissonParams {
    pub mu: f64,
    pub lambda: f64,
}

impl GenPoissonParams {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Invalid(format!("generalized Poisson mean must be > 0, got {mu}")));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Invalid(format!("dispersion λ must be in [0,1), got {lambda}")));
        }
        Ok(Self { mu, lambda })
    }

    pub fn theta(&self) -> f64 {
        self.mu * (1.0 - self.lambda)
    }

    pub fn variance(&self) -> f64 {
        self.mu / ((1.0 - self.lambda) * (1.0 - self.lambda))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu_log: f64,
    pub sigma2: f64,
}

impl LogNormalParams {
    pub fn new(mu_log: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) || !mu_log.is_finite() {
            return Err(Error::Invalid(format!(
                "lognormal needs finite μ and σ² > 0, got ({mu_log}, {sigma2})"
            )));
        }
        Ok(Self { mu_log, sigma2 })
    }

    pub fn mean(&self) -> f64 {
        (self.mu_log + 0.5 * self.sigma2).exp()
    }

    pub fn logpdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ly = y.ln();
        lognormal_logpdf_log(ly, self.mu_log, self.sigma2)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.mu_log + self.sigma2.sqrt() * z).exp()
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Lognormal log density evaluated from `ln y`.
#[inline]
pub fn lognormal_logpdf_log(ln_y: f64, mu_log: f64, sigma2: f64) -> f64 {
    let r = ln_y - mu_log;
    -ln_y - HALF_LN_2PI - 0.5 * sigma2.ln() - 0.5 * r * r / sigma2
}

/// `ln f(x | θ, λ)` with `θ = μ(1−λ)`.
pub fn genpois_logpmf(x: u32, p: GenPoissonParams) -> f64 {
    genpois_logpmf_parts(x, ln_gamma(x as f64 + 1.0), p.mu.ln(), p.lambda)
}

/// Hot-path form: takes `ln x!` and `ln μ` precomputed.
#[inline]
pub fn genpois_logpmf_parts(x: u32, ln_fact: f64, ln_mu: f64, lambda: f64) -> f64 {
    let ln_theta = ln_mu + (-lambda).ln_1p();
    let theta = ln_theta.exp();
    if x == 0 {
        return -theta;
    }
    let xf = x as f64;
    let inner = theta + xf * lambda;
    ln_theta + (xf - 1.0) * inner.ln() - inner - ln_fact
}

/// `P(X = 0) = exp(−μ(1−λ))`; the participation probability is one minus this.
pub fn genpois_p_zero(p: GenPoissonParams) -> f64 {
    (-p.theta()).exp()
}

/// Exact draw via the branching representation: a Poisson(θ) founding
/// generation in which every individual has Poisson(λ) offspring; the total
/// progeny is Generalized Poisson(θ, λ).
pub fn genpois_sample<R: Rng + ?Sized>(p: GenPoissonParams, rng: &mut R) -> u64 {
    sample_branching(p.theta(), p.lambda, rng)
}

pub(crate) fn sample_branching<R: Rng + ?Sized>(theta: f64, lambda: f64, rng: &mut R) -> u64 {
    let mut generation = poisson(theta, rng);
    let mut total = generation;
    while generation > 0 && lambda > 0.0 {
        generation = poisson(lambda * generation as f64, rng);
        total += generation;
    }
    total
}

pub(crate) fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    // rand_distr rejects rates above ~1.8e19; nothing in this model gets close
    let d = Poisson::new(rate).expect("finite positive Poisson rate");
    d.sample(rng) as u64
}

/// Log density of the two-part law for a single `y2`.
///
/// `pi` is the probability of a positive value. `y2 > 0` with `pi = 0` gives
/// `−∞`, which signals an impossible datum rather than an error.
pub fn two_part_logdensity(y2: f64, pi: f64, p: LogNormalParams) -> f64 {
    if y2 == 0.0 {
        (1.0 - pi).ln()
    } else {
        pi.ln() + p.logpdf(y2)
    }
}

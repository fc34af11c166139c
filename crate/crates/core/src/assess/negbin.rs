//! Negative binomial in mean–dispersion form: mean μ, variance μ(1 + μ/κ).

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::dist::poisson;
use crate::stats::ln_gamma;

/// `ln Γ(y + κ) − ln Γ(κ)`, by direct summation for small counts.
fn ln_rising(kappa: f64, y: u32) -> f64 {
    if y < 40 {
        (0..y).map(|k| (kappa + k as f64).ln()).sum()
    } else {
        ln_gamma(kappa + y as f64) - ln_gamma(kappa)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log pmf with `ln y!` and `ln μ` supplied by the caller.
#[inline]
pub fn logpmf_parts(y: u32, ln_fact: f64, ln_mu: f64, kappa: f64) -> f64 {
    let ln_k = kappa.ln();
    let ln_k_mu = log_add_exp(ln_k, ln_mu);
    let mut v = kappa * (ln_k - ln_k_mu);
    if y > 0 {
        v += ln_rising(kappa, y) - ln_fact + y as f64 * (ln_mu - ln_k_mu);
    }
    v
}

pub fn logpmf(y: u32, mu: f64, kappa: f64) -> f64 {
    logpmf_parts(y, ln_gamma(y as f64 + 1.0), mu.ln(), kappa)
}

pub fn p_zero(mu: f64, kappa: f64) -> f64 {
    (kappa * (kappa.ln() - (kappa + mu).ln())).exp()
}

/// Poisson–gamma mixture draw.
pub fn sample<R: Rng + ?Sized>(mu: f64, kappa: f64, rng: &mut R) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    let g: f64 = Gamma::new(kappa, mu / kappa).expect("positive κ and μ").sample(rng);
    poisson(g, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalizes_and_matches_moments() {
        for &(mu, k) in &[(0.3, 0.5), (2.0, 1.0), (7.5, 20.0)] {
            let probs: Vec<f64> = (0..2000).map(|y| logpmf(y, mu, k).exp()).collect();
            let total: f64 = probs.iter().sum();
            let m: f64 = probs.iter().enumerate().map(|(y, p)| y as f64 * p).sum();
            let v: f64 = probs.iter().enumerate().map(|(y, p)| (y as f64 - m).powi(2) * p).sum();
            assert!((total - 1.0).abs() < 1e-10);
            assert!((m - mu).abs() < 1e-8);
            assert!((v - mu * (1.0 + mu / k)).abs() < 1e-6);
            assert!((p_zero(mu, k) - probs[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn large_count_branch_agrees() {
        let direct: f64 = (0..39).map(|k| (2.5 + k as f64).ln()).sum();
        assert!((direct - (ln_gamma(41.5) - ln_gamma(2.5))).abs() < 1e-9);
        assert!((logpmf(39, 12.0, 2.5) - logpmf_parts(39, ln_gamma(40.0), 12f64.ln(), 2.5)).abs() < 1e-12);
        // 40 takes the lgamma branch; continuity with its neighbour
        let a = logpmf(40, 12.0, 2.5) - logpmf(39, 12.0, 2.5);
        let ratio = (39.0 + 2.5) / 40.0 * 12.0 / 14.5;
        assert!((a - f64::ln(ratio)).abs() < 1e-9);
    }

    #[test]
    fn sampler_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| sample(3.0, 1.5, &mut rng) as f64).collect();
        let m = crate::stats::mean(&xs);
        let v = crate::stats::variance(&xs);
        assert!((m - 3.0).abs() < 4.0 * (9.0f64 / n as f64).sqrt());
        assert!((v / 9.0 - 1.0).abs() < 0.05);
    }
}

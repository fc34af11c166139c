//! 2×2 symmetric matrices for the person-level random-effect covariance, and
//! thin wrappers over `nalgebra` for the p×p regression blocks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub const fn diag(a: f64, c: f64) -> Self {
        Self { a, b: 0.0, c }
    }

    pub const fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    /// Build from two variances and a correlation.
    pub fn from_var_corr(var1: f64, var2: f64, rho: f64) -> Self {
        Self::new(var1, rho * (var1 * var2).sqrt(), var2)
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    pub fn is_pd(&self) -> bool {
        self.a > 0.0 && self.det() > 0.0 && self.a.is_finite() && self.c.is_finite()
    }

    pub fn corr(&self) -> f64 {
        self.b / (self.a * self.c).sqrt()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.a * k, self.b * k, self.c * k)
    }

    pub fn add(&self, o: &Sym2) -> Self {
        Self::new(self.a + o.a, self.b + o.b, self.c + o.c)
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.abs() <= f64::MIN_POSITIVE || !d.is_finite() {
            return Err(Error::Numeric(format!("singular 2x2 matrix {self:?}")));
        }
        Ok(Self::new(self.c / d, -self.b / d, self.a / d))
    }

    /// Lower Cholesky factor `(l11, l21, l22)`; errors unless positive definite.
    pub fn cholesky(&self) -> Result<[f64; 3]> {
        if !self.is_pd() {
            return Err(Error::Numeric(format!("matrix not positive definite: {self:?}")));
        }
        let l11 = self.a.sqrt();
        let l21 = self.b / l11;
        let l22 = (self.c - l21 * l21).sqrt();
        Ok([l11, l21, l22])
    }

    /// Cholesky that tolerates positive semi-definite input (zero pivots give
    /// zero columns). Used where degenerate covariances are legitimate limits.
    pub fn cholesky_psd(&self) -> [f64; 3] {
        let l11 = self.a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.b / l11 } else { 0.0 };
        let l22 = (self.c - l21 * l21).max(0.0).sqrt();
        [l11, l21, l22]
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad(&self, x: [f64; 2]) -> f64 {
        self.a * x[0] * x[0] + 2.0 * self.b * x[0] * x[1] + self.c * x[1] * x[1]
    }

    /// Draw from `N(0, self)`; positive semi-definite input is accepted.
    pub fn sample_normal<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let [l11, l21, l22] = self.cholesky_psd();
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        [l11 * z1, l21 * z1 + l22 * z2]
    }
}

/// Log density of `N(0, cov)` at `x`, given a precomputed inverse and log determinant.
pub fn bvn_logpdf(x: [f64; 2], inv: &Sym2, log_det: f64) -> f64 {
    -std::f64::consts::LN_2 - std::f64::consts::PI.ln() - 0.5 * log_det - 0.5 * inv.quad(x)
}

/// Draw from `N(mean, Q⁻¹)` given the precision `Q` and `Q·mean = rhs`.
///
/// Returns the draw and the mean.
pub fn sample_from_precision<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = rhs.len();
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    // L Lᵀ = Q, so Lᵀ⁻¹ z has covariance Q⁻¹
    let l = chol.l();
    let dev = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok((&mean + dev, mean))
}

/// Lower Cholesky factor of a covariance matrix, row-major `p×p`.
pub fn cholesky_lower(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cov.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_and_cholesky_round_trip() {
        let m = Sym2::from_var_corr(0.82, 0.28, 0.41);
        let inv = m.inverse().unwrap();
        // M · M⁻¹ = I
        let i11 = m.a * inv.a + m.b * inv.b;
        let i12 = m.a * inv.b + m.b * inv.c;
        let i22 = m.b * inv.b + m.c * inv.c;
        assert!((i11 - 1.0).abs() < 1e-12 && i12.abs() < 1e-12 && (i22 - 1.0).abs() < 1e-12);
        let [l11, l21, l22] = m.cholesky().unwrap();
        assert!((l11 * l11 - m.a).abs() < 1e-12);
        assert!((l11 * l21 - m.b).abs() < 1e-12);
        assert!((l21 * l21 + l22 * l22 - m.c).abs() < 1e-12);
    }

    #[test]
    fn non_pd_rejected() {
        assert!(Sym2::new(1.0, 2.0, 1.0).cholesky().is_err());
        assert_eq!(Sym2::new(0.0, 0.0, 0.0).cholesky_psd(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn bvn_density_at_origin() {
        let m = Sym2::identity();
        let v = bvn_logpdf([0.0, 0.0], &m, 0.0);
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn precision_sampler_moments() {
        let q = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let rhs = DVector::from_vec(vec![1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let mut s = [0.0; 2];
        let mut ss = [0.0; 3];
        let mut mean = DVector::zeros(2);
        for _ in 0..n {
            let (d, m) = sample_from_precision(q.clone(), &rhs, &mut rng).unwrap();
            mean = m;
            s[0] += d[0];
            s[1] += d[1];
            ss[0] += d[0] * d[0];
            ss[1] += d[0] * d[1];
            ss[2] += d[1] * d[1];
        }
        let nf = n as f64;
        let cov = q.try_inverse().unwrap();
        let m0 = s[0] / nf;
        let m1 = s[1] / nf;
        assert!((m0 - mean[0]).abs() < 0.01 && (m1 - mean[1]).abs() < 0.015);
        assert!((ss[0] / nf - m0 * m0 - cov[(0, 0)]).abs() < 0.01);
        assert!((ss[1] / nf - m0 * m1 - cov[(0, 1)]).abs() < 0.01);
        assert!((ss[2] / nf - m1 * m1 - cov[(1, 1)]).abs() < 0.02);
    }
}

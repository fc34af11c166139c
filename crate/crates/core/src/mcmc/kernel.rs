//! One Metropolis-within-Gibbs sweep and its component updates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{CountFamily, CountKernel, ModelData, ParamState};
use super::prior::{PriorCache, PriorConfig};
use crate::error::{Error, Result};
use crate::linalg::{sample_from_precision, Sym2};

/// Tunable proposal parameters. Adapted during burn-in, frozen afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposals {
    /// Lower Cholesky factor (row-major p×p) of the γ proposal shape.
    pub gamma_chol: Vec<f64>,
    pub gamma_scale: f64,
    /// Per-coordinate scales, used when `per_coordinate` is set.
    pub gamma_coord_scales: Vec<f64>,
    pub per_coordinate: bool,
    /// Random-walk scale for the transformed dispersion (logit λ or log κ).
    pub disp_scale: f64,
    /// Per-person multipliers of the b1 proposal standard deviation.
    pub re_scales: Vec<f64>,
    /// Approximate count-likelihood information about b1 per person.
    pub re_info: Vec<f64>,
    /// Log-scale step of the joint rescaling moves on (b1, Σ_b) and (b2, Σ_b).
    #[serde(default = "default_expansion_scales")]
    pub expansion_scales: [f64; 2],
    /// Step of the shear moves `b_k → b_k + t·b_other`.
    #[serde(default = "default_expansion_scales")]
    pub shear_scales: [f64; 2],
    /// Log-scale steps of the b2-collapsed updates of σ_y² and of Var(b2 | b1).
    #[serde(default = "default_collapsed_scales")]
    pub collapsed_scales: [f64; 2],
    /// Logit step of the joint λ / zero-person b1 move.
    #[serde(default = "default_zero_shift_scale")]
    pub zero_shift_scale: f64,
}

fn default_zero_shift_scale() -> f64 {
    0.2
}

fn default_collapsed_scales() -> [f64; 2] {
    [0.1, 0.2]
}

fn default_expansion_scales() -> [f64; 2] {
    [0.05, 0.05]
}

impl Proposals {
    /// Proposal shapes from a Fisher-information approximation at the data.
    pub fn from_data(data: &ModelData, prior: &PriorConfig, family: CountFamily, disp: f64) -> Result<Self> {
        let p = data.p();
        let cache = PriorCache::new(prior)?;
        let mut info = cache.gamma_prec.clone();
        let mut re_info = Vec::with_capacity(data.n());
        for (i, days) in data.days.iter().enumerate() {
            let h: f64 = days
                .iter()
                .map(|d| family.log_mean_information((d.y1 as f64).max(0.5), disp))
                .sum();
            re_info.push(h);
            // γ given b: each person contributes h Z Zᵀ; shrink toward the
            // marginal information so the block is not overconfident
            let zi = data.row(i);
            let w = h / (1.0 + h);
            for a in 0..p {
                for c in 0..p {
                    info[(a, c)] += w * zi[a] * zi[c];
                }
            }
        }
        let cov = info
            .cholesky()
            .ok_or_else(|| Error::Numeric("γ proposal information is singular".into()))?
            .inverse();
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("γ proposal covariance is not positive definite".into()))?
            .l();
        let mut gamma_chol = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                gamma_chol[i * p + j] = chol[(i, j)];
            }
        }
        Ok(Self {
            gamma_chol,
            gamma_scale: 2.38 / (p.max(1) as f64).sqrt(),
            gamma_coord_scales: vec![2.4; p],
            per_coordinate: false,
            disp_scale: 0.3,
            re_scales: vec![2.4; data.n()],
            re_info,
            expansion_scales: default_expansion_scales(),
            shear_scales: default_expansion_scales(),
            collapsed_scales: default_collapsed_scales(),
            zero_shift_scale: default_zero_shift_scale(),
        })
    }

    fn gamma_coord_sd(&self, k: usize, p: usize) -> f64 {
        (0..=k).map(|j| self.gamma_chol[k * p + j].powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub accepted: u64,
    pub proposed: u64,
}

impl Counter {
    #[inline]
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Acceptance tallies per Metropolis block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptCounts {
    pub gamma: Counter,
    pub gamma_coord: Vec<Counter>,
    pub disp: Counter,
    pub re: Vec<Counter>,
    #[serde(default)]
    pub expansion: [Counter; 2],
    #[serde(default)]
    pub shear: [Counter; 2],
    #[serde(default)]
    pub collapsed: [Counter; 2],
    #[serde(default)]
    pub zero_shift: Counter,
}

impl AcceptCounts {
    pub fn new(n: usize, p: usize) -> Self {
        Self {
            gamma: Counter::default(),
            gamma_coord: vec![Counter::default(); p],
            disp: Counter::default(),
            re: vec![Counter::default(); n],
            expansion: [Counter::default(); 2],
            shear: [Counter::default(); 2],
            collapsed: [Counter::default(); 2],
            zero_shift: Counter::default(),
        }
    }

    pub fn mean_re_rate(&self) -> f64 {
        let rates: Vec<f64> = self.re.iter().filter(|c| c.proposed > 0).map(Counter::rate).collect();
        crate::stats::mean(&rates)
    }
}

/// Switches that change the sweep composition (all keep the posterior invariant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Add the Gibbs moves that shift γ (resp. β) while holding `Zγ + b1`
    /// (resp. `Zβ + b2`) fixed. They remove the intercept/random-effect
    /// ridge that otherwise dominates autocorrelation.
    pub centered_moves: bool,
    /// Metropolis steps on each b1 per sweep.
    pub re_steps: usize,
    /// Add the parameter-expansion moves that rescale one column of the
    /// person effects together with the matching row/column of Σ_b. They
    /// move along the variance-component ridge that slows plain Gibbs.
    pub expansion_moves: bool,
    /// Metropolis steps on the dispersion per sweep.
    pub disp_steps: usize,
    /// Add Metropolis updates of σ_y² and Var(b2 | b1) with b2 integrated
    /// out, each followed by an exact redraw of b2.
    pub collapsed_moves: bool,
    /// Add the joint λ / zero-person b1 move (Generalized Poisson only).
    pub zero_shift_moves: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            centered_moves: true,
            re_steps: 2,
            expansion_moves: true,
            disp_steps: 3,
            collapsed_moves: true,
            zero_shift_moves: true,
        }
    }
}

/// Everything a sweep reads but never writes.
#[derive(Debug, Clone)]
pub struct Kernel<'a> {
    pub data: &'a ModelData,
    pub prior: &'a PriorConfig,
    pub family: CountFamily,
    pub options: KernelOptions,
    cache: PriorCache,
}

#[inline]
fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    // NaN never accepts
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Inverse-Gamma(shape, rate) draw.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng);
    1.0 / g
}

/// Inverse-Wishart(df, scale) draw for 2×2 matrices via the Bartlett
/// decomposition of the matching Wishart(df, scale⁻¹).
pub fn sample_inv_wishart2<R: Rng + ?Sized>(df: f64, scale: Sym2, rng: &mut R) -> Result<Sym2> {
    if !(df > 1.0) {
        return Err(Error::Numeric(format!("inverse-Wishart df {df} must exceed 1")));
    }
    let [l11, l21, l22] = scale.inverse()?.cholesky()?;
    let a11 = ChiSquared::new(df).expect("df > 0").sample(rng).sqrt();
    let a22 = ChiSquared::new(df - 1.0).expect("df > 1").sample(rng).sqrt();
    let a21: f64 = std_normal(rng);
    // M = L A (both lower triangular); W = M Mᵀ
    let m11 = l11 * a11;
    let m21 = l21 * a11 + l22 * a21;
    let m22 = l22 * a22;
    let w = Sym2::new(m11 * m11, m11 * m21, m21 * m21 + m22 * m22);
    w.inverse()
}

impl<'a> Kernel<'a> {
    pub fn new(data: &'a ModelData, prior: &'a PriorConfig, family: CountFamily, options: KernelOptions) -> Result<Self> {
        prior.validate(data.p())?;
        Ok(Self {
            data,
            prior,
            family,
            options,
            cache: PriorCache::new(prior)?,
        })
    }

    /// Log of the γ prior density up to a constant.
    pub fn gamma_logprior(&self, gamma: &[f64]) -> f64 {
        self.cache.gamma_logprior(gamma)
    }

    /// Log prior of the dispersion on the sampling scale (including the
    /// Jacobian of the logit/log transform), up to a constant.
    fn disp_log_target_prior(&self, disp: f64) -> f64 {
        match self.family {
            CountFamily::GenPoisson => {
                let (lo, hi) = self.prior.lambda_bounds;
                (disp - lo).ln() + (hi - disp).ln()
            }
            CountFamily::NegBinomial => self.prior.kappa_shape * disp.ln() - self.prior.kappa_rate * disp,
        }
    }

    fn disp_propose(&self, disp: f64, step: f64) -> Option<f64> {
        match self.family {
            CountFamily::GenPoisson => {
                let (lo, hi) = self.prior.lambda_bounds;
                let u = ((disp - lo) / (hi - disp)).ln() + step;
                let s = 1.0 / (1.0 + (-u).exp());
                let v = lo + (hi - lo) * s;
                (v > lo && v < hi && v < 1.0).then_some(v)
            }
            CountFamily::NegBinomial => {
                let v = disp * step.exp();
                (v > 0.0 && v.is_finite()).then_some(v)
            }
        }
    }

    fn count_kernel(&self, disp: f64) -> CountKernel {
        self.family.kernel(disp, self.data.max_y1())
    }

    fn count_loglik_at(&self, ln_mu: &[f64], disp: f64) -> f64 {
        let k = self.count_kernel(disp);
        self.data
            .days
            .iter()
            .zip(ln_mu)
            .map(|(days, &lm)| k.person_loglik(days, lm))
            .sum()
    }

    fn ln_mu(&self, gamma: &[f64], b: &[[f64; 2]], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.data.n()).map(|i| self.data.linear(i, gamma) + b[i][0]));
    }

    /// Metropolis updates of γ (block, or per coordinate) and of the
    /// dispersion on its unconstrained scale. Only count-likelihood terms and
    /// priors enter.
    pub fn update_gamma_lambda<R: Rng + ?Sized>(
        &self,
        state: &mut ParamState,
        proposals: &Proposals,
        counts: &mut AcceptCounts,
        rng: &mut R,
    ) {
        let p = self.data.p();
        let par = &mut state.params;
        let mut ln_mu = Vec::with_capacity(self.data.n());
        self.ln_mu(&par.gamma, &state.b, &mut ln_mu);
        let mut cur = self.count_loglik_at(&ln_mu, par.lambda);
        let mut cur_prior = self.cache.gamma_logprior(&par.gamma);
        let mut prop_ln_mu = Vec::with_capacity(self.data.n());

        if proposals.per_coordinate {
            for k in 0..p {
                let step = proposals.gamma_coord_scales[k] * proposals.gamma_coord_sd(k, p) * std_normal(rng);
                let mut g = par.gamma.clone();
                g[k] += step;
                prop_ln_mu.clear();
                prop_ln_mu.extend((0..self.data.n()).map(|i| ln_mu[i] + self.data.row(i)[k] * step));
                let new = self.count_loglik_at(&prop_ln_mu, par.lambda);
                let new_prior = self.cache.gamma_logprior(&g);
                let ok = accept(new + new_prior - cur - cur_prior, rng);
                counts.gamma_coord[k].record(ok);
                if ok {
                    par.gamma = g;
                    std::mem::swap(&mut ln_mu, &mut prop_ln_mu);
                    cur = new;
                    cur_prior = new_prior;
                }
            }
        } else {
            let z: Vec<f64> = (0..p).map(|_| std_normal(rng)).collect();
            let step: Vec<f64> = (0..p)
                .map(|i| proposals.gamma_scale * (0..=i).map(|j| proposals.gamma_chol[i * p + j] * z[j]).sum::<f64>())
                .collect();
            let g: Vec<f64> = par.gamma.iter().zip(&step).map(|(a, b)| a + b).collect();
            prop_ln_mu.clear();
            prop_ln_mu.extend((0..self.data.n()).map(|i| ln_mu[i] + self.data.linear(i, &step)));
            let new = self.count_loglik_at(&prop_ln_mu, par.lambda);
            let new_prior = self.cache.gamma_logprior(&g);
            let ok = accept(new + new_prior - cur - cur_prior, rng);
            counts.gamma.record(ok);
            if ok {
                par.gamma = g;
                std::mem::swap(&mut ln_mu, &mut prop_ln_mu);
                cur = new;
            }
        }

        for _ in 0..self.options.disp_steps.max(1) {
            let step = proposals.disp_scale * std_normal(rng);
            let ok = match self.disp_propose(par.lambda, step) {
                Some(v) => {
                    let new = self.count_loglik_at(&ln_mu, v);
                    let log_ratio =
                        new - cur + self.disp_log_target_prior(v) - self.disp_log_target_prior(par.lambda);
                    let ok = accept(log_ratio, rng);
                    if ok {
                        par.lambda = v;
                        cur = new;
                    }
                    ok
                }
                None => false,
            };
            counts.disp.record(ok);
        }
    }

    /// Per-person update: Metropolis on b1 against its conditional given b2,
    /// then an exact Gaussian draw of b2 given b1.
    pub fn update_random_effects<R: Rng + ?Sized>(
        &self,
        state: &mut ParamState,
        proposals: &Proposals,
        counts: &mut AcceptCounts,
        rng: &mut R,
    ) -> Result<()> {
        let par = &state.params;
        let s = par.sigma_b;
        if !s.is_pd() {
            return Err(Error::Numeric(format!("Σ_b not positive definite: {s:?}")));
        }
        // b1 | b2 ~ N(c1 b2, v1);  b2 | b1 ~ N(c2 b1, v2)
        let (c1, v1) = (s.b / s.c, s.a - s.b * s.b / s.c);
        let (c2, v2) = (s.b / s.a, s.c - s.b * s.b / s.a);
        let inv_s2 = 1.0 / par.sigma2_y;
        let kern = self.count_kernel(par.lambda);
        for (i, days) in self.data.days.iter().enumerate() {
            let eta1 = self.data.linear(i, &par.gamma);
            let eta2 = self.data.linear(i, &par.beta);
            let [mut b1, mut b2] = state.b[i];
            let base_sd = (1.0 / (1.0 / v1 + proposals.re_info[i])).sqrt();
            let sd = proposals.re_scales[i] * base_sd;
            let loglik = |b1: f64| -> f64 { kern.person_loglik(days, eta1 + b1) - 0.5 * (b1 - c1 * b2).powi(2) / v1 };
            let mut cur = loglik(b1);
            for _ in 0..self.options.re_steps.max(1) {
                let prop = b1 + sd * std_normal(rng);
                let new = loglik(prop);
                let ok = accept(new - cur, rng);
                counts.re[i].record(ok);
                if ok {
                    b1 = prop;
                    cur = new;
                }
            }
            let (mut k, mut sum) = (0.0, 0.0);
            for d in days {
                if let Some(ly) = d.log_y2 {
                    k += 1.0;
                    sum += ly - eta2;
                }
            }
            let prec = 1.0 / v2 + k * inv_s2;
            let mean = (c2 * b1 / v2 + sum * inv_s2) / prec;
            b2 = mean + std_normal(rng) / prec.sqrt();
            state.b[i] = [b1, b2];
        }
        Ok(())
    }

    /// Conjugate multivariate-normal draw of β from positive days only.
    pub fn update_beta<R: Rng + ?Sized>(&self, state: &mut ParamState, rng: &mut R) -> Result<()> {
        let p = self.data.p();
        let inv_s2 = 1.0 / state.params.sigma2_y;
        let precision = &self.cache.beta_prec + &self.data.ztz_positive * inv_s2;
        let mut rhs = self.cache.beta_prec_mean.clone();
        for (i, days) in self.data.days.iter().enumerate() {
            let b2 = state.b[i][1];
            let r: f64 = days.iter().filter_map(|d| d.log_y2).map(|ly| ly - b2).sum();
            if r != 0.0 {
                let zi = self.data.row(i);
                for a in 0..p {
                    rhs[a] += zi[a] * r * inv_s2;
                }
            }
        }
        let (draw, _) = sample_from_precision(precision, &rhs, rng)
            .map_err(|e| Error::Numeric(format!("β full conditional: {e}")))?;
        state.params.beta = draw.iter().copied().collect();
        Ok(())
    }

    /// Conjugate inverse-gamma draw of σ_y²; the prior rate is part of the
    /// posterior rate.
    pub fn update_sigma2_y<R: Rng + ?Sized>(&self, state: &mut ParamState, rng: &mut R) {
        let par = &state.params;
        let mut ssr = 0.0;
        let mut n_star = 0usize;
        for (i, days) in self.data.days.iter().enumerate() {
            let mu2 = self.data.linear(i, &par.beta) + state.b[i][1];
            for ly in days.iter().filter_map(|d| d.log_y2) {
                ssr += (ly - mu2).powi(2);
                n_star += 1;
            }
        }
        let shape = self.prior.ig_shape + 0.5 * n_star as f64;
        let rate = self.prior.ig_rate + 0.5 * ssr;
        state.params.sigma2_y = sample_inv_gamma(shape, rate, rng);
    }

    /// Conjugate inverse-Wishart draw of Σ_b.
    pub fn update_sigma_b<R: Rng + ?Sized>(&self, state: &mut ParamState, rng: &mut R) -> Result<()> {
        let mut s = self.prior.iw_scale;
        for &[b1, b2] in &state.b {
            s = s.add(&Sym2::new(b1 * b1, b1 * b2, b2 * b2));
        }
        if !s.is_pd() {
            return Err(Error::Numeric(format!("inverse-Wishart scale not positive definite: {s:?}")));
        }
        let df = state.b.len() as f64 + self.prior.iw_df;
        state.params.sigma_b = sample_inv_wishart2(df, s, rng)?;
        Ok(())
    }

    /// Gibbs move on γ holding every `Zγ + b1` fixed (b1 absorbs the shift).
    pub fn update_gamma_centered<R: Rng + ?Sized>(&self, state: &mut ParamState, rng: &mut R) -> Result<()> {
        let s = state.params.sigma_b;
        let (c, v) = (s.b / s.c, s.a - s.b * s.b / s.c);
        let gamma = state.params.gamma.clone();
        let new = self.centered_draw(
            &gamma,
            &self.cache.gamma_prec,
            &self.cache.gamma_prec_mean,
            v,
            |i, alpha| alpha - c * state.b[i][1],
            |i| state.b[i][0],
            rng,
        )?;
        for i in 0..self.data.n() {
            let shift = self.data.linear(i, &gamma) - self.data.linear(i, &new);
            state.b[i][0] += shift;
        }
        state.params.gamma = new;
        Ok(())
    }

    /// Gibbs move on β holding every `Zβ + b2` fixed.
    pub fn update_beta_centered<R: Rng + ?Sized>(&self, state: &mut ParamState, rng: &mut R) -> Result<()> {
        let s = state.params.sigma_b;
        let (c, v) = (s.b / s.a, s.c - s.b * s.b / s.a);
        let beta = state.params.beta.clone();
        let new = self.centered_draw(
            &beta,
            &self.cache.beta_prec,
            &self.cache.beta_prec_mean,
            v,
            |i, alpha| alpha - c * state.b[i][0],
            |i| state.b[i][1],
            rng,
        )?;
        for i in 0..self.data.n() {
            let shift = self.data.linear(i, &beta) - self.data.linear(i, &new);
            state.b[i][1] += shift;
        }
        state.params.beta = new;
        Ok(())
    }

    /// Draw coefficients from `p(coef | α, other effect)` where
    /// `α_i = Z_i coef + b_i` and `b_i | other ~ N(·, v)`.
    #[allow(clippy::too_many_arguments)]
    fn centered_draw<R: Rng + ?Sized>(
        &self,
        coef: &[f64],
        prior_prec: &DMatrix<f64>,
        prior_prec_mean: &DVector<f64>,
        v: f64,
        target: impl Fn(usize, f64) -> f64,
        effect: impl Fn(usize) -> f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let p = self.data.p();
        let precision = prior_prec + &self.data.ztz / v;
        let mut rhs = prior_prec_mean.clone();
        for i in 0..self.data.n() {
            let alpha = self.data.linear(i, coef) + effect(i);
            let r = target(i, alpha) / v;
            let zi = self.data.row(i);
            for a in 0..p {
                rhs[a] += zi[a] * r;
            }
        }
        let (draw, _) = sample_from_precision(precision, &rhs, rng)?;
        Ok(draw.iter().copied().collect())
    }

    /// Joint move `b_k → c·b_k` for every person with
    /// `Σ_b → D Σ_b D`, `D = diag(c, 1)` or `diag(1, c)`.
    ///
    /// The random-effect quadratic forms are invariant, so only the
    /// likelihood, the inverse-Wishart prior and the Jacobian `c^(n+3)`
    /// enter; the determinant factors of the n normal densities cancel
    /// against `c^n`, leaving `−d0·ln c` from the prior.
    pub fn update_expansion<R: Rng + ?Sized>(
        &self,
        state: &mut ParamState,
        k: usize,
        proposals: &Proposals,
        counts: &mut AcceptCounts,
        rng: &mut R,
    ) -> Result<()> {
        let log_c = proposals.expansion_scales[k] * std_normal(rng);
        let c = log_c.exp();
        let par = &state.params;
        let s = par.sigma_b;
        let s_new = if k == 0 {
            Sym2::new(c * c * s.a, c * s.b, s.c)
        } else {
            Sym2::new(s.a, c * s.b, c * c * s.c)
        };
        let psi = self.prior.iw_scale;
        let tr = |m: Sym2| -> Result<f64> {
            let inv = m.inverse()?;
            Ok(psi.a * inv.a + 2.0 * psi.b * inv.b + psi.c * inv.c)
        };
        let mut log_ratio = -self.prior.iw_df * log_c - 0.5 * (tr(s_new)? - tr(s)?);
        if k == 0 {
            let kern = self.count_kernel(par.lambda);
            for (i, days) in self.data.days.iter().enumerate() {
                let eta = self.data.linear(i, &par.gamma);
                let b1 = state.b[i][0];
                log_ratio += kern.person_loglik(days, eta + c * b1) - kern.person_loglik(days, eta + b1);
            }
        } else {
            let inv2 = 0.5 / par.sigma2_y;
            for (i, days) in self.data.days.iter().enumerate() {
                let eta = self.data.linear(i, &par.beta);
                let b2 = state.b[i][1];
                for ly in days.iter().filter_map(|d| d.log_y2) {
                    let r = ly - eta;
                    log_ratio += inv2 * ((r - b2).powi(2) - (r - c * b2).powi(2));
                }
            }
        }
        let ok = accept(log_ratio, rng);
        counts.expansion[k].record(ok);
        if ok {
            state.params.sigma_b = s_new;
            for b in &mut state.b {
                b[k] *= c;
            }
        }
        Ok(())
    }

    /// Joint move `b_k → b_k + t·b_j` (j the other component) for every
    /// person with `Σ_b → A Σ_b Aᵀ`. Shears have unit Jacobian and leave
    /// both the quadratic forms and `|Σ_b|` unchanged, so only the
    /// likelihood and the trace term of the inverse-Wishart prior enter.
    pub fn update_shear<R: Rng + ?Sized>(
        &self,
        state: &mut ParamState,
        k: usize,
        proposals: &Proposals,
        counts: &mut AcceptCounts,
        rng: &mut R,
    ) -> Result<()> {
        let t = proposals.shear_scales[k] * std_normal(rng);
        let j = 1 - k;
        let par = &state.params;
        let s = par.sigma_b;
        let s_new = if k == 1 {
            Sym2::new(s.a, s.b + t * s.a, s.c + 2.0 * t * s.b + t * t * s.a)
        } else {
            Sym2::new(s.a + 2.0 * t * s.b + t * t * s.c, s.b + t * s.c, s.c)
        };
        let psi = self.prior.iw_scale;
        let tr = |m: Sym2| -> Result<f64> {
            let inv = m.inverse()?;
            Ok(psi.a * inv.a + 2.0 * psi.b * inv.b + psi.c * inv.c)
        };
        let mut log_ratio = -0.5 * (tr(s_new)? - tr(s)?);
        if k == 0 {
            let kern = self.count_kernel(par.lambda);
            for (i, days) in self.data.days.iter().enumerate() {
                let eta = self.data.linear(i, &par.gamma);
                let [b1, b2] = state.b[i];
                log_ratio += kern.person_loglik(days, eta + b1 + t * b2) - kern.person_loglik(days, eta + b1);
            }
        } else {
            let inv2 = 0.5 / par.sigma2_y;
            for (i, days) in self.data.days.iter().enumerate() {
                let eta = self.data.linear(i, &par.beta);
                let [b1, b2] = state.b[i];
                let shifted = b2 + t * b1;
                for ly in days.iter().filter_map(|d| d.log_y2) {
                    let r = ly - eta;
                    log_ratio += inv2 * ((r - b2).powi(2) - (r - shifted).powi(2));
                }
            }
        }
        let ok = accept(log_ratio, rng);
        counts.shear[k].record(ok);
        if ok {
            state.params.sigma_b = s_new;
            for b in &mut state.b {
                b[k] += t * b[j];
            }
        }
        Ok(())
    }

    /// Metropolis on `ln σ_y²` and on `ln v2`, `v2 = Var(b2 | b1)` (with
    /// `σ²_b1` and the regression of b2 on b1 held fixed), both against the
    /// likelihood with b2 integrated out; then b2 is redrawn from its exact
    /// conditional. Removes the σ_y²/σ²_b2 trade-off that Gibbs crosses slowly.
    pub fn update_collapsed_b2<R: Rng + ?Sized>(
        &self,
        state: &mut ParamState,
        proposals: &Proposals,
        counts: &mut AcceptCounts,
        rng: &mut R,
    ) -> Result<()> {
        let s = state.params.sigma_b;
        let a = s.a;
        let c2 = s.b / s.a;
        let v2 = s.c - s.b * s.b / s.a;
        // per person: (k, Σr, Σr²) with r = ln y2 − Zβ − c2·b1
        let mut stats = Vec::with_capacity(self.data.n());
        for (i, days) in self.data.days.iter().enumerate() {
            let m = self.data.linear(i, &state.params.beta) + c2 * state.b[i][0];
            let (mut k, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for ly in days.iter().filter_map(|d| d.log_y2) {
                let r = ly - m;
                k += 1.0;
                s1 += r;
                s2 += r * r;
            }
            if k > 0.0 {
                stats.push((k, s1, s2));
            }
        }
        let marginal = |sig2: f64, v: f64| -> f64 {
            stats
                .iter()
                .map(|&(k, s1, s2)| {
                    let tot = sig2 + k * v;
                    -0.5 * ((k - 1.0) * sig2.ln() + tot.ln()) - 0.5 * ((s2 - s1 * s1 / k) / sig2 + s1 * s1 / (k * tot))
                })
                .sum()
        };
        let (a0, b0) = (self.prior.ig_shape, self.prior.ig_rate);
        let log_target_sig = |sig2: f64, v: f64| marginal(sig2, v) - a0 * sig2.ln() - b0 / sig2;
        let psi = self.prior.iw_scale;
        let d0 = self.prior.iw_df;
        let sigma_of = |v: f64| Sym2::new(a, c2 * a, v + c2 * c2 * a);
        let log_target_v = |sig2: f64, v: f64| -> f64 {
            let m = sigma_of(v);
            let det = m.det();
            let tr = (psi.a * m.c - 2.0 * psi.b * m.b + psi.c * m.a) / det;
            marginal(sig2, v) - 0.5 * (d0 + 3.0) * det.ln() - 0.5 * tr + v.ln()
        };

        let mut sig2 = state.params.sigma2_y;
        let mut v = v2;
        let prop = sig2 * (proposals.collapsed_scales[0] * std_normal(rng)).exp();
        let ok = prop.is_finite() && prop > 0.0 && accept(log_target_sig(prop, v) - log_target_sig(sig2, v), rng);
        counts.collapsed[0].record(ok);
        if ok {
            sig2 = prop;
        }
        let prop = v * (proposals.collapsed_scales[1] * std_normal(rng)).exp();
        let ok = prop.is_finite() && prop > 0.0 && accept(log_target_v(sig2, prop) - log_target_v(sig2, v), rng);
        counts.collapsed[1].record(ok);
        if ok {
            v = prop;
        }
        state.params.sigma2_y = sig2;
        state.params.sigma_b = sigma_of(v);

        let inv_s2 = 1.0 / sig2;
        for (i, days) in self.data.days.iter().enumerate() {
            let eta2 = self.data.linear(i, &state.params.beta);
            let (mut k, mut sum) = (0.0, 0.0);
            for ly in days.iter().filter_map(|d| d.log_y2) {
                k += 1.0;
                sum += ly - eta2;
            }
            let prec = 1.0 / v + k * inv_s2;
            let mean = (c2 * state.b[i][0] / v + sum * inv_s2) / prec;
            state.b[i][1] = mean + std_normal(rng) / prec.sqrt();
        }
        Ok(())
    }

    /// Joint move of λ with a translation of b1 for persons whose days are
    /// all zero: `b1 += ln(1−λ) − ln(1−λ')` keeps their zero probability
    /// `exp(−μ(1−λ))` fixed. Translations have unit Jacobian, so the ratio is
    /// the posterior ratio. Generalized Poisson only.
    pub fn update_zero_shift<R: Rng + ?Sized>(
        &self,
        state: &mut ParamState,
        proposals: &Proposals,
        counts: &mut AcceptCounts,
        rng: &mut R,
    ) -> Result<()> {
        if self.family != CountFamily::GenPoisson {
            return Ok(());
        }
        let step = proposals.zero_shift_scale * std_normal(rng);
        let par = &state.params;
        let Some(lam) = self.disp_propose(par.lambda, step) else {
            counts.zero_shift.record(false);
            return Ok(());
        };
        let shift = (-par.lambda).ln_1p() - (-lam).ln_1p();
        let inv = par.sigma_b.inverse()?;
        let old_k = self.count_kernel(par.lambda);
        let new_k = self.count_kernel(lam);
        let mut log_ratio = self.disp_log_target_prior(lam) - self.disp_log_target_prior(par.lambda);
        for (i, days) in self.data.days.iter().enumerate() {
            let eta = self.data.linear(i, &par.gamma);
            let b = state.b[i];
            if days.iter().all(|d| d.y1 == 0) {
                let nb = [b[0] + shift, b[1]];
                log_ratio += new_k.person_loglik(days, eta + nb[0]) - old_k.person_loglik(days, eta + b[0]);
                log_ratio -= 0.5 * (inv.quad(nb) - inv.quad(b));
            } else {
                log_ratio += new_k.person_loglik(days, eta + b[0]) - old_k.person_loglik(days, eta + b[0]);
            }
        }
        let ok = accept(log_ratio, rng);
        counts.zero_shift.record(ok);
        if ok {
            state.params.lambda = lam;
            for (b, days) in state.b.iter_mut().zip(&self.data.days) {
                if days.iter().all(|d| d.y1 == 0) {
                    b[0] += shift;
                }
            }
        }
        Ok(())
    }

    /// One full sweep.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        state: &mut ParamState,
        proposals: &Proposals,
        counts: &mut AcceptCounts,
        rng: &mut R,
    ) -> Result<()> {
        self.update_random_effects(state, proposals, counts, rng)?;
        self.update_gamma_lambda(state, proposals, counts, rng);
        if self.options.centered_moves {
            self.update_gamma_centered(state, rng)?;
        }
        self.update_beta(state, rng)?;
        if self.options.centered_moves {
            self.update_beta_centered(state, rng)?;
        }
        self.update_sigma2_y(state, rng);
        self.update_sigma_b(state, rng)?;
        if self.options.expansion_moves {
            self.update_expansion(state, 0, proposals, counts, rng)?;
            self.update_expansion(state, 1, proposals, counts, rng)?;
            self.update_shear(state, 0, proposals, counts, rng)?;
            self.update_shear(state, 1, proposals, counts, rng)?;
        }
        if self.options.collapsed_moves {
            self.update_collapsed_b2(state, proposals, counts, rng)?;
        }
        if self.options.zero_shift_moves {
            self.update_zero_shift(state, proposals, counts, rng)?;
        }
        Ok(())
    }
}

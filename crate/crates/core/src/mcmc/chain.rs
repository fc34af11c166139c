use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{AcceptCounts, Counter, Kernel, KernelOptions, Proposals};
use super::model::{joint_loglik, CountFamily, ModelData, ModelParams, ParamState};
use super::prior::PriorConfig;
use crate::error::{Error, Result};
use crate::linalg::Sym2;

const BLOCK_TARGET: f64 = 0.35;
const SCALAR_TARGET: f64 = 0.44;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_iter: u64,
    pub n_burnin: u64,
    pub thin: u64,
    pub seed: u64,
    /// Burn-in iterations between proposal-scale adjustments.
    pub adapt_window: u64,
    /// Initial multiplier of the γ block proposal (default 2.38/√p).
    pub gamma_scale: Option<f64>,
    /// Initial random-walk scale for logit λ / log κ.
    pub disp_scale: Option<f64>,
    /// Initial multiplier of the per-person b1 proposal.
    pub re_scale: Option<f64>,
    pub per_coordinate_gamma: bool,
    pub centered_moves: bool,
    pub expansion_moves: bool,
    pub collapsed_moves: bool,
    pub zero_shift_moves: bool,
    pub re_steps: usize,
    pub disp_steps: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_iter: 20_000,
            n_burnin: 5_000,
            thin: 5,
            seed: 0,
            adapt_window: 100,
            gamma_scale: None,
            disp_scale: None,
            re_scale: None,
            per_coordinate_gamma: false,
            centered_moves: true,
            expansion_moves: true,
            collapsed_moves: true,
            zero_shift_moves: true,
            re_steps: 2,
            disp_steps: 3,
        }
    }
}

impl ChainConfig {
    /// Three chains of 500,000 iterations, 50,000 burn-in, thinned by 15.
    pub fn paper_protocol(seed: u64) -> Self {
        Self {
            n_iter: 500_000,
            n_burnin: 50_000,
            thin: 15,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1");
        }
        if self.n_burnin >= self.n_iter {
            return bad("n_burnin must be smaller than n_iter");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be at least 1");
        }
        if self.re_steps == 0 || self.disp_steps == 0 {
            return bad("re_steps and disp_steps must be at least 1");
        }
        for s in [self.gamma_scale, self.disp_scale, self.re_scale].into_iter().flatten() {
            if !(s > 0.0 && s.is_finite()) {
                return bad("proposal scales must be positive");
            }
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn stored_per_chain(&self) -> usize {
        ((self.n_iter - self.n_burnin) / self.thin) as usize
    }

    fn kernel_options(&self) -> KernelOptions {
        KernelOptions {
            centered_moves: self.centered_moves,
            re_steps: self.re_steps,
            expansion_moves: self.expansion_moves,
            disp_steps: self.disp_steps,
            collapsed_moves: self.collapsed_moves,
            zero_shift_moves: self.zero_shift_moves,
        }
    }
}

/// Post-burn-in acceptance rates of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLedger {
    pub gamma: f64,
    pub gamma_coord: Vec<f64>,
    pub dispersion: f64,
    pub re_mean: f64,
    pub re_per_person: Vec<f64>,
    #[serde(default)]
    pub expansion: [f64; 2],
    #[serde(default)]
    pub shear: [f64; 2],
    #[serde(default)]
    pub collapsed: [f64; 2],
    #[serde(default)]
    pub zero_shift: f64,
}

impl AcceptanceLedger {
    fn from_counts(c: &AcceptCounts) -> Self {
        Self {
            gamma: c.gamma.rate(),
            gamma_coord: c.gamma_coord.iter().map(Counter::rate).collect(),
            dispersion: c.disp.rate(),
            re_mean: c.mean_re_rate(),
            re_per_person: c.re.iter().map(Counter::rate).collect(),
            expansion: [c.expansion[0].rate(), c.expansion[1].rate()],
            shear: [c.shear[0].rate(), c.shear[1].rate()],
            collapsed: [c.collapsed[0].rate(), c.collapsed[1].rate()],
            zero_shift: c.zero_shift.rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub iters: Vec<u64>,
    pub params: Vec<ModelParams>,
    pub acceptance: Option<AcceptanceLedger>,
}

/// Thinned post-burn-in draws of every chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub family: CountFamily,
    pub columns: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn total(&self) -> usize {
        self.chains.iter().map(|c| c.params.len()).sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        ModelParams::scalar_names(&self.columns, self.family)
    }

    /// Per-chain series of one named scalar.
    pub fn series(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let k = self
            .param_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        Ok(self
            .chains
            .iter()
            .map(|c| c.params.iter().map(|p| p.scalars()[k]).collect())
            .collect())
    }

    /// All scalar series at once: `[param][chain][draw]`.
    pub fn all_series(&self) -> Vec<Vec<Vec<f64>>> {
        let k = self.param_names().len();
        let mut out = vec![vec![Vec::new(); self.chains.len()]; k];
        for (c, chain) in self.chains.iter().enumerate() {
            for p in &chain.params {
                for (j, v) in p.scalars().into_iter().enumerate() {
                    out[j][c].push(v);
                }
            }
        }
        out
    }

    /// Draws pooled across chains in chain-major order.
    pub fn pooled(&self) -> Vec<&ModelParams> {
        self.chains.iter().flat_map(|c| c.params.iter()).collect()
    }
}

/// Serializable snapshot of a ChaCha stream position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (u128 does not survive every JSON reader).
    pub word_pos: String,
}

impl RngSnapshot {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Invalid(format!("bad RNG word position `{}`", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// The independent stream of chain `chain` under master seed `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Complete resumable state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub chain: usize,
    pub iter: u64,
    pub state: ParamState,
    pub proposals: Proposals,
    pub rng: RngSnapshot,
    pub adapt_round: u64,
    pub window: AcceptCounts,
    pub burnin_counts: AcceptCounts,
    pub sampling_counts: AcceptCounts,
    pub iters: Vec<u64>,
    pub params: Vec<ModelParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ChainConfig,
    pub family: CountFamily,
    pub prior: PriorConfig,
    pub data_fingerprint: u64,
    pub chains: Vec<ChainCheckpoint>,
}

struct ChainRunner {
    chain: usize,
    iter: u64,
    state: ParamState,
    proposals: Proposals,
    rng: ChaCha8Rng,
    adapt_round: u64,
    window: AcceptCounts,
    burnin_counts: AcceptCounts,
    sampling_counts: AcceptCounts,
    iters: Vec<u64>,
    params: Vec<ModelParams>,
}

fn adapt_log(scale: &mut f64, rate: f64, target: f64, gain: f64) {
    if rate.is_finite() {
        *scale *= (gain * (rate - target)).exp();
        *scale = scale.clamp(1e-4, 1e3);
    }
}

impl ChainRunner {
    fn advance(&mut self, kernel: &Kernel<'_>, cfg: &ChainConfig, until: u64) -> Result<()> {
        let until = until.min(cfg.n_iter);
        while self.iter < until {
            let t = self.iter + 1;
            let counts = if t <= cfg.n_burnin { &mut self.window } else { &mut self.sampling_counts };
            kernel
                .sweep(&mut self.state, &self.proposals, counts, &mut self.rng)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("chain {} iteration {t}: {m}", self.chain)),
                    other => other,
                })?;
            self.iter = t;
            if t <= cfg.n_burnin && t.is_multiple_of(cfg.adapt_window) {
                self.adapt();
            }
            if t > cfg.n_burnin && (t - cfg.n_burnin).is_multiple_of(cfg.thin) {
                self.iters.push(t);
                self.params.push(self.state.params.clone());
            }
        }
        Ok(())
    }

    fn adapt(&mut self) {
        self.adapt_round += 1;
        let gain = (1.0 / (self.adapt_round as f64).sqrt()).max(0.2);
        let w = &self.window;
        let pr = &mut self.proposals;
        if pr.per_coordinate {
            for (s, c) in pr.gamma_coord_scales.iter_mut().zip(&w.gamma_coord) {
                adapt_log(s, c.rate(), SCALAR_TARGET, gain);
            }
        } else {
            adapt_log(&mut pr.gamma_scale, w.gamma.rate(), BLOCK_TARGET, gain);
        }
        adapt_log(&mut pr.disp_scale, w.disp.rate(), SCALAR_TARGET, gain);
        for (s, c) in pr.expansion_scales.iter_mut().zip(&w.expansion) {
            adapt_log(s, c.rate(), SCALAR_TARGET, gain);
        }
        for (s, c) in pr.shear_scales.iter_mut().zip(&w.shear) {
            adapt_log(s, c.rate(), SCALAR_TARGET, gain);
        }
        for (s, c) in pr.collapsed_scales.iter_mut().zip(&w.collapsed) {
            adapt_log(s, c.rate(), SCALAR_TARGET, gain);
        }
        for (s, c) in pr.re_scales.iter_mut().zip(&w.re) {
            adapt_log(s, c.rate(), SCALAR_TARGET, gain);
        }
        adapt_log(&mut pr.zero_shift_scale, w.zero_shift.rate(), SCALAR_TARGET, gain);
        let n = self.window.re.len();
        let p = self.window.gamma_coord.len();
        let finished = std::mem::replace(&mut self.window, AcceptCounts::new(n, p));
        merge(&mut self.burnin_counts, &finished);
    }

    fn checkpoint(&self) -> ChainCheckpoint {
        ChainCheckpoint {
            chain: self.chain,
            iter: self.iter,
            state: self.state.clone(),
            proposals: self.proposals.clone(),
            rng: RngSnapshot::capture(&self.rng),
            adapt_round: self.adapt_round,
            window: self.window.clone(),
            burnin_counts: self.burnin_counts.clone(),
            sampling_counts: self.sampling_counts.clone(),
            iters: self.iters.clone(),
            params: self.params.clone(),
        }
    }

    fn restore(c: ChainCheckpoint) -> Result<Self> {
        Ok(Self {
            chain: c.chain,
            iter: c.iter,
            rng: c.rng.restore()?,
            state: c.state,
            proposals: c.proposals,
            adapt_round: c.adapt_round,
            window: c.window,
            burnin_counts: c.burnin_counts,
            sampling_counts: c.sampling_counts,
            iters: c.iters,
            params: c.params,
        })
    }
}

fn merge(into: &mut AcceptCounts, from: &AcceptCounts) {
    let add = |a: &mut Counter, b: &Counter| {
        a.accepted += b.accepted;
        a.proposed += b.proposed;
    };
    add(&mut into.gamma, &from.gamma);
    add(&mut into.disp, &from.disp);
    for (a, b) in into.expansion.iter_mut().zip(&from.expansion) {
        add(a, b);
    }
    for (a, b) in into.shear.iter_mut().zip(&from.shear) {
        add(a, b);
    }
    for (a, b) in into.collapsed.iter_mut().zip(&from.collapsed) {
        add(a, b);
    }
    add(&mut into.zero_shift, &from.zero_shift);
    for (a, b) in into.gamma_coord.iter_mut().zip(&from.gamma_coord) {
        add(a, b);
    }
    for (a, b) in into.re.iter_mut().zip(&from.re) {
        add(a, b);
    }
}

/// Cheap content hash guarding resumes against a different data set.
pub fn data_fingerprint(data: &ModelData) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for byte in x.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(data.n() as u64);
    eat(data.p() as u64);
    for i in 0..data.n() {
        for v in data.row(i) {
            eat(v.to_bits());
        }
        for d in &data.days[i] {
            eat(d.y1 as u64);
            eat(d.log_y2.map_or(0, f64::to_bits));
        }
    }
    h
}

/// Multi-chain driver with checkpoint/resume.
pub struct Sampler<'a> {
    kernel: Kernel<'a>,
    cfg: ChainConfig,
    chains: Vec<ChainRunner>,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a ModelData, prior: &'a PriorConfig, family: CountFamily, cfg: ChainConfig) -> Result<Self> {
        cfg.validate()?;
        let kernel = Kernel::new(data, prior, family, cfg.kernel_options())?;
        let chains = (0..cfg.n_chains)
            .map(|c| {
                let state = initial_state(data, prior, family, c)?;
                let ll = joint_loglik(&state, data, family)?;
                if !ll.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite log posterior at initialization of chain {c}: {}",
                        serde_json::to_string(&state.params).unwrap_or_default()
                    )));
                }
                let mut proposals = Proposals::from_data(data, prior, family, state.params.lambda)?;
                proposals.per_coordinate = cfg.per_coordinate_gamma;
                if let Some(s) = cfg.gamma_scale {
                    proposals.gamma_scale = s;
                }
                if let Some(s) = cfg.disp_scale {
                    proposals.disp_scale = s;
                }
                if let Some(s) = cfg.re_scale {
                    proposals.re_scales.iter_mut().for_each(|x| *x = s);
                }
                Ok(ChainRunner {
                    chain: c,
                    iter: 0,
                    state,
                    proposals,
                    rng: chain_rng(cfg.seed, c),
                    adapt_round: 0,
                    window: AcceptCounts::new(data.n(), data.p()),
                    burnin_counts: AcceptCounts::new(data.n(), data.p()),
                    sampling_counts: AcceptCounts::new(data.n(), data.p()),
                    iters: Vec::with_capacity(cfg.stored_per_chain()),
                    params: Vec::with_capacity(cfg.stored_per_chain()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernel, cfg, chains })
    }

    /// Rebuild a sampler from a checkpoint taken on the same data and prior.
    pub fn resume(data: &'a ModelData, checkpoint: Checkpoint, prior: &'a PriorConfig) -> Result<Self> {
        if checkpoint.data_fingerprint != data_fingerprint(data) {
            return Err(Error::Invalid("checkpoint was taken on different data".into()));
        }
        if &checkpoint.prior != prior {
            return Err(Error::Invalid("checkpoint was taken with a different prior".into()));
        }
        checkpoint.config.validate()?;
        let kernel = Kernel::new(data, prior, checkpoint.family, checkpoint.config.kernel_options())?;
        let chains = checkpoint
            .chains
            .into_iter()
            .map(ChainRunner::restore)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kernel,
            cfg: checkpoint.config,
            chains,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    /// Smallest completed iteration over chains.
    pub fn iteration(&self) -> u64 {
        self.chains.iter().map(|c| c.iter).min().unwrap_or(0)
    }

    pub fn is_done(&self) -> bool {
        self.iteration() >= self.cfg.n_iter
    }

    /// Current state of each chain.
    pub fn states(&self) -> Vec<&ParamState> {
        self.chains.iter().map(|c| &c.state).collect()
    }

    pub fn proposals(&self) -> Vec<&Proposals> {
        self.chains.iter().map(|c| &c.proposals).collect()
    }

    /// Run every chain (concurrently) up to iteration `until`.
    pub fn advance(&mut self, until: u64) -> Result<()> {
        let kernel = &self.kernel;
        let cfg = &self.cfg;
        self.chains
            .par_iter_mut()
            .map(|c| c.advance(kernel, cfg, until))
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            family: self.kernel.family,
            prior: self.kernel.prior.clone(),
            data_fingerprint: data_fingerprint(self.kernel.data),
            chains: self.chains.iter().map(ChainRunner::checkpoint).collect(),
        }
    }

    pub fn finish(self) -> PosteriorDraws {
        PosteriorDraws {
            family: self.kernel.family,
            columns: self.kernel.data.columns.clone(),
            chains: self
                .chains
                .into_iter()
                .map(|c| ChainDraws {
                    acceptance: Some(AcceptanceLedger::from_counts(&c.sampling_counts)),
                    iters: c.iters,
                    params: c.params,
                })
                .collect(),
        }
    }
}

/// Run all chains to completion.
pub fn run_chains(data: &ModelData, prior: &PriorConfig, family: CountFamily, cfg: &ChainConfig) -> Result<PosteriorDraws> {
    let mut s = Sampler::new(data, prior, family, cfg.clone())?;
    s.advance(cfg.n_iter)?;
    Ok(s.finish())
}

struct Fit {
    coef: Vec<f64>,
    se: Vec<f64>,
}

/// Ridge-stabilized Poisson regression of person totals with a log
/// exposure offset, by Newton–Raphson with step halving.
fn poisson_moment_fit(data: &ModelData, prior_prec: &DMatrix<f64>, prior_mean: &DVector<f64>) -> Result<(Fit, Vec<f64>)> {
    let (n, p) = (data.n(), data.p());
    let y: Vec<f64> = data.days.iter().map(|d| d.iter().map(|x| x.y1 as f64).sum()).collect();
    let off: Vec<f64> = data.days.iter().map(|d| (d.len() as f64).ln()).collect();
    let objective = |g: &DVector<f64>| -> f64 {
        let mut v = 0.0;
        for i in 0..n {
            let eta = data.linear(i, g.as_slice()) + off[i];
            v += y[i] * eta - eta.exp();
        }
        let d = g - prior_mean;
        v - 0.5 * d.dot(&(prior_prec * &d))
    };
    let mut g = DVector::zeros(p);
    let mut f = objective(&g);
    let mut hess = prior_prec.clone();
    for _ in 0..100 {
        let mut grad = -(prior_prec * (&g - prior_mean));
        hess = prior_prec.clone();
        for i in 0..n {
            let zi = data.row(i);
            let mu = (data.linear(i, g.as_slice()) + off[i]).exp();
            for a in 0..p {
                grad[a] += zi[a] * (y[i] - mu);
                for c in 0..p {
                    hess[(a, c)] += mu * zi[a] * zi[c];
                }
            }
        }
        let chol = hess
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("initial Poisson fit: singular information".into()))?;
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &g + &step * t;
            let fc = objective(&cand);
            if fc.is_finite() && fc >= f - 1e-12 {
                g = cand;
                accepted = (fc - f).abs() > 1e-10 * (1.0 + f.abs());
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let cov = hess
        .cholesky()
        .ok_or_else(|| Error::Numeric("initial Poisson fit: singular information".into()))?
        .inverse();
    let se = (0..p).map(|k| cov[(k, k)].sqrt()).collect();
    let mu = (0..n).map(|i| (data.linear(i, g.as_slice()) + off[i]).exp()).collect();
    Ok((
        Fit {
            coef: g.iter().copied().collect(),
            se,
        },
        mu,
    ))
}

/// Ridge least squares of `ln y2` on positive days; returns the fit and
/// the residual variance.
fn log_excess_fit(data: &ModelData, prior_prec: &DMatrix<f64>, prior_mean: &DVector<f64>) -> Result<(Fit, f64)> {
    let p = data.p();
    let mut xtx = prior_prec.clone();
    let mut xty = prior_prec * prior_mean;
    let mut count = 0usize;
    for (i, days) in data.days.iter().enumerate() {
        let zi = data.row(i);
        for ly in days.iter().filter_map(|d| d.log_y2) {
            count += 1;
            for a in 0..p {
                xty[a] += zi[a] * ly;
                for c in 0..p {
                    xtx[(a, c)] += zi[a] * zi[c];
                }
            }
        }
    }
    let inv = xtx
        .cholesky()
        .ok_or_else(|| Error::Numeric("initial least squares: singular design".into()))?
        .inverse();
    let beta = &inv * &xty;
    let mut ssr = 0.0;
    for (i, days) in data.days.iter().enumerate() {
        let m = data.linear(i, beta.as_slice());
        for ly in days.iter().filter_map(|d| d.log_y2) {
            ssr += (ly - m).powi(2);
        }
    }
    let s2 = if count > p { ssr / (count - p) as f64 } else { 1.0 };
    let s2 = s2.max(1e-3);
    let se = (0..p).map(|k| (s2 * inv[(k, k)]).sqrt()).collect();
    Ok((
        Fit {
            coef: beta.iter().copied().collect(),
            se,
        },
        s2,
    ))
}

/// Overdispersed starting point for chain `chain`.
///
/// Regression coefficients start at the lower 95% bound, the estimate, or
/// the upper bound of a quick moment fit; λ cycles through 0.1/0.5/0.9 of
/// its support; variance parameters are multiplied by 0.1/1/10.
pub fn initial_state(data: &ModelData, prior: &PriorConfig, family: CountFamily, chain: usize) -> Result<ParamState> {
    let cache = super::prior::PriorCache::new(prior)?;
    let (gfit, mu) = poisson_moment_fit(data, &cache.gamma_prec, &cache.gamma_mean)?;
    let beta_mean = DVector::from_vec(prior.beta_mean.clone());
    let (bfit, s2) = log_excess_fit(data, &cache.beta_prec, &beta_mean)?;
    let k = chain % 3;
    let z = [-1.96, 0.0, 1.96][k];
    let factor = [0.1, 1.0, 10.0][k];
    let frac = [0.1, 0.5, 0.9][k];
    let lambda = match family {
        CountFamily::GenPoisson => {
            let (lo, hi) = prior.lambda_bounds;
            lo + (hi - lo) * frac
        }
        CountFamily::NegBinomial => [0.5, 2.0, 10.0][k],
    };

    // person-level log ratios seed the random effects and their spread
    let mut r1 = Vec::with_capacity(data.n());
    let mut r2 = Vec::with_capacity(data.n());
    for (i, days) in data.days.iter().enumerate() {
        let tot: f64 = days.iter().map(|d| d.y1 as f64).sum();
        r1.push(((tot + 0.5) / (mu[i] + 0.5)).ln());
        let m = data.linear(i, &bfit.coef);
        let res: Vec<f64> = days.iter().filter_map(|d| d.log_y2).map(|ly| ly - m).collect();
        r2.push(if res.is_empty() { 0.0 } else { crate::stats::mean(&res) });
    }
    let v1 = if r1.len() > 1 { crate::stats::variance(&r1) } else { 0.5 };
    let v2 = if r2.len() > 1 { crate::stats::variance(&r2) - 0.5 * s2 } else { 0.5 };
    let v1 = v1.max(0.05);
    let v2 = v2.max(0.05);

    let params = ModelParams {
        gamma: gfit.coef.iter().zip(&gfit.se).map(|(c, s)| c + z * s).collect(),
        beta: bfit.coef.iter().zip(&bfit.se).map(|(c, s)| c + z * s).collect(),
        lambda,
        sigma2_y: s2 * factor,
        sigma_b: Sym2::diag(v1 * factor, v2 * factor),
    };
    params.validate(family)?;
    let b = r1.iter().zip(&r2).map(|(a, c)| [0.5 * a, 0.5 * c]).collect();
    Ok(ParamState { params, b })
}

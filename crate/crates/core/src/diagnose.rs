//! Convergence diagnostics for draw archives and the pre-model checks that
//! the two measurement days are exchangeable.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bouts::DayObservation;
use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::stats::{chi2_sf, mean, quantile, t_two_sided, variance};

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const MCSE_RATIO_THRESHOLD: f64 = 0.015;

/// Split-chain potential scale reduction factor.
///
/// Every chain is halved (a trailing odd draw is dropped) and the classic
/// between/within variance ratio is computed over the halves. The result
/// is clamped below at 1.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Invalid("R-hat needs at least two chains".into()));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::Invalid("R-hat needs chains of equal length".into()));
    }
    let half = len / 2;
    if half < 2 {
        return Err(Error::Invalid("R-hat needs at least four draws per chain".into()));
    }
    let pieces: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[half..2 * half]]).collect();
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let w = mean(&pieces.iter().map(|p| variance(p)).collect::<Vec<_>>());
    let b = half as f64 * variance(&means);
    if w <= 0.0 {
        return Ok(if b <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let n = half as f64;
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt().max(1.0))
}

/// Batch-means estimate of the asymptotic variance of the sample mean.
/// Returns `(σ²_BM, total draws)`.
fn batch_means_variance(chains: &[Vec<f64>]) -> Result<(f64, usize)> {
    let total: usize = chains.iter().map(Vec::len).sum();
    if total < 100 {
        return Err(Error::Invalid(format!("MCSE needs at least 100 draws, got {total}")));
    }
    let mut batch_means = Vec::new();
    let mut batch = 0usize;
    for c in chains {
        let m = c.len();
        if m == 0 {
            continue;
        }
        let b = (m as f64).sqrt().floor() as usize;
        batch = batch.max(b);
        for chunk in c.chunks_exact(b) {
            batch_means.push(mean(chunk));
        }
    }
    if batch_means.len() < 2 {
        return Err(Error::Invalid("MCSE needs at least two batches".into()));
    }
    Ok((batch as f64 * variance(&batch_means), total))
}

/// Batch-means Monte Carlo standard error, batch size ⌊√m⌋ per chain.
pub fn mcse(chains: &[Vec<f64>]) -> Result<f64> {
    let (s2, total) = batch_means_variance(chains)?;
    Ok((s2 / total as f64).sqrt())
}

/// Sample autocorrelations of one chain at lags `0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            if c0 == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            let ck: f64 = (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / n as f64;
            ck / c0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub param: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
    pub mcse: f64,
    pub mcse_ratio: f64,
    pub ess: f64,
    pub rhat_ok: bool,
    pub mcse_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptanceRow {
    pub chain: usize,
    pub block: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub acceptance: Vec<AcceptanceRow>,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.rhat_ok && r.mcse_ok)
    }

    pub fn row(&self, param: &str) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.param == param)
    }

    /// Parameters whose MCSE exceeds 1.5% of the posterior SD.
    pub fn flagged(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| !r.mcse_ok).map(|r| r.param.as_str()).collect()
    }
}

/// R̂, MCSE and summaries for every scalar parameter. R̂ is `NaN` for a
/// single chain.
pub fn convergence_report(draws: &PosteriorDraws) -> Result<ConvergenceReport> {
    let names = draws.param_names();
    let series = draws.all_series();
    let mut rows = Vec::with_capacity(names.len());
    for (name, chains) in names.into_iter().zip(series) {
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let sd = variance(&pooled).sqrt();
        let rhat = if chains.len() >= 2 { gelman_rubin(&chains)? } else { f64::NAN };
        let (s2, total) = batch_means_variance(&chains)?;
        let se = (s2 / total as f64).sqrt();
        let ratio = if sd > 0.0 { se / sd } else { 0.0 };
        let ess = if s2 > 0.0 { total as f64 * sd * sd / s2 } else { total as f64 };
        rows.push(ConvergenceRow {
            mean: mean(&pooled),
            sd,
            q025: quantile(&pooled, 0.025),
            q975: quantile(&pooled, 0.975),
            rhat,
            mcse: se,
            mcse_ratio: ratio,
            ess,
            rhat_ok: rhat.is_nan() || rhat < RHAT_THRESHOLD,
            mcse_ok: ratio < MCSE_RATIO_THRESHOLD,
            param: name,
        });
    }
    let mut acceptance = Vec::new();
    for (c, chain) in draws.chains.iter().enumerate() {
        if let Some(a) = &chain.acceptance {
            let mut push = |block: String, rate: f64| acceptance.push(AcceptanceRow { chain: c, block, rate });
            push("gamma".into(), a.gamma);
            for (k, r) in a.gamma_coord.iter().enumerate() {
                if r.is_finite() {
                    push(format!("gamma.{}", draws.columns[k]), *r);
                }
            }
            push(draws.family.dispersion_name().into(), a.dispersion);
            push("random_effects_mean".into(), a.re_mean);
            if a.expansion.iter().all(|r| r.is_finite()) {
                push("expansion_b1".into(), a.expansion[0]);
                push("expansion_b2".into(), a.expansion[1]);
            }
            if a.shear.iter().all(|r| r.is_finite()) {
                push("shear_b1".into(), a.shear[0]);
                push("shear_b2".into(), a.shear[1]);
            }
            if a.collapsed.iter().all(|r| r.is_finite()) {
                push("collapsed_sigma2_y".into(), a.collapsed[0]);
                push("collapsed_var_b2".into(), a.collapsed[1]);
            }
            if a.zero_shift.is_finite() {
                push("zero_shift".into(), a.zero_shift);
            }
        }
    }
    Ok(ConvergenceReport { rows, acceptance })
}

/// Outcome of a χ²-type test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Bowker's symmetry test. Only off-diagonal pairs with a positive total
/// contribute, to the statistic and to the degrees of freedom.
pub fn bowker_test(table: &[Vec<u64>]) -> Result<TestResult> {
    let k = table.len();
    if table.iter().any(|r| r.len() != k) {
        return Err(Error::Invalid("Bowker test needs a square table".into()));
    }
    let mut stat = 0.0;
    let mut df = 0usize;
    for l in 0..k {
        for m in l + 1..k {
            let (a, b) = (table[l][m] as f64, table[m][l] as f64);
            if a + b > 0.0 {
                stat += (a - b).powi(2) / (a + b);
                df += 1;
            }
        }
    }
    if df == 0 {
        return Err(Error::Invalid("Bowker test: every off-diagonal pair is empty".into()));
    }
    Ok(TestResult {
        statistic: stat,
        df: df as f64,
        p_value: chi2_sf(stat, df as f64),
    })
}

/// First two days of each person, in day order. Persons with fewer days are skipped.
pub fn day_pairs(days: &[DayObservation]) -> Vec<(&DayObservation, &DayObservation)> {
    let mut by_person: BTreeMap<&str, Vec<&DayObservation>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for d in days {
        let e = by_person.entry(d.person_id.as_str()).or_default();
        if e.is_empty() {
            order.push(d.person_id.as_str());
        }
        e.push(d);
    }
    order
        .into_iter()
        .filter_map(|id| {
            let mut v = by_person.remove(id)?;
            v.sort_by_key(|d| d.day_index);
            (v.len() >= 2).then(|| (v[0], v[1]))
        })
        .collect()
}

/// Day-1 × day-2 table of bout counts, categories `0..=cap` with the top one pooled.
pub fn pair_table(days: &[DayObservation], cap: u32) -> Vec<Vec<u64>> {
    let k = cap as usize + 1;
    let mut t = vec![vec![0u64; k]; k];
    for (a, b) in day_pairs(days) {
        t[a.y1.min(cap) as usize][b.y1.min(cap) as usize] += 1;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p_value: f64,
}

fn t_and_p(est: f64, se: f64, df: f64) -> (f64, f64) {
    if se > 0.0 {
        let t = est / se;
        (t, t_two_sided(t, df))
    } else if est == 0.0 {
        (0.0, 1.0)
    } else {
        (est.signum() * f64::INFINITY, 0.0)
    }
}

/// OLS of the day-1 minus day-2 difference in `y2` on an intercept (the day
/// effect), the `y1` difference and the weekend-indicator difference.
///
/// Columns without variation (e.g. no person has one weekday and one
/// weekend day) are reported with estimate 0 and p-value 1; genuinely
/// collinear columns are an error.
pub fn day_effect_regression(days: &[DayObservation]) -> Result<Vec<CoefficientRow>> {
    let pairs = day_pairs(days);
    let n = pairs.len();
    let names = ["day_effect", "y1_difference", "weekend_difference"];
    let cols: [Vec<f64>; 3] = [
        vec![1.0; n],
        pairs.iter().map(|(a, b)| a.y1 as f64 - b.y1 as f64).collect(),
        pairs.iter().map(|(a, b)| a.weekend as u8 as f64 - b.weekend as u8 as f64).collect(),
    ];
    let y: Vec<f64> = pairs.iter().map(|(a, b)| a.y2 - b.y2).collect();
    let active: Vec<usize> = (0..3)
        .filter(|&j| j == 0 || cols[j].iter().any(|&v| v != cols[j][0]))
        .collect();
    let p = active.len();
    if n <= p {
        return Err(Error::Invalid(format!("day-effect regression needs more than {p} paired persons, got {n}")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| cols[active[j]][i]);
    let yv = DVector::from_vec(y);
    let xtx = x.transpose() * &x;
    let svd = xtx.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
        return Err(Error::Invalid("day-effect regression: collinear columns".into()));
    }
    let inv = xtx
        .cholesky()
        .ok_or_else(|| Error::Invalid("day-effect regression: collinear columns".into()))?
        .inverse();
    let beta = &inv * (x.transpose() * &yv);
    let resid = &yv - &x * &beta;
    let df = (n - p) as f64;
    let s2 = resid.norm_squared() / df;
    let mut rows: Vec<CoefficientRow> = names
        .iter()
        .map(|nm| CoefficientRow {
            name: nm.to_string(),
            estimate: 0.0,
            se: 0.0,
            t: 0.0,
            p_value: 1.0,
        })
        .collect();
    for (j, &c) in active.iter().enumerate() {
        let se = (s2 * inv[(j, j)]).sqrt();
        let (t, pv) = t_and_p(beta[j], se, df);
        rows[c].estimate = beta[j];
        rows[c].se = se;
        rows[c].t = t;
        rows[c].p_value = pv;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedT {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Paired t-test of `y1` between the weekend and the weekday observation,
/// over persons observed on exactly one of each among their first two days.
pub fn paired_t_weekend(days: &[DayObservation]) -> Result<PairedT> {
    let diffs: Vec<f64> = day_pairs(days)
        .into_iter()
        .filter(|(a, b)| a.weekend != b.weekend)
        .map(|(a, b)| {
            let (we, wd) = if a.weekend { (a, b) } else { (b, a) };
            we.y1 as f64 - wd.y1 as f64
        })
        .collect();
    let n = diffs.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "weekend t-test needs at least 2 persons with one weekday and one weekend day, got {n}"
        )));
    }
    let m = mean(&diffs);
    let se = (variance(&diffs) / n as f64).sqrt();
    let df = (n - 1) as f64;
    let (t, p) = t_and_p(m, se, df);
    Ok(PairedT { t, df, p_value: p, n })
}

/// Default pooled top category of the day-pair table.
pub const DEFAULT_PAIR_CAP: u32 = 10;

/// One line of the pre-model exchangeability report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreflightRow {
    pub check: String,
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    /// No evidence against exchangeability at the 5% level.
    pub pass: bool,
    pub note: String,
}

impl PreflightRow {
    fn new(check: &str, statistic: f64, df: f64, p_value: f64) -> Self {
        Self {
            check: check.into(),
            statistic,
            df,
            p_value,
            pass: p_value >= 0.05,
            note: String::new(),
        }
    }

    fn skipped(check: &str, why: String) -> Self {
        Self {
            check: check.into(),
            statistic: f64::NAN,
            df: f64::NAN,
            p_value: f64::NAN,
            pass: true,
            note: why,
        }
    }
}

/// Bowker symmetry test, weekend paired t-test and the day-effect
/// regression. A check that cannot be run on these data is reported with
/// its reason instead of failing the whole report.
pub fn preflight(days: &[DayObservation], cap: u32) -> Result<Vec<PreflightRow>> {
    if day_pairs(days).is_empty() {
        return Err(Error::Invalid("no person has two observed days".into()));
    }
    let mut rows = Vec::new();
    rows.push(match bowker_test(&pair_table(days, cap)) {
        Ok(t) => PreflightRow::new("bowker_symmetry", t.statistic, t.df, t.p_value),
        Err(e) => PreflightRow::skipped("bowker_symmetry", e.to_string()),
    });
    rows.push(match paired_t_weekend(days) {
        Ok(t) => {
            let mut r = PreflightRow::new("weekend_paired_t", t.t, t.df, t.p_value);
            r.note = format!("{} persons", t.n);
            r
        }
        Err(e) => PreflightRow::skipped("weekend_paired_t", e.to_string()),
    });
    match day_effect_regression(days) {
        Ok(coef) => {
            let df = (day_pairs(days).len() - 1 - coef.iter().skip(1).filter(|c| c.se > 0.0).count()) as f64;
            for c in coef {
                let mut r = PreflightRow::new(&format!("regression_{}", c.name), c.t, df, c.p_value);
                r.note = format!("estimate {} (se {})", c.estimate, c.se);
                if c.se == 0.0 && c.estimate == 0.0 {
                    r.note = "no variation; not estimated".into();
                }
                rows.push(r);
            }
        }
        Err(e) => rows.push(PreflightRow::skipped("regression", e.to_string())),
    }
    Ok(rows)
}

pub fn write_preflight(path: &Path, rows: &[PreflightRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["check", "statistic", "df", "p_value", "pass", "note"])?;
    for r in rows {
        w.write_record([
            r.check.clone(),
            r.statistic.to_string(),
            r.df.to_string(),
            r.p_value.to_string(),
            r.pass.to_string(),
            r.note.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `convergence.csv`: one row per parameter with pass flags, followed by
/// acceptance rates as `acceptance.<chain>.<block>` rows.
pub fn write_convergence(path: &Path, report: &ConvergenceReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "param", "mean", "sd", "q025", "q975", "rhat", "mcse", "mcse_ratio", "ess", "rhat_pass", "mcse_pass",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.param.clone(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.q025.to_string(),
            r.q975.to_string(),
            r.rhat.to_string(),
            r.mcse.to_string(),
            r.mcse_ratio.to_string(),
            r.ess.to_string(),
            r.rhat_ok.to_string(),
            r.mcse_ok.to_string(),
        ])?;
    }
    for a in &report.acceptance {
        let name = format!("acceptance.{}.{}", a.chain, a.block);
        let e = String::new();
        w.write_record([&name, &a.rate.to_string(), &e, &e, &e, &e, &e, &e, &e, &e, &e])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

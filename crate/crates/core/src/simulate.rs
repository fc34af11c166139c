//! Synthetic data with known truth: covariates, person effects, daily
//! `(y1, y2)` and minute-level MET traces that the bout detector reads back.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bouts::{BoutConfig, DayObservation};
use crate::error::{Error, Result};
use crate::ingest::{Covariate, CovariateRecord, DesignMatrix, IntensityKind, MinuteSeries, MINUTES_PER_DAY};
use crate::linalg::Sym2;
use crate::mcmc::{CountFamily, DayDatum, ModelData, ModelParams};

/// Per-sex marginals of the covariate generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SexProfile {
    /// Counts in the 21–39, 40–59 and 60–71 age bands.
    pub age_bands: [u32; 3],
    pub bmi_mean: f64,
    pub bmi_sd: f64,
    pub black: f64,
    pub hispanic: f64,
    pub smoker: f64,
    pub college: f64,
    pub physical_job: f64,
}

/// Independent-marginal covariate generator. Defaults mimic the PAMS
/// demographics (630 women, 427 men).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerator {
    pub male_fraction: f64,
    pub female: SexProfile,
    pub male: SexProfile,
    pub bmi_range: (f64, f64),
    /// Probability that `physical_job` is left missing.
    pub physical_job_missing: f64,
}

impl Default for CovariateGenerator {
    fn default() -> Self {
        Self {
            male_fraction: 427.0 / 1057.0,
            female: SexProfile {
                age_bands: [106, 331, 193],
                bmi_mean: 30.87,
                bmi_sd: 6.27,
                black: 54.0 / 630.0,
                hispanic: 20.0 / 630.0,
                smoker: 106.0 / 630.0,
                college: 229.0 / 630.0,
                physical_job: 287.0 / 630.0,
            },
            male: SexProfile {
                age_bands: [129, 187, 111],
                bmi_mean: 30.1,
                bmi_sd: 8.09,
                black: 30.0 / 427.0,
                hispanic: 16.0 / 427.0,
                smoker: 83.0 / 427.0,
                college: 182.0 / 427.0,
                physical_job: 215.0 / 427.0,
            },
            bmi_range: (16.8, 72.9),
            physical_job_missing: 0.0,
        }
    }
}

impl CovariateGenerator {
    /// `n` records with ids `p0001…`. The number of men is
    /// `round(n · male_fraction)`; everything else is drawn independently.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<CovariateRecord> {
        let n_male = (n as f64 * self.male_fraction).round() as usize;
        let width = n.to_string().len().max(4);
        (0..n)
            .map(|i| {
                let male = i < n_male;
                let prof = if male { &self.male } else { &self.female };
                let total: u32 = prof.age_bands.iter().sum();
                let mut u = rng.random_range(0..total);
                let band = prof
                    .age_bands
                    .iter()
                    .position(|&c| {
                        if u < c {
                            true
                        } else {
                            u -= c;
                            false
                        }
                    })
                    .unwrap_or(2);
                let (lo, hi) = [(21.0, 40.0), (40.0, 60.0), (60.0, 72.0)][band];
                let age: f64 = rng.random_range(lo..hi);
                let bmi_dist = Normal::new(prof.bmi_mean, prof.bmi_sd).expect("positive sd");
                let bmi = loop {
                    let b: f64 = bmi_dist.sample(rng);
                    if b >= self.bmi_range.0 && b <= self.bmi_range.1 {
                        break b;
                    }
                };
                let mut flag = |p: f64| u8::from(rng.random_bool(p.clamp(0.0, 1.0)));
                let black = flag(prof.black);
                let hispanic = flag(prof.hispanic);
                let smoker = flag(prof.smoker);
                let college = flag(prof.college);
                let job = flag(prof.physical_job);
                let missing = rng.random_bool(self.physical_job_missing.clamp(0.0, 1.0));
                CovariateRecord {
                    person_id: format!("p{:0width$}", i + 1),
                    gender: u8::from(male),
                    age,
                    bmi,
                    black,
                    hispanic,
                    smoker,
                    college,
                    physical_job: (!missing).then_some(job),
                    weight: 1.0,
                }
            })
            .collect()
    }
}

/// Coefficient on a named design column (standardized age/BMI scale).
fn table2_coefficients(column: &str) -> (f64, f64) {
    // (γ, β): signs follow the reported associations
    match column {
        "intercept" => (0.4, 2.6),
        "gender" => (0.35, 0.2),
        "age" => (-0.2, 0.0),
        "bmi" => (-0.2, -0.15),
        "black" => (-0.1, -0.1),
        "hispanic" => (-0.25, 0.0),
        "smoker" => (-0.2, -0.1),
        "college" => (0.0, 0.15),
        "physical_job" => (0.4, 0.25),
        _ => (0.0, 0.0),
    }
}

/// Truth resembling the published PAMS fit: λ = 0.09, σ_y² = 0.47,
/// σ²_b1 = 0.82, σ²_b2 = 0.28, ρ_b = 0.41, with illustrative regression
/// coefficients for the given design columns. The intercept of the count
/// part gives roughly a quarter of days without a bout.
pub fn table2_truth(columns: &[String]) -> ModelParams {
    ModelParams {
        gamma: columns.iter().map(|c| table2_coefficients(c).0).collect(),
        beta: columns.iter().map(|c| table2_coefficients(c).1).collect(),
        lambda: 0.09,
        sigma2_y: 0.47,
        sigma_b: Sym2::from_var_corr(0.82, 0.28, 0.41),
    }
}

/// Simulated observations and the hidden person effects behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub days: Vec<DayObservation>,
    pub effects: Vec<[f64; 2]>,
}

/// Draw `(b1, b2) ~ N(0, Σ_b)` per person, then `days` independent days:
/// `y1` from the count law and, when `y1 > 0`, `y2 ~ LogNormal(Zβ + b2, σ_y²)`.
pub fn simulate_dataset<R: Rng + ?Sized>(
    truth: &ModelParams,
    family: CountFamily,
    design: &DesignMatrix,
    days: usize,
    rng: &mut R,
) -> Result<SimulatedData> {
    truth.validate(family)?;
    if truth.gamma.len() != design.p() || truth.beta.len() != design.p() {
        return Err(Error::Invalid("truth coefficients do not match the design".into()));
    }
    if days == 0 || days > u8::MAX as usize {
        return Err(Error::Invalid(format!("days per person must be in 1..=255, got {days}")));
    }
    let sd_y = truth.sigma2_y.sqrt();
    let mut out = Vec::with_capacity(design.n() * days);
    let mut effects = Vec::with_capacity(design.n());
    for i in 0..design.n() {
        let b = truth.sigma_b.sample_normal(rng);
        effects.push(b);
        let z = design.row(i);
        let mu1 = (dot(z, &truth.gamma) + b[0]).exp();
        let mu2 = dot(z, &truth.beta) + b[1];
        // one weekend day in two-sevenths of the first days, then alternate
        let first_weekend = rng.random_bool(2.0 / 7.0);
        for j in 0..days {
            let y1 = family.sample(mu1, truth.lambda, rng);
            let y2 = if y1 > 0 {
                let e: f64 = StandardNormal.sample(rng);
                (mu2 + sd_y * e).exp()
            } else {
                0.0
            };
            let weekend = if j == 0 { first_weekend } else { rng.random_bool(2.0 / 7.0) };
            out.push(DayObservation::from_summary(
                design.person_ids[i].clone(),
                (j + 1) as u8,
                weekend,
                y1,
                y2,
            ));
        }
    }
    Ok(SimulatedData { days: out, effects })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fresh outcomes for an existing model data set, given parameters and
/// person effects (the "re-draw the data" half of a successive-conditional
/// simulation, and the replicate generator of predictive checks).
pub fn simulate_outcomes<R: Rng + ?Sized>(
    data: &ModelData,
    params: &ModelParams,
    effects: &[[f64; 2]],
    family: CountFamily,
    rng: &mut R,
) -> Result<Vec<Vec<DayDatum>>> {
    let sd_y = params.sigma2_y.sqrt();
    (0..data.n())
        .map(|i| {
            let mu1 = (data.linear(i, &params.gamma) + effects[i][0]).exp();
            let mu2 = data.linear(i, &params.beta) + effects[i][1];
            (0..data.days[i].len())
                .map(|_| {
                    let y1 = family.sample(mu1, params.lambda, rng);
                    let y2 = if y1 > 0 {
                        let e: f64 = StandardNormal.sample(rng);
                        (mu2 + sd_y * e).exp()
                    } else {
                        0.0
                    };
                    DayDatum::new(y1, y2)
                })
                .collect()
        })
        .collect()
}

/// Minimum sub-moderate minutes between consecutive constructed bouts.
pub const MIN_GAP: usize = 3;

/// Build a minute-level MET trace whose detected bout count is exactly `y1`.
///
/// Each bout is a block of moderate minutes (METs near the per-bout target,
/// within 3–6) holding up to two sub-moderate minutes away from its first
/// minute and last two minutes; background minutes are uniform on
/// 0.9–2.9 METs. Blocks are separated by at least [`MIN_GAP`] background
/// minutes, so the detector can neither merge nor split them. Bout lengths
/// aim at the day's average MET-minutes, so `y2` is reproduced approximately;
/// on days too crowded for that, bouts are shortened to fit. Only days whose
/// bouts cannot fit even at the minimum length are an error.
pub fn simulate_minutes<R: Rng + ?Sized>(day: &DayObservation, rng: &mut R) -> Result<MinuteSeries> {
    let cfg = BoutConfig::default();
    let y1 = day.y1 as usize;
    let target = (day.y2 + cfg.excess_offset).max(cfg.excess_offset);
    let gaps = y1.saturating_sub(1) * MIN_GAP;
    // shorten bouts on crowded days; only the count has to be exact
    let room = MINUTES_PER_DAY.saturating_sub(gaps) / y1.max(1);
    let len = ((target / 4.5).round() as usize).clamp(cfg.min_length, 300).min(room);
    let needed = y1 * len + gaps;
    if len < cfg.min_length || needed > MINUTES_PER_DAY {
        return Err(Error::Invalid(format!(
            "{} day {}: {y1} bouts of {len} minutes do not fit in a day",
            day.person_id, day.day_index
        )));
    }
    let mut mets: Vec<f64> = (0..MINUTES_PER_DAY).map(|_| rng.random_range(0.9..2.9)).collect();
    // distribute free minutes over the y1 + 1 gaps
    let slack = MINUTES_PER_DAY - needed;
    let mut cuts: Vec<usize> = (0..y1).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let per_minute = (target / len as f64).clamp(3.0, 6.0);
    let mut pos = 0;
    let mut prev_cut = 0;
    for (k, &cut) in cuts.iter().enumerate() {
        pos += cut - prev_cut + if k > 0 { MIN_GAP } else { 0 };
        prev_cut = cut;
        for m in &mut mets[pos..pos + len] {
            *m = (per_minute + rng.random_range(-0.5..0.5)).clamp(3.0, 6.0);
        }
        let n_inactive = rng.random_range(0..=2usize);
        for _ in 0..n_inactive {
            // interior positions 1..=len-3 keep the first and last two minutes moderate
            let at = pos + rng.random_range(1..=len - 3);
            mets[at] = rng.random_range(0.9..2.9);
        }
        pos += len;
    }
    MinuteSeries::new(day.person_id.clone(), day.day_index, day.weekend, IntensityKind::Met, mets)
}

/// Convenience: PAMS-like covariates and a design with every covariate.
pub fn pams_like_design<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DesignMatrix> {
    let records = CovariateGenerator::default().generate(n, rng);
    DesignMatrix::from_records(&records, &crate::ingest::DesignSpec::default())
}

/// Design restricted to the given covariates (plus intercept).
pub fn design_with<R: Rng + ?Sized>(n: usize, covariates: &[Covariate], rng: &mut R) -> Result<DesignMatrix> {
    let records = CovariateGenerator::default().generate(n, rng);
    DesignMatrix::from_records(
        &records,
        &crate::ingest::DesignSpec {
            intercept: true,
            covariates: covariates.to_vec(),
        },
    )
}

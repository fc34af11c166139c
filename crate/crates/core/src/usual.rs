//! Usual daily MET-minutes in MVPA and compliance with the activity
//! guideline.
//!
//! For posterior draw ℓ and person i, with fresh `(b1, b2) ~ N(0, Σ_b)`:
//! `μ1 = exp(Zγ + b1)`, `t1 = μ1`, `t2 = exp(Zβ + b2 + σ_y²/2)·P(y1 > 0)`,
//! `t3 = 30·t1 + t2·t1`. Compliance is the share of persons with
//! `t3 ≥ 450/7` MET-minutes per day.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{CovariateRecord, DesignMatrix};
use crate::mcmc::{CountFamily, ModelParams, PosteriorDraws};
use crate::stats::{quantile, variance};

/// Daily threshold equivalent to 450 MET-minutes per week.
pub const PAG_DAILY: f64 = 450.0 / 7.0;

/// Default number of posterior draws used.
pub const DEFAULT_DRAWS: usize = 2000;

/// `t3` for one person under one parameter draw and effect pair.
pub fn t3_value(params: &ModelParams, family: CountFamily, z: &[f64], b: [f64; 2]) -> f64 {
    let lin = |c: &[f64]| z.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let mu1 = (lin(&params.gamma) + b[0]).exp();
    if mu1 == 0.0 {
        return 0.0;
    }
    let positive_mean = (lin(&params.beta) + b[1] + 0.5 * params.sigma2_y).exp();
    let p_positive = 1.0 - family.p_zero(mu1, params.lambda);
    30.0 * mu1 + positive_mean * p_positive * mu1
}

/// `t3` draws: one row per posterior draw, one column per person.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsualDraws {
    pub person_ids: Vec<String>,
    pub t3: Vec<Vec<f64>>,
    /// Archive draws behind each row.
    pub draw_index: Vec<usize>,
    /// True when more rows were requested than stored draws, so draws repeat.
    pub with_replacement: bool,
}

impl UsualDraws {
    pub fn n_draws(&self) -> usize {
        self.t3.len()
    }

    pub fn n_persons(&self) -> usize {
        self.person_ids.len()
    }
}

fn draw_rng(seed: u64, l: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((2 << 40) | l as u64);
    rng
}

/// Simulate `t3` for every person of `design` under `l` posterior draws,
/// chosen without replacement when the archive is large enough.
pub fn simulate_t3(draws: &PosteriorDraws, design: &DesignMatrix, l: usize, seed: u64) -> Result<UsualDraws> {
    let pool = draws.pooled();
    if pool.is_empty() {
        return Err(Error::Invalid("posterior archive is empty".into()));
    }
    if l == 0 {
        return Err(Error::Invalid("need at least one draw".into()));
    }
    if design.columns() != draws.columns.as_slice() {
        return Err(Error::Invalid(format!(
            "design columns [{}] differ from the fitted columns [{}]",
            design.columns().join(","),
            draws.columns.join(",")
        )));
    }
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(2 << 40 | ((1 << 40) - 1));
    let with_replacement = l > pool.len();
    let draw_index: Vec<usize> = if with_replacement {
        (0..l).map(|_| pick.random_range(0..pool.len())).collect()
    } else {
        index::sample(&mut pick, pool.len(), l).into_vec()
    };
    let family = draws.family;
    let t3 = draw_index
        .par_iter()
        .enumerate()
        .map(|(row, &k)| {
            let params = pool[k];
            let mut rng = draw_rng(seed, row);
            (0..design.n())
                .map(|i| t3_value(params, family, design.row(i), params.sigma_b.sample_normal(&mut rng)))
                .collect()
        })
        .collect();
    Ok(UsualDraws {
        person_ids: design.person_ids.clone(),
        t3,
        draw_index,
        with_replacement,
    })
}

/// Posterior mean and central 95% interval of a per-draw proportion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Compliance {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub per_draw: Vec<f64>,
}

impl Compliance {
    fn from_draws(per_draw: Vec<f64>) -> Self {
        Self {
            mean: per_draw.iter().sum::<f64>() / per_draw.len() as f64,
            lower: quantile(&per_draw, 0.025),
            upper: quantile(&per_draw, 0.975),
            per_draw,
        }
    }
}

fn check_usual(usual: &UsualDraws) -> Result<()> {
    if usual.t3.is_empty() || usual.person_ids.is_empty() {
        return Err(Error::Invalid("no usual-intake draws".into()));
    }
    Ok(())
}

/// Share of persons with `t3 ≥ threshold`, per draw.
pub fn compliance(usual: &UsualDraws, threshold: f64) -> Result<Compliance> {
    check_usual(usual)?;
    if !(threshold > 0.0) {
        return Err(Error::Invalid(format!("threshold must be positive, got {threshold}")));
    }
    let n = usual.n_persons() as f64;
    let per_draw = usual
        .t3
        .iter()
        .map(|row| row.iter().filter(|&&t| t >= threshold).count() as f64 / n)
        .collect();
    Ok(Compliance::from_draws(per_draw))
}

/// Weighted share `Σ w_i I(t3_i ≥ threshold) / Σ w_i`, per draw.
///
/// Weights are rescaled by their maximum first, which leaves the ratio
/// unchanged and makes equal weights reproduce the unweighted share exactly.
pub fn compliance_weighted(usual: &UsualDraws, weights: &[f64], threshold: f64) -> Result<Compliance> {
    check_usual(usual)?;
    if weights.len() != usual.n_persons() {
        return Err(Error::Invalid(format!(
            "{} weights for {} persons",
            weights.len(),
            usual.n_persons()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::Invalid("weights must be finite and nonnegative".into()));
    }
    let top = weights.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Err(Error::Invalid("all weights are zero".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::Invalid(format!("threshold must be positive, got {threshold}")));
    }
    let w: Vec<f64> = weights.iter().map(|v| v / top).collect();
    let total: f64 = w.iter().sum();
    let per_draw = usual
        .t3
        .iter()
        .map(|row| row.iter().zip(&w).filter(|(&t, _)| t >= threshold).map(|(_, &wi)| wi).sum::<f64>() / total)
        .collect();
    Ok(Compliance::from_draws(per_draw))
}

/// Restrict to the persons selected by `keep` (aligned with the columns).
pub fn subpopulation(usual: &UsualDraws, keep: &[bool]) -> Result<UsualDraws> {
    if keep.len() != usual.n_persons() {
        return Err(Error::Invalid("selection does not match the persons".into()));
    }
    if !keep.iter().any(|&k| k) {
        return Err(Error::Invalid("population selects nobody".into()));
    }
    let pick = |v: &[f64]| v.iter().zip(keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect();
    Ok(UsualDraws {
        person_ids: usual.person_ids.iter().zip(keep).filter(|(_, &k)| k).map(|(p, _)| p.clone()).collect(),
        t3: usual.t3.iter().map(|r| pick(r)).collect(),
        draw_index: usual.draw_index.clone(),
        with_replacement: usual.with_replacement,
    })
}

/// Evaluate a population expression on every record.
pub fn select(records: &[CovariateRecord], population: &Population) -> Vec<bool> {
    records.iter().map(|r| population.matches(r)).collect()
}

/// Comparison in a population expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Predicate over natural-unit covariates, e.g. `bmi < 25 && gender == 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Population {
    All,
    Compare(String, Cmp, f64),
    Not(Box<Population>),
    And(Box<Population>, Box<Population>),
    Or(Box<Population>, Box<Population>),
}

fn field(r: &CovariateRecord, name: &str) -> Option<f64> {
    Some(match name {
        "gender" => r.gender as f64,
        "age" => r.age,
        "bmi" => r.bmi,
        "black" => r.black as f64,
        "hispanic" => r.hispanic as f64,
        "smoker" => r.smoker as f64,
        "college" => r.college as f64,
        "physical_job" => r.physical_job? as f64,
        "weight" => r.weight,
        _ => return None,
    })
}

const FIELDS: [&str; 9] = ["gender", "age", "bmi", "black", "hispanic", "smoker", "college", "physical_job", "weight"];

impl Population {
    pub fn matches(&self, r: &CovariateRecord) -> bool {
        match self {
            Population::All => true,
            Population::Compare(f, op, v) => match field(r, f) {
                Some(x) => match op {
                    Cmp::Lt => x < *v,
                    Cmp::Le => x <= *v,
                    Cmp::Gt => x > *v,
                    Cmp::Ge => x >= *v,
                    Cmp::Eq => x == *v,
                    Cmp::Ne => x != *v,
                },
                None => false,
            },
            Population::Not(p) => !p.matches(r),
            Population::And(a, b) => a.matches(r) && b.matches(r),
            Population::Or(a, b) => a.matches(r) || b.matches(r),
        }
    }

    /// Parse `all`, `male`, `female`, comparisons `field op number`, `!`,
    /// `&&`/`and`, `||`/`or` and parentheses.
    pub fn parse(s: &str) -> Result<Self> {
        let tokens = tokenize(s)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.or()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Config(format!("unexpected `{}` in population `{s}`", p.tokens[p.pos])));
        }
        Ok(e)
    }
}

fn tokenize(s: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "()".contains(c) {
            out.push(c.to_string());
            i += 1;
        } else if "<>=!&|".contains(c) {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if ["<=", ">=", "==", "!=", "&&", "||"].contains(&two.as_str()) {
                out.push(two);
                i += 2;
            } else if "<>!".contains(c) {
                out.push(c.to_string());
                i += 1;
            } else {
                return Err(Error::Config(format!("bad operator at `{}` in population `{s}`", &s[i..])));
            }
        } else if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || "_.-".contains(chars[i])) {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else {
            return Err(Error::Config(format!("unexpected character `{c}` in population `{s}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<String>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn next(&mut self) -> Result<String> {
        let t = self.tokens.get(self.pos).cloned().ok_or_else(|| Error::Config("population expression ends early".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn or(&mut self) -> Result<Population> {
        let mut e = self.and()?;
        while matches!(self.peek(), Some("||" | "or")) {
            self.pos += 1;
            e = Population::Or(Box::new(e), Box::new(self.and()?));
        }
        Ok(e)
    }

    fn and(&mut self) -> Result<Population> {
        let mut e = self.unary()?;
        while matches!(self.peek(), Some("&&" | "and")) {
            self.pos += 1;
            e = Population::And(Box::new(e), Box::new(self.unary()?));
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Population> {
        match self.peek() {
            Some("!" | "not") => {
                self.pos += 1;
                Ok(Population::Not(Box::new(self.unary()?)))
            }
            Some("(") => {
                self.pos += 1;
                let e = self.or()?;
                match self.next()?.as_str() {
                    ")" => Ok(e),
                    t => Err(Error::Config(format!("expected `)`, found `{t}`"))),
                }
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Population> {
        let name = self.next()?;
        match name.as_str() {
            "all" => return Ok(Population::All),
            "male" => return Ok(Population::Compare("gender".into(), Cmp::Eq, 1.0)),
            "female" => return Ok(Population::Compare("gender".into(), Cmp::Eq, 0.0)),
            _ => {}
        }
        if !FIELDS.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "unknown covariate `{name}` in population (known: {})",
                FIELDS.join(", ")
            )));
        }
        let op = match self.next()?.as_str() {
            "<" => Cmp::Lt,
            "<=" => Cmp::Le,
            ">" => Cmp::Gt,
            ">=" => Cmp::Ge,
            "==" => Cmp::Eq,
            "!=" => Cmp::Ne,
            t => return Err(Error::Config(format!("expected a comparison after `{name}`, found `{t}`"))),
        };
        let v = self.next()?;
        let v: f64 = v.parse().map_err(|_| Error::Config(format!("expected a number, found `{v}`")))?;
        Ok(Population::Compare(name, op, v))
    }
}

/// The nine published rows: overall, sex, three BMI bands, three age bands.
pub fn standard_populations() -> Vec<(&'static str, Population)> {
    [
        ("overall", "all"),
        ("male", "male"),
        ("female", "female"),
        ("bmi<25", "bmi < 25"),
        ("25<=bmi<30", "bmi >= 25 && bmi < 30"),
        ("bmi>=30", "bmi >= 30"),
        ("age<40", "age < 40"),
        ("40<=age<60", "age >= 40 && age < 60"),
        ("age>=60", "age >= 60"),
    ]
    .into_iter()
    .map(|(name, e)| (name, Population::parse(e).expect("built-in population parses")))
    .collect()
}

/// One line of a compliance table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceRow {
    pub population: String,
    pub persons: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Compliance for each population; `weights` (aligned with the design) switch
/// to the weighted estimator.
pub fn compliance_table(
    usual: &UsualDraws,
    records: &[CovariateRecord],
    populations: &[(String, Population)],
    weights: Option<&[f64]>,
    threshold: f64,
) -> Result<Vec<ComplianceRow>> {
    if records.len() != usual.n_persons() {
        return Err(Error::Invalid("covariate records do not match the usual-intake draws".into()));
    }
    populations
        .iter()
        .map(|(name, pop)| {
            let keep = select(records, pop);
            let sub = subpopulation(usual, &keep)
                .map_err(|e| Error::Invalid(format!("population `{name}`: {e}")))?;
            let c = match weights {
                Some(w) => {
                    let w: Vec<f64> = w.iter().zip(&keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect();
                    compliance_weighted(&sub, &w, threshold)?
                }
                None => compliance(&sub, threshold)?,
            };
            Ok(ComplianceRow {
                population: name.clone(),
                persons: sub.n_persons(),
                mean: c.mean,
                lower: c.lower,
                upper: c.upper,
            })
        })
        .collect()
}

/// Silverman's rule of thumb `0.9·min(sd, IQR/1.34)·n^(−1/5)`, falling back
/// to the SD, then `|x₁|`, then 1 when the spread is zero.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let sd = variance(x).sqrt();
    let iqr = quantile(x, 0.75) - quantile(x, 0.25);
    let mut lo = sd.min(iqr / 1.34);
    if !(lo > 0.0) {
        lo = if sd > 0.0 { sd } else if x[0] != 0.0 { x[0].abs() } else { 1.0 };
    }
    0.9 * lo * (x.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate of `x` on `grid`.
pub fn kde(x: &[f64], grid: &[f64]) -> Vec<f64> {
    let h = silverman_bandwidth(x);
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| x.iter().map(|&v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// Pointwise mean and 95% band of the per-draw density of `t3`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityBand {
    pub x: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const MIN_BAND_DRAWS: usize = 100;

pub fn density_bands(usual: &UsualDraws, grid: &[f64]) -> Result<Vec<DensityBand>> {
    check_usual(usual)?;
    if usual.n_draws() < MIN_BAND_DRAWS {
        return Err(Error::Invalid(format!(
            "density bands need at least {MIN_BAND_DRAWS} draws, got {}",
            usual.n_draws()
        )));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty density grid".into()));
    }
    let per_draw: Vec<Vec<f64>> = usual.t3.par_iter().map(|row| kde(row, grid)).collect();
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let col: Vec<f64> = per_draw.iter().map(|d| d[k]).collect();
            DensityBand {
                x,
                mean: col.iter().sum::<f64>() / col.len() as f64,
                lower: quantile(&col, 0.025),
                upper: quantile(&col, 0.975),
            }
        })
        .collect())
}

/// `0, step, …, max`.
pub fn default_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

pub fn write_compliance(path: &Path, rows: &[ComplianceRow], threshold: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["population", "persons", "compliance", "ci_lower", "ci_upper", "threshold"])?;
    for r in rows {
        w.write_record([
            r.population.clone(),
            r.persons.to_string(),
            r.mean.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            threshold.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `met_minutes,density,lower,upper,reference` — `reference` repeats the
/// guideline threshold for drawing the vertical line.
pub fn write_density(path: &Path, bands: &[DensityBand], reference: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["met_minutes", "density", "lower", "upper", "reference"])?;
    for b in bands {
        w.write_record([
            b.x.to_string(),
            b.mean.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            reference.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

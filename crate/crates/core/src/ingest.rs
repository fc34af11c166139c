//! Loading and cleaning minute-level device files and covariate files.
//!
//! Minute CSV schema: `person_id,day_index,weekend,minute,value` with
//! `minute` in `1..=1440`. Covariate CSV schema:
//! `person_id,gender,age,bmi,black,hispanic,smoker,college,physical_job,weight`
//! where an empty `physical_job` cell is missing and an empty `weight` is 1.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bouts::DayObservation;
use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: usize = 1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityKind {
    Met,
    Count,
}

impl std::str::FromStr for IntensityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "met" | "mets" => Ok(Self::Met),
            "count" | "counts" => Ok(Self::Count),
            other => Err(Error::Config(format!("unknown intensity kind `{other}`"))),
        }
    }
}

/// One person-day of per-minute intensity values.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteSeries {
    pub person_id: String,
    pub day_index: u8,
    pub weekend: bool,
    pub kind: IntensityKind,
    epochs: Vec<f64>,
}

impl MinuteSeries {
    pub fn new(
        person_id: impl Into<String>,
        day_index: u8,
        weekend: bool,
        kind: IntensityKind,
        epochs: Vec<f64>,
    ) -> Result<Self> {
        if epochs.len() != MINUTES_PER_DAY {
            return Err(Error::Invalid(format!(
                "a day needs {MINUTES_PER_DAY} epochs, got {}",
                epochs.len()
            )));
        }
        if let Some((i, v)) = epochs.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Invalid(format!("epoch {} has invalid value {v}", i + 1)));
        }
        Ok(Self {
            person_id: person_id.into(),
            day_index,
            weekend,
            kind,
            epochs,
        })
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    WrongEpochCount(usize),
    DuplicateMinute(u32),
    MinuteOutOfRange(i64),
    InvalidValue(u32),
    InconsistentWeekend,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::WrongEpochCount(_) => "wrong_epoch_count",
            Self::DuplicateMinute(_) => "duplicate_minute",
            Self::MinuteOutOfRange(_) => "minute_out_of_range",
            Self::InvalidValue(_) => "invalid_value",
            Self::InconsistentWeekend => "inconsistent_weekend",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongEpochCount(n) => write!(f, "{n} epochs instead of {MINUTES_PER_DAY}"),
            Self::DuplicateMinute(m) => write!(f, "minute {m} appears more than once"),
            Self::MinuteOutOfRange(m) => write!(f, "minute {m} outside 1..={MINUTES_PER_DAY}"),
            Self::InvalidValue(m) => write!(f, "minute {m} has a negative or non-finite value"),
            Self::InconsistentWeekend => write!(f, "weekend flag differs between rows"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub person_id: String,
    pub day_index: u8,
    pub reason: RejectReason,
}

/// Result of [`load_minutes`]: valid days plus everything that was set aside.
#[derive(Debug, Clone, Default)]
pub struct MinuteLoad {
    pub series: Vec<MinuteSeries>,
    pub rejected: Vec<Rejection>,
    /// Persons whose number of valid days is not 2.
    pub incomplete_persons: Vec<String>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Some(true),
        "0" | "false" | "f" | "no" => Some(false),
        _ => None,
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

struct DayAccumulator {
    weekend: bool,
    values: BTreeMap<u32, f64>,
    problem: Option<RejectReason>,
}

pub const MINUTES_HEADER: [&str; 5] = ["person_id", "day_index", "weekend", "minute", "value"];

/// Read a minutes CSV into validated person-days ordered by person (first
/// appearance in the file) and then day index.
pub fn load_minutes(path: &Path, kind: IntensityKind) -> Result<MinuteLoad> {
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, path, &MINUTES_HEADER)?;
    let display = path.display().to_string();

    let mut person_order: Vec<String> = Vec::new();
    let mut days: HashMap<String, BTreeMap<u8, DayAccumulator>> = HashMap::new();

    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Parse {
            path: display.clone(),
            line,
            message,
        };
        if rec.len() != MINUTES_HEADER.len() {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let person = rec[0].to_string();
        if person.is_empty() {
            return Err(bad("empty person_id".into()));
        }
        let day: u8 = rec[1].parse().map_err(|_| bad(format!("bad day_index `{}`", &rec[1])))?;
        let weekend = parse_bool(&rec[2]).ok_or_else(|| bad(format!("bad weekend flag `{}`", &rec[2])))?;
        let minute: i64 = rec[3].parse().map_err(|_| bad(format!("bad minute `{}`", &rec[3])))?;
        let value: f64 = rec[4].parse().map_err(|_| bad(format!("bad value `{}`", &rec[4])))?;

        let per_person = days.entry(person.clone()).or_insert_with(|| {
            person_order.push(person.clone());
            BTreeMap::new()
        });
        let acc = per_person.entry(day).or_insert_with(|| DayAccumulator {
            weekend,
            values: BTreeMap::new(),
            problem: None,
        });
        if acc.problem.is_some() {
            continue;
        }
        if acc.weekend != weekend {
            acc.problem = Some(RejectReason::InconsistentWeekend);
        } else if !(1..=MINUTES_PER_DAY as i64).contains(&minute) {
            acc.problem = Some(RejectReason::MinuteOutOfRange(minute));
        } else if !(value.is_finite() && value >= 0.0) {
            acc.problem = Some(RejectReason::InvalidValue(minute as u32));
        } else if acc.values.insert(minute as u32, value).is_some() {
            acc.problem = Some(RejectReason::DuplicateMinute(minute as u32));
        }
    }

    let mut out = MinuteLoad::default();
    for person in person_order {
        let mut valid_days = 0;
        for (day, acc) in days.remove(&person).unwrap_or_default() {
            let reason = acc.problem.or_else(|| {
                (acc.values.len() != MINUTES_PER_DAY).then_some(RejectReason::WrongEpochCount(acc.values.len()))
            });
            match reason {
                Some(reason) => out.rejected.push(Rejection {
                    person_id: person.clone(),
                    day_index: day,
                    reason,
                }),
                None => {
                    let epochs: Vec<f64> = acc.values.into_values().collect();
                    out.series.push(MinuteSeries::new(person.clone(), day, acc.weekend, kind, epochs)?);
                    valid_days += 1;
                }
            }
        }
        if valid_days != 2 {
            out.incomplete_persons.push(person);
        }
    }
    Ok(out)
}

pub fn write_minutes(path: &Path, series: &[MinuteSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MINUTES_HEADER)?;
    for s in series {
        let day = s.day_index.to_string();
        let weekend = if s.weekend { "1" } else { "0" };
        for (i, v) in s.epochs.iter().enumerate() {
            w.write_record([s.person_id.as_str(), &day, weekend, &(i + 1).to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_rejections(path: &Path, rejected: &[Rejection]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["person_id", "day_index", "reason", "detail"])?;
    for r in rejected {
        w.write_record([
            r.person_id.as_str(),
            &r.day_index.to_string(),
            r.reason.code(),
            &r.reason.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Affine count→MET rule for hip-worn count devices.
///
/// Minutes below `threshold` counts/min get `sub_threshold_met`; the rest get
/// `intercept + slope·counts`, floored at `moderate_met` so that every
/// threshold-exceeding minute is bout-eligible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountConversion {
    pub intercept: f64,
    pub slope: f64,
    pub threshold: f64,
    pub sub_threshold_met: f64,
    pub moderate_met: f64,
}

impl Default for CountConversion {
    /// The coefficients default to NaN: they must come from user configuration.
    fn default() -> Self {
        Self {
            intercept: f64::NAN,
            slope: f64::NAN,
            threshold: 2020.0,
            sub_threshold_met: 1.0,
            moderate_met: 3.0,
        }
    }
}

pub fn counts_to_mets(series: &MinuteSeries, conv: Option<&CountConversion>) -> Result<MinuteSeries> {
    let conv = conv.ok_or_else(|| {
        Error::Config("count data requires conversion coefficients (intercept, slope)".into())
    })?;
    if series.kind != IntensityKind::Count {
        return Err(Error::Invalid(format!(
            "{} day {} is already in METs",
            series.person_id, series.day_index
        )));
    }
    if !(conv.intercept.is_finite() && conv.slope.is_finite()) {
        return Err(Error::Config("count conversion intercept/slope are not set".into()));
    }
    if !(conv.threshold > 0.0) {
        return Err(Error::Config(format!("count threshold must be > 0, got {}", conv.threshold)));
    }
    if !(conv.sub_threshold_met >= 0.0 && conv.sub_threshold_met < conv.moderate_met) {
        return Err(Error::Config(format!(
            "sub-threshold MET value {} must be in [0, {})",
            conv.sub_threshold_met, conv.moderate_met
        )));
    }
    let epochs = series
        .epochs
        .iter()
        .map(|&c| {
            if c < conv.threshold {
                conv.sub_threshold_met
            } else {
                (conv.intercept + conv.slope * c).max(conv.moderate_met)
            }
        })
        .collect();
    MinuteSeries::new(series.person_id.clone(), series.day_index, series.weekend, IntensityKind::Met, epochs)
}

/// Why a person was dropped by [`remove_outliers`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RemovalReason {
    /// A day total exceeded the MET-minute cap.
    OverCap,
    /// The person does not have exactly two days.
    NoReplicate,
}

impl RemovalReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::OverCap => "over_cap",
            Self::NoReplicate => "no_replicate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Removal {
    pub person_id: String,
    pub reason: RemovalReason,
    pub max_day_total: f64,
}

/// Drop every day of any person whose total bout MET-minutes exceed `cap` on
/// some day, then drop persons left without a replicate pair.
pub fn remove_outliers(days: &[DayObservation], cap: f64) -> (Vec<DayObservation>, Vec<Removal>) {
    let mut order: Vec<&str> = Vec::new();
    let mut per_person: HashMap<&str, (usize, f64)> = HashMap::new();
    for d in days {
        let e = per_person.entry(d.person_id.as_str()).or_insert_with(|| {
            order.push(d.person_id.as_str());
            (0, 0.0)
        });
        e.0 += 1;
        e.1 = e.1.max(d.total_met_minutes());
    }
    let mut report = Vec::new();
    let mut drop: HashMap<&str, RemovalReason> = HashMap::new();
    for id in order {
        let (n, max_total) = per_person[id];
        let reason = if max_total > cap {
            Some(RemovalReason::OverCap)
        } else if n != 2 {
            Some(RemovalReason::NoReplicate)
        } else {
            None
        };
        if let Some(reason) = reason {
            drop.insert(id, reason);
            report.push(Removal {
                person_id: id.to_string(),
                reason,
                max_day_total: max_total,
            });
        }
    }
    let kept = days
        .iter()
        .filter(|d| !drop.contains_key(d.person_id.as_str()))
        .cloned()
        .collect();
    (kept, report)
}

pub fn write_removals(path: &Path, removals: &[Removal]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["person_id", "reason", "max_day_total"])?;
    for r in removals {
        w.write_record([r.person_id.as_str(), r.reason.code(), &r.max_day_total.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateRecord {
    pub person_id: String,
    /// 1 = male.
    pub gender: u8,
    pub age: f64,
    pub bmi: f64,
    pub black: u8,
    pub hispanic: u8,
    pub smoker: u8,
    pub college: u8,
    pub physical_job: Option<u8>,
    pub weight: f64,
}

impl CovariateRecord {
    pub fn validate(&self) -> Result<()> {
        let ind = [
            ("gender", self.gender),
            ("black", self.black),
            ("hispanic", self.hispanic),
            ("smoker", self.smoker),
            ("college", self.college),
        ];
        for (name, v) in ind {
            if v > 1 {
                return Err(Error::Invalid(format!("{}: {name} must be 0 or 1", self.person_id)));
            }
        }
        if matches!(self.physical_job, Some(v) if v > 1) {
            return Err(Error::Invalid(format!("{}: physical_job must be 0 or 1", self.person_id)));
        }
        if !(self.age.is_finite() && self.age > 0.0 && self.bmi.is_finite() && self.bmi > 0.0) {
            return Err(Error::Invalid(format!("{}: age and bmi must be positive", self.person_id)));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::Invalid(format!("{}: weight must be nonnegative", self.person_id)));
        }
        Ok(())
    }

    pub fn value(&self, c: Covariate) -> Option<f64> {
        Some(match c {
            Covariate::Gender => self.gender as f64,
            Covariate::Age => self.age,
            Covariate::Bmi => self.bmi,
            Covariate::Black => self.black as f64,
            Covariate::Hispanic => self.hispanic as f64,
            Covariate::Smoker => self.smoker as f64,
            Covariate::College => self.college as f64,
            Covariate::PhysicalJob => self.physical_job? as f64,
        })
    }
}

pub const COVARIATES_HEADER: [&str; 10] = [
    "person_id",
    "gender",
    "age",
    "bmi",
    "black",
    "hispanic",
    "smoker",
    "college",
    "physical_job",
    "weight",
];

pub fn load_covariates(path: &Path) -> Result<Vec<CovariateRecord>> {
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, path, &COVARIATES_HEADER[..9])?;
    let display = path.display().to_string();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Parse {
            path: display.clone(),
            line,
            message,
        };
        let ind = |i: usize| -> Result<u8> {
            rec[i]
                .parse::<u8>()
                .ok()
                .filter(|v| *v <= 1)
                .ok_or_else(|| bad(format!("{} must be 0 or 1, got `{}`", COVARIATES_HEADER[i], &rec[i])))
        };
        let real = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad {} `{}`", COVARIATES_HEADER[i], &rec[i])))
        };
        if rec.len() < 9 {
            return Err(bad(format!("expected at least 9 fields, found {}", rec.len())));
        }
        let physical_job = if rec[8].is_empty() { None } else { Some(ind(8)?) };
        let weight = match rec.get(9) {
            Some(w) if !w.is_empty() => real(9)?,
            _ => 1.0,
        };
        let r = CovariateRecord {
            person_id: rec[0].to_string(),
            gender: ind(1)?,
            age: real(2)?,
            bmi: real(3)?,
            black: ind(4)?,
            hispanic: ind(5)?,
            smoker: ind(6)?,
            college: ind(7)?,
            physical_job,
            weight,
        };
        r.validate().map_err(|e| bad(e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_covariates(path: &Path, records: &[CovariateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COVARIATES_HEADER)?;
    for r in records {
        w.write_record([
            r.person_id.clone(),
            r.gender.to_string(),
            r.age.to_string(),
            r.bmi.to_string(),
            r.black.to_string(),
            r.hispanic.to_string(),
            r.smoker.to_string(),
            r.college.to_string(),
            r.physical_job.map(|v| v.to_string()).unwrap_or_default(),
            r.weight.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Outcome of [`impute_physical_job`].
#[derive(Debug, Clone)]
pub struct Imputation {
    pub records: Vec<CovariateRecord>,
    /// `(name, coefficient)` of the logistic fit on the standardised scale,
    /// empty when nothing needed imputing.
    pub coefficients: Vec<(String, f64)>,
    /// `(person_id, fitted probability, imputed value)`.
    pub imputed: Vec<(String, f64, u8)>,
    pub warning: Option<String>,
}

const IMPUTE_PREDICTORS: [Covariate; 7] = [
    Covariate::Gender,
    Covariate::Age,
    Covariate::Bmi,
    Covariate::Black,
    Covariate::Hispanic,
    Covariate::Smoker,
    Covariate::College,
];

/// Fill missing `physical_job` with the thresholded (≥ 0.5) prediction of a
/// logistic regression on the remaining covariates.
pub fn impute_physical_job(records: &[CovariateRecord]) -> Result<Imputation> {
    let missing: Vec<usize> = (0..records.len()).filter(|&i| records[i].physical_job.is_none()).collect();
    if missing.is_empty() {
        return Ok(Imputation {
            records: records.to_vec(),
            coefficients: Vec::new(),
            imputed: Vec::new(),
            warning: None,
        });
    }
    let observed: Vec<usize> = (0..records.len()).filter(|&i| records[i].physical_job.is_some()).collect();
    let ones = observed.iter().filter(|&&i| records[i].physical_job == Some(1)).count();
    if observed.is_empty() {
        return Err(Error::Invalid("physical_job is missing for every record".into()));
    }
    if ones == 0 || ones == observed.len() {
        return Err(Error::Invalid("physical_job has a single observed class; cannot fit imputation model".into()));
    }

    let transforms = standardization(records, &[Covariate::Age, Covariate::Bmi]);
    // predictors constant among the observed rows carry no information and
    // would make the information matrix singular
    let predictors: Vec<Covariate> = IMPUTE_PREDICTORS
        .into_iter()
        .filter(|&c| {
            let first = records[observed[0]].value(c).unwrap_or(0.0);
            observed.iter().any(|&i| records[i].value(c).unwrap_or(0.0) != first)
        })
        .collect();
    let row = |r: &CovariateRecord| -> Vec<f64> {
        let mut v = vec![1.0];
        for &c in &predictors {
            v.push(apply_transform(&transforms, c, r.value(c).unwrap_or(0.0)));
        }
        v
    };
    let x: Vec<Vec<f64>> = observed.iter().map(|&i| row(&records[i])).collect();
    let y: Vec<f64> = observed
        .iter()
        .map(|&i| records[i].physical_job.unwrap_or(0) as f64)
        .collect();

    let majority = u8::from(2 * ones >= observed.len());
    let (coef, warning) = match logistic_irls(&x, &y, 50, 1e-8) {
        Ok(c) => (Some(c), None),
        Err(msg) => (None, Some(format!("{msg}; imputing majority class {majority}"))),
    };

    let mut out = records.to_vec();
    let mut imputed = Vec::with_capacity(missing.len());
    for &i in &missing {
        let (p, v) = match &coef {
            Some(c) => {
                let eta: f64 = row(&records[i]).iter().zip(c).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-eta).exp());
                (p, u8::from(p >= 0.5))
            }
            None => (ones as f64 / observed.len() as f64, majority),
        };
        out[i].physical_job = Some(v);
        imputed.push((records[i].person_id.clone(), p, v));
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(predictors.iter().map(|c| c.name().to_string()));
    Ok(Imputation {
        records: out,
        coefficients: coef.map(|c| names.into_iter().zip(c).collect()).unwrap_or_default(),
        imputed,
        warning,
    })
}

pub fn write_imputation_report(path: &Path, imp: &Imputation) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["person_id", "reason", "probability", "value"])?;
    for (id, p, v) in &imp.imputed {
        let reason = if imp.warning.is_some() { "imputed_majority" } else { "imputed_logistic" };
        w.write_record([id.as_str(), reason, &p.to_string(), &v.to_string()])?;
    }
    for (name, c) in &imp.coefficients {
        w.write_record(["", "coefficient", name.as_str(), &c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Logistic regression by iteratively reweighted least squares. Errors on
/// non-convergence or signs of (quasi-)separation.
pub fn logistic_irls(x: &[Vec<f64>], y: &[f64], max_iter: usize, tol: f64) -> Result<Vec<f64>, String> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    for _ in 0..max_iter {
        let eta = &xm * &beta;
        let prob = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = prob.map(|q| (q * (1.0 - q)).max(1e-12));
        let mut xtwx = DMatrix::zeros(p, p);
        for i in 0..n {
            let r = xm.row(i);
            xtwx += w[i] * r.transpose() * r;
        }
        let grad = xm.transpose() * (&yv - &prob);
        let step = xtwx
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| "singular information matrix in logistic fit".to_string())?;
        beta += &step;
        if beta.amax() > 30.0 {
            return Err("logistic fit diverges (perfect separation)".into());
        }
        if step.amax() < tol {
            return Ok(beta.iter().copied().collect());
        }
    }
    Err(format!("logistic fit did not converge in {max_iter} iterations"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Gender,
    Age,
    Bmi,
    Black,
    Hispanic,
    Smoker,
    College,
    PhysicalJob,
}

impl Covariate {
    pub const ALL: [Covariate; 8] = [
        Covariate::Gender,
        Covariate::Age,
        Covariate::Bmi,
        Covariate::Black,
        Covariate::Hispanic,
        Covariate::Smoker,
        Covariate::College,
        Covariate::PhysicalJob,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gender => "gender",
            Self::Age => "age",
            Self::Bmi => "bmi",
            Self::Black => "black",
            Self::Hispanic => "hispanic",
            Self::Smoker => "smoker",
            Self::College => "college",
            Self::PhysicalJob => "physical_job",
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, Self::Age | Self::Bmi)
    }
}

impl std::str::FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Covariate::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown covariate `{s}`")))
    }
}

/// Which columns go into the model matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub intercept: bool,
    pub covariates: Vec<Covariate>,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            intercept: true,
            covariates: Covariate::ALL.to_vec(),
        }
    }
}

/// Centering/scaling applied to a continuous covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub covariate: Covariate,
    pub mean: f64,
    pub sd: f64,
}

fn standardization(records: &[CovariateRecord], which: &[Covariate]) -> Vec<Standardization> {
    which
        .iter()
        .map(|&c| {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.value(c)).collect();
            let mean = crate::stats::mean(&vals);
            let sd = crate::stats::variance(&vals).sqrt();
            Standardization {
                covariate: c,
                mean,
                sd: if sd > 0.0 { sd } else { 1.0 },
            }
        })
        .collect()
}

fn apply_transform(transforms: &[Standardization], c: Covariate, v: f64) -> f64 {
    match transforms.iter().find(|t| t.covariate == c) {
        Some(t) => (v - t.mean) / t.sd,
        None => v,
    }
}

/// Everything needed to rebuild the same model matrix for another population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInfo {
    pub spec: DesignSpec,
    pub columns: Vec<String>,
    pub transforms: Vec<Standardization>,
}

/// Per-person covariate rows `Z_i` (row-major), in person order.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub info: DesignInfo,
    pub person_ids: Vec<String>,
    pub weights: Vec<f64>,
    /// Natural-unit covariates, aligned with the rows.
    pub records: Vec<CovariateRecord>,
    data: Vec<f64>,
    p: usize,
}

impl DesignMatrix {
    /// Build from complete records, standardising continuous covariates with
    /// the sample mean and SD.
    pub fn from_records(records: &[CovariateRecord], spec: &DesignSpec) -> Result<Self> {
        let continuous: Vec<Covariate> = spec.covariates.iter().copied().filter(|c| c.is_continuous()).collect();
        let transforms = standardization(records, &continuous);
        let m = Self::with_transforms(records, spec, transforms)?;
        m.check_rank()?;
        Ok(m)
    }

    /// Build using an existing transform (e.g. the one stored with a fit).
    pub fn with_transforms(
        records: &[CovariateRecord],
        spec: &DesignSpec,
        transforms: Vec<Standardization>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Invalid("design matrix needs at least one person".into()));
        }
        let mut columns = Vec::new();
        if spec.intercept {
            columns.push("intercept".to_string());
        }
        columns.extend(spec.covariates.iter().map(|c| c.name().to_string()));
        let p = columns.len();
        if p == 0 {
            return Err(Error::Config("design has no columns".into()));
        }
        let mut data = Vec::with_capacity(records.len() * p);
        for r in records {
            r.validate()?;
            if spec.intercept {
                data.push(1.0);
            }
            for &c in &spec.covariates {
                let v = r.value(c).ok_or_else(|| {
                    Error::Invalid(format!("{}: {} is missing (impute first)", r.person_id, c.name()))
                })?;
                data.push(apply_transform(&transforms, c, v));
            }
        }
        Ok(Self {
            info: DesignInfo {
                spec: spec.clone(),
                columns,
                transforms,
            },
            person_ids: records.iter().map(|r| r.person_id.clone()).collect(),
            weights: records.iter().map(|r| r.weight).collect(),
            records: records.to_vec(),
            data,
            p,
        })
    }

    /// Raw matrix without covariate bookkeeping; handy for reduced problems.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 || rows.iter().any(|r| r.len() != p) {
            return Err(Error::Invalid("rows must be nonempty and equally long".into()));
        }
        let n = rows.len();
        Ok(Self {
            info: DesignInfo {
                spec: DesignSpec {
                    intercept: false,
                    covariates: Vec::new(),
                },
                columns: (0..p).map(|j| format!("x{j}")).collect(),
                transforms: Vec::new(),
            },
            person_ids: (0..n).map(|i| format!("p{i}")).collect(),
            weights: vec![1.0; n],
            records: Vec::new(),
            data: rows.into_iter().flatten().collect(),
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.person_ids.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn columns(&self) -> &[String] {
        &self.info.columns
    }

    /// Index of an all-ones column, if any.
    pub fn intercept_column(&self) -> Option<usize> {
        (0..self.p).find(|&j| (0..self.n()).all(|i| self.row(i)[j] == 1.0))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.p, &self.data)
    }

    /// Errors unless the columns are linearly independent.
    pub fn check_rank(&self) -> Result<()> {
        if self.n() < self.p {
            return Err(Error::Invalid(format!(
                "design has {} rows for {} columns",
                self.n(),
                self.p
            )));
        }
        let sv = self.to_matrix().singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min / max < 1e-10 {
            return Err(Error::Invalid(format!(
                "design matrix is not of full column rank (columns {})",
                self.info.columns.join(",")
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bouts::DayObservation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn day(id: &str, idx: u8, total: f64) -> DayObservation {
        DayObservation::from_summary(id, idx, false, 1, total - 30.0)
    }

    #[test]
    fn outlier_removal_is_person_level() {
        let days = vec![day("a", 1, 2600.0), day("a", 2, 100.0), day("b", 1, 2400.0), day("b", 2, 2400.0)];
        let (kept, report) = remove_outliers(&days, 2500.0);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|d| d.person_id == "b"));
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].reason, RemovalReason::OverCap);
        let (kept, report) = remove_outliers(&[], 2500.0);
        assert!(kept.is_empty() && report.is_empty());
    }

    #[test]
    fn singletons_are_dropped() {
        let days = vec![day("a", 1, 50.0), day("b", 1, 60.0), day("b", 2, 70.0)];
        let (kept, report) = remove_outliers(&days, 2500.0);
        assert_eq!(kept.len(), 2);
        assert_eq!(report[0].reason, RemovalReason::NoReplicate);
    }

    fn count_series(values: Vec<f64>) -> MinuteSeries {
        MinuteSeries::new("p", 1, false, IntensityKind::Count, values).unwrap()
    }

    #[test]
    fn counts_below_threshold_never_bout_eligible() {
        let conv = CountConversion {
            intercept: 1.0,
            slope: 0.0011,
            ..Default::default()
        };
        let s = count_series(vec![0.0; MINUTES_PER_DAY]);
        let m = counts_to_mets(&s, Some(&conv)).unwrap();
        assert!(m.epochs().iter().all(|&v| v == 1.0));

        let mut v = vec![0.0; MINUTES_PER_DAY];
        v[10] = 2020.0;
        v[11] = 2019.999;
        // 1 + 0.0011·2020 = 3.222
        let m = counts_to_mets(&count_series(v), Some(&conv)).unwrap();
        assert!((m.epochs()[10] - 3.222).abs() < 1e-12);
        assert_eq!(m.epochs()[11], 1.0);
        assert!(counts_to_mets(&s, None).is_err());
    }

    #[test]
    fn affine_rule_is_floored_at_moderate() {
        let conv = CountConversion {
            intercept: 0.0,
            slope: 0.001,
            ..Default::default()
        };
        let mut v = vec![0.0; MINUTES_PER_DAY];
        v[0] = 2500.0;
        let m = counts_to_mets(&count_series(v), Some(&conv)).unwrap();
        assert_eq!(m.epochs()[0], 3.0);
    }

    fn rec(id: usize, job: Option<u8>, gender: u8, age: f64) -> CovariateRecord {
        CovariateRecord {
            person_id: format!("p{id}"),
            gender,
            age,
            bmi: 28.0,
            black: 0,
            hispanic: 0,
            smoker: 0,
            college: 0,
            physical_job: job,
            weight: 1.0,
        }
    }

    #[test]
    fn imputation_identity_without_missing() {
        let rs: Vec<_> = (0..10).map(|i| rec(i, Some((i % 2) as u8), 0, 30.0 + i as f64)).collect();
        let imp = impute_physical_job(&rs).unwrap();
        assert_eq!(imp.records, rs);
        assert!(imp.imputed.is_empty());
    }

    #[test]
    fn imputation_all_missing_errors() {
        let rs: Vec<_> = (0..10).map(|i| rec(i, None, 0, 30.0)).collect();
        assert!(impute_physical_job(&rs).is_err());
    }

    #[test]
    fn imputation_recovers_strong_logistic_rule() {
        // physical_job generated from a known logistic rule in gender and age
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut rs = Vec::new();
        let mut truth = Vec::new();
        for i in 0..1000 {
            let gender = u8::from(rng.random_bool(0.5));
            let age: f64 = rng.random_range(21.0..71.0);
            let eta = -1.0 + 4.0 * gender as f64 - 0.2 * (age - 46.0);
            let p = 1.0 / (1.0 + (-eta).exp());
            let job = u8::from(rng.random_bool(p));
            truth.push(u8::from(p >= 0.5));
            let missing = i % 3 == 0;
            rs.push(rec(i, if missing { None } else { Some(job) }, gender, age));
        }
        let imp = impute_physical_job(&rs).unwrap();
        assert!(imp.warning.is_none(), "{:?}", imp.warning);
        let agree = imp
            .imputed
            .iter()
            .filter(|(id, _, v)| {
                let i: usize = id[1..].parse().unwrap();
                truth[i] == *v
            })
            .count();
        let frac = agree as f64 / imp.imputed.len() as f64;
        assert!(frac >= 0.95, "agreement {frac}");
        assert!(imp.records.iter().all(|r| r.physical_job.is_some()));
    }

    #[test]
    fn separation_falls_back_to_majority() {
        let mut rs = Vec::new();
        for i in 0..40 {
            let gender = (i % 2) as u8;
            rs.push(rec(i, Some(gender), gender, 30.0 + i as f64));
        }
        rs.push(rec(99, None, 1, 50.0));
        let imp = impute_physical_job(&rs).unwrap();
        assert!(imp.warning.is_some());
        assert_eq!(imp.imputed.len(), 1);
    }

    #[test]
    fn design_standardises_and_detects_rank_deficiency() {
        let rs: Vec<_> = (0..20)
            .map(|i| {
                let mut r = rec(i, Some((i % 2) as u8), ((i / 2) % 2) as u8, 20.0 + i as f64);
                r.bmi = 20.0 + (i * 7 % 11) as f64;
                r.smoker = u8::from(i % 3 == 0);
                r.college = u8::from(i % 5 == 0);
                r.black = u8::from(i % 7 == 0);
                r.hispanic = u8::from(i % 4 == 1);
                r
            })
            .collect();
        let d = DesignMatrix::from_records(&rs, &DesignSpec::default()).unwrap();
        assert_eq!(d.p(), 9);
        assert_eq!(d.n(), 20);
        assert_eq!(d.intercept_column(), Some(0));
        let age_col: Vec<f64> = (0..20).map(|i| d.row(i)[2]).collect();
        assert!(crate::stats::mean(&age_col).abs() < 1e-12);
        assert!((crate::stats::variance(&age_col) - 1.0).abs() < 1e-12);

        let mut flat = rs.clone();
        for r in &mut flat {
            r.hispanic = 0;
        }
        assert!(DesignMatrix::from_records(&flat, &DesignSpec::default()).is_err());
    }
}

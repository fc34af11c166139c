//! Bout detection on minute-level MET series and the daily summaries
//! `y1` (bout count) and `y2` (average excess MET-minutes per bout).
//!
//! A minute is active when its MET value is at least the moderate cutoff.
//! Scanning left to right, a bout opens at the earliest active minute whose
//! 10-minute window holds at least 8 active minutes. It keeps growing while
//! the trailing 10-minute window holds at most 2 inactive minutes, then is
//! trimmed back until its last two minutes are both active. Candidates shorter
//! than 10 minutes are dropped and scanning restarts one minute after their
//! start; accepted bouts restart the scan right after their end.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{IntensityKind, MinuteSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoutConfig {
    /// Minutes at or above this MET value are active.
    pub active_met: f64,
    pub window: usize,
    pub max_inactive: usize,
    pub min_length: usize,
    /// Subtracted from the average bout MET-minutes to give `y2`.
    pub excess_offset: f64,
    /// Floor for `y2` on days with at least one bout.
    pub epsilon: f64,
    /// Whether sub-moderate minutes inside a bout contribute their METs.
    pub count_inactive_mets: bool,
}

impl Default for BoutConfig {
    fn default() -> Self {
        Self {
            active_met: 3.0,
            window: 10,
            max_inactive: 2,
            min_length: 10,
            excess_offset: 30.0,
            epsilon: 0.5,
            count_inactive_mets: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoutInterval {
    /// Zero-based index of the first minute.
    pub start: usize,
    /// Zero-based index of the last minute (inclusive).
    pub end: usize,
    pub met_minutes: f64,
}

impl BoutInterval {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per person-day outcome pair and the bouts behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayObservation {
    pub person_id: String,
    pub day_index: u8,
    pub weekend: bool,
    pub y1: u32,
    pub y2: f64,
    pub bouts: Vec<BoutInterval>,
}

impl DayObservation {
    /// A day known only through its `(y1, y2)` summary.
    pub fn from_summary(person_id: impl Into<String>, day_index: u8, weekend: bool, y1: u32, y2: f64) -> Self {
        Self {
            person_id: person_id.into(),
            day_index,
            weekend,
            y1,
            y2: if y1 == 0 { 0.0 } else { y2 },
            bouts: Vec::new(),
        }
    }

    /// Total MET-minutes in bouts; reconstructed from the summary when the
    /// bout list is not available.
    pub fn total_met_minutes(&self) -> f64 {
        if self.bouts.is_empty() {
            if self.y1 == 0 {
                0.0
            } else {
                self.y1 as f64 * (self.y2 + 30.0)
            }
        } else {
            self.bouts.iter().map(|b| b.met_minutes).sum()
        }
    }
}

/// Bout intervals of an arbitrary-length MET sequence.
pub fn scan_bouts(mets: &[f64], cfg: &BoutConfig) -> Vec<BoutInterval> {
    let n = mets.len();
    let w = cfg.window;
    let active: Vec<bool> = mets.iter().map(|&m| m >= cfg.active_met).collect();
    let mut inactive_prefix = Vec::with_capacity(n + 1);
    inactive_prefix.push(0usize);
    for &a in &active {
        let last = *inactive_prefix.last().expect("nonempty");
        inactive_prefix.push(last + usize::from(!a));
    }
    // inactive minutes in the window starting at k
    let window_inactive = |k: usize| inactive_prefix[k + w] - inactive_prefix[k];

    let mut bouts = Vec::new();
    let mut pos = 0;
    while pos + w <= n {
        let Some(start) = (pos..=n - w).find(|&s| active[s] && window_inactive(s) <= cfg.max_inactive) else {
            break;
        };
        let mut end = start + w - 1;
        while end + 1 < n && window_inactive(end + 2 - w) <= cfg.max_inactive {
            end += 1;
        }
        while end > start && !(active[end] && active[end - 1]) {
            end -= 1;
        }
        if end + 1 - start >= cfg.min_length {
            let met_minutes = (start..=end)
                .filter(|&i| cfg.count_inactive_mets || active[i])
                .map(|i| mets[i])
                .sum();
            bouts.push(BoutInterval { start, end, met_minutes });
            pos = end + 1;
        } else {
            pos = start + 1;
        }
    }
    bouts
}

/// `(y1, y2)` from a bout list.
pub fn summarize_day(bouts: &[BoutInterval], cfg: &BoutConfig) -> (u32, f64) {
    if bouts.is_empty() {
        return (0, 0.0);
    }
    let avg = bouts.iter().map(|b| b.met_minutes).sum::<f64>() / bouts.len() as f64;
    (bouts.len() as u32, (avg - cfg.excess_offset).max(cfg.epsilon))
}

pub fn detect_bouts(series: &MinuteSeries, cfg: &BoutConfig) -> Result<DayObservation> {
    if series.kind != IntensityKind::Met {
        return Err(Error::Invalid(format!(
            "{} day {}: bouts are detected on METs; convert counts first",
            series.person_id, series.day_index
        )));
    }
    let bouts = scan_bouts(series.epochs(), cfg);
    let (y1, y2) = summarize_day(&bouts, cfg);
    Ok(DayObservation {
        person_id: series.person_id.clone(),
        day_index: series.day_index,
        weekend: series.weekend,
        y1,
        y2,
        bouts,
    })
}

/// Five-number summary of `y2` among days with a given bout count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Y2ByCount {
    pub y1: u32,
    pub days: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoutSummary {
    pub days: usize,
    pub persons: usize,
    pub zero_day_fraction: f64,
    /// Fraction of persons with no bout on any of their days.
    pub zero_person_fraction: f64,
    pub y1_counts: BTreeMap<u32, usize>,
    pub y2_by_y1: Vec<Y2ByCount>,
}

pub fn summarize_bout_stats(days: &[DayObservation]) -> Result<BoutSummary> {
    if days.is_empty() {
        return Err(Error::Invalid("no person-days to summarise".into()));
    }
    let zero_days = days.iter().filter(|d| d.y1 == 0).count();
    let mut persons: BTreeMap<&str, bool> = BTreeMap::new();
    let mut y1_counts = BTreeMap::new();
    let mut y2s: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for d in days {
        let all_zero = persons.entry(d.person_id.as_str()).or_insert(true);
        *all_zero &= d.y1 == 0;
        *y1_counts.entry(d.y1).or_insert(0) += 1;
        if d.y1 > 0 {
            y2s.entry(d.y1).or_default().push(d.y2);
        }
    }
    let zero_persons = persons.values().filter(|z| **z).count();
    let y2_by_y1 = y2s
        .into_iter()
        .map(|(y1, mut v)| {
            v.sort_by(f64::total_cmp);
            let q = |p| crate::stats::quantile_sorted(&v, p);
            Y2ByCount {
                y1,
                days: v.len(),
                min: v[0],
                q1: q(0.25),
                median: q(0.5),
                q3: q(0.75),
                max: v[v.len() - 1],
            }
        })
        .collect();
    Ok(BoutSummary {
        days: days.len(),
        persons: persons.len(),
        zero_day_fraction: zero_days as f64 / days.len() as f64,
        zero_person_fraction: zero_persons as f64 / persons.len() as f64,
        y1_counts,
        y2_by_y1,
    })
}

pub const DAYS_HEADER: [&str; 5] = ["person_id", "day_index", "weekend", "y1", "y2"];

pub fn write_days(path: &Path, days: &[DayObservation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DAYS_HEADER)?;
    for d in days {
        w.write_record([
            d.person_id.as_str(),
            &d.day_index.to_string(),
            if d.weekend { "1" } else { "0" },
            &d.y1.to_string(),
            &d.y2.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Bout intervals with 1-based minute numbers, as in the minutes file.
pub fn write_bouts(path: &Path, days: &[DayObservation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["person_id", "day_index", "start", "end", "met_minutes"])?;
    for d in days {
        for b in &d.bouts {
            w.write_record([
                d.person_id.as_str(),
                &d.day_index.to_string(),
                &(b.start + 1).to_string(),
                &(b.end + 1).to_string(),
                &b.met_minutes.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_days(path: &Path) -> Result<Vec<DayObservation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let display = path.display().to_string();
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != DAYS_HEADER {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("expected header `{}`", DAYS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let bad = |message: String| Error::Parse {
            path: display.clone(),
            line,
            message,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let day: u8 = rec[1].parse().map_err(|_| bad(format!("bad day_index `{}`", &rec[1])))?;
        let weekend = match &rec[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(bad(format!("bad weekend flag `{other}`"))),
        };
        let y1: u32 = rec[3].parse().map_err(|_| bad(format!("bad y1 `{}`", &rec[3])))?;
        let y2: f64 = rec[4].parse().map_err(|_| bad(format!("bad y2 `{}`", &rec[4])))?;
        if !(y2.is_finite() && y2 >= 0.0) || ((y1 == 0) != (y2 == 0.0)) {
            return Err(bad(format!("inconsistent pair y1={y1}, y2={y2} (y2 > 0 exactly when y1 > 0)")));
        }
        out.push(DayObservation::from_summary(&rec[0], day, weekend, y1, y2));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MINUTES_PER_DAY;

    fn day_with(f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..MINUTES_PER_DAY).map(f).collect()
    }

    fn detect(mets: Vec<f64>) -> DayObservation {
        let s = MinuteSeries::new("p", 1, false, IntensityKind::Met, mets).unwrap();
        detect_bouts(&s, &BoutConfig::default()).unwrap()
    }

    #[test]
    fn sedentary_day_has_no_bouts() {
        let d = detect(vec![1.5; MINUTES_PER_DAY]);
        assert_eq!((d.y1, d.y2), (0, 0.0));
    }

    #[test]
    fn ten_minute_block() {
        let d = detect(day_with(|i| if (100..=109).contains(&i) { 4.0 } else { 1.0 }));
        assert_eq!(d.bouts, vec![BoutInterval { start: 100, end: 109, met_minutes: 40.0 }]);
        assert_eq!(d.y1, 1);
        assert!((d.y2 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn interior_inactive_minutes_count_toward_total() {
        let d = detect(day_with(|i| match i {
            104 | 107 => 1.0,
            100..=111 => 3.5,
            _ => 1.0,
        }));
        assert_eq!(d.bouts.len(), 1);
        assert_eq!((d.bouts[0].start, d.bouts[0].end), (100, 111));
        assert!((d.bouts[0].met_minutes - 37.0).abs() < 1e-12);
        assert!((d.y2 - 7.0).abs() < 1e-12);

        let cfg = BoutConfig {
            count_inactive_mets: false,
            ..Default::default()
        };
        let b = scan_bouts(&day_with(|i| match i {
            104 | 107 => 1.0,
            100..=111 => 3.5,
            _ => 1.0,
        }), &cfg);
        assert!((b[0].met_minutes - 35.0).abs() < 1e-12);
    }

    #[test]
    fn third_inactive_minute_stops_the_clock() {
        let d = detect(day_with(|i| match i {
            105 | 108 | 111 => 1.0,
            100..=120 => 4.0,
            _ => 1.0,
        }));
        // window ending at 111 holds 105, 108, 111: the bout ends at 110;
        // the remainder 112..=120 is only 9 minutes long
        assert_eq!(d.bouts.len(), 1);
        assert_eq!((d.bouts[0].start, d.bouts[0].end), (100, 110));
    }

    #[test]
    fn minimum_bout_gives_epsilon_excess() {
        let d = detect(day_with(|i| if (500..510).contains(&i) { 3.0 } else { 0.9 }));
        assert_eq!(d.y1, 1);
        assert!((d.bouts[0].met_minutes - 30.0).abs() < 1e-12);
        assert_eq!(d.y2, BoutConfig::default().epsilon);
    }

    #[test]
    fn final_two_minutes_are_active() {
        // A A A A A A A A I A I I ... : the window rule ends at index 10 or 11,
        // trimming must back off past the lone active minute at 9
        let mut v = vec![1.0; 40];
        for x in v.iter_mut().take(9) {
            *x = 4.0;
        }
        v[10] = 4.0;
        for x in v.iter_mut().take(25).skip(12) {
            *x = 4.0;
        }
        let b = scan_bouts(&v, &BoutConfig::default());
        for bout in &b {
            assert!(v[bout.end] >= 3.0 && v[bout.end - 1] >= 3.0);
        }
    }

    #[test]
    fn summary_of_all_zero_days() {
        let days: Vec<_> = (0..4)
            .map(|i| DayObservation::from_summary(format!("p{}", i / 2), (i % 2 + 1) as u8, false, 0, 0.0))
            .collect();
        let s = summarize_bout_stats(&days).unwrap();
        assert_eq!((s.zero_day_fraction, s.zero_person_fraction), (1.0, 1.0));
        assert!(summarize_bout_stats(&[]).is_err());
    }
}

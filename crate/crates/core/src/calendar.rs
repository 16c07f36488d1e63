//! Calendar adjustment of the system price.
//!
//! Price is regressed on categorical hour-of-day, season, their interaction
//! (so each season gets its own daily shape) and a weekend indicator, with an
//! intercept and reference-cell coding (hour 0, winter, weekday). The
//! detrended price is the regression residual shifted back up by the sample
//! mean, so it keeps the price level while losing the calendar pattern.
//!
//! Every design row depends only on its (hour, season, weekend) cell, so the
//! fit collapses the data to at most 192 cell means and solves the
//! count-weighted problem, which has exactly the same normal equations as the
//! full hourly regression.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::HourlyRecord;
use crate::regression::qr_least_squares;

/// Intercept, 23 hours, 3 seasons, 69 interactions and the weekend flag.
pub const DETREND_PARAMETERS: usize = 1 + 23 + 3 + 69 + 1;

const CELLS: usize = 24 * 4 * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Fall,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Fall];

    pub fn as_str(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Fall => "fall",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Meteorological seasons: DJF winter, MAM spring, JJA summer, SON fall.
pub fn season_of(ts: NaiveDateTime) -> Season {
    match ts.month() {
        12 | 1 | 2 => Season::Winter,
        3..=5 => Season::Spring,
        6..=8 => Season::Summer,
        _ => Season::Fall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CalendarFeatures {
    pub hour: u32,
    pub season: Season,
    pub weekend: bool,
}

impl CalendarFeatures {
    pub fn of(ts: NaiveDateTime) -> Self {
        CalendarFeatures {
            hour: ts.hour(),
            season: season_of(ts),
            weekend: matches!(ts.weekday(), Weekday::Sat | Weekday::Sun),
        }
    }

    fn cell(self) -> usize {
        (self.hour as usize * 4 + self.season.index()) * 2 + usize::from(self.weekend)
    }

    fn from_cell(cell: usize) -> Self {
        CalendarFeatures {
            hour: (cell / 8) as u32,
            season: Season::ALL[(cell / 2) % 4],
            weekend: cell % 2 == 1,
        }
    }

    /// Reference-coded design row.
    fn design_row(self) -> [f64; DETREND_PARAMETERS] {
        let mut row = [0.0; DETREND_PARAMETERS];
        row[0] = 1.0;
        let h = self.hour as usize;
        let s = self.season.index();
        if h > 0 {
            row[h] = 1.0;
        }
        if s > 0 {
            row[23 + s] = 1.0;
        }
        if h > 0 && s > 0 {
            row[26 + (h - 1) * 3 + s] = 1.0;
        }
        if self.weekend {
            row[DETREND_PARAMETERS - 1] = 1.0;
        }
        row
    }
}

fn column_name(j: usize) -> String {
    match j {
        0 => "intercept".into(),
        1..=23 => format!("hour={j}"),
        24..=26 => format!("season={}", Season::ALL[j - 23]),
        27..=95 => {
            let k = j - 27;
            format!("hour={}:season={}", k / 3 + 1, Season::ALL[k % 3 + 1])
        }
        _ => "weekend=true".into(),
    }
}

/// Fitted calendar model. Reference levels carry implicit zero effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DetrendModelRepr", try_from = "DetrendModelRepr")]
pub struct DetrendModel {
    coefficients: Vec<f64>,
    grand_mean: f64,
    n_obs: usize,
    residual_dof: usize,
}

#[derive(Serialize, Deserialize)]
struct DetrendModelRepr {
    intercept: f64,
    effects: BTreeMap<String, f64>,
    grand_mean: f64,
    n_obs: usize,
    residual_dof: usize,
}

impl From<DetrendModel> for DetrendModelRepr {
    fn from(m: DetrendModel) -> Self {
        DetrendModelRepr {
            intercept: m.intercept(),
            effects: m.effects(),
            grand_mean: m.grand_mean,
            n_obs: m.n_obs,
            residual_dof: m.residual_dof,
        }
    }
}

impl TryFrom<DetrendModelRepr> for DetrendModel {
    type Error = Error;

    fn try_from(r: DetrendModelRepr) -> Result<Self> {
        let mut coefficients = vec![r.intercept];
        for j in 1..DETREND_PARAMETERS {
            let name = column_name(j);
            let value = r
                .effects
                .get(&name)
                .ok_or_else(|| Error::Parameter(format!("detrend model is missing effect `{name}`")))?;
            coefficients.push(*value);
        }
        if r.effects.len() != DETREND_PARAMETERS - 1 {
            return Err(Error::Parameter(format!(
                "detrend model has {} effects, expected {}",
                r.effects.len(),
                DETREND_PARAMETERS - 1
            )));
        }
        Ok(DetrendModel {
            coefficients,
            grand_mean: r.grand_mean,
            n_obs: r.n_obs,
            residual_dof: r.residual_dof,
        })
    }
}

impl DetrendModel {
    /// Fits the calendar model to a price series.
    pub fn fit(timestamps: &[NaiveDateTime], values: &[f64]) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Parameter("timestamps and values differ in length".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("price series contains non-finite values".into()));
        }
        let n = values.len();
        let mut count = [0usize; CELLS];
        let mut sum = [0.0f64; CELLS];
        for (&ts, &v) in timestamps.iter().zip(values) {
            let c = CalendarFeatures::of(ts).cell();
            count[c] += 1;
            sum[c] += v;
        }

        let mut thin = Vec::new();
        for hour in 0..24u32 {
            for season in Season::ALL {
                let base = (hour as usize * 4 + season.index()) * 2;
                let k = count[base] + count[base + 1];
                if k < 2 {
                    thin.push(format!("hour {hour}/{season} ({k} obs)"));
                }
            }
        }
        let weekend: usize = (0..CELLS).filter(|c| c % 2 == 1).map(|c| count[c]).sum();
        if weekend == 0 {
            thin.push("weekend (0 obs)".into());
        }
        if weekend == n {
            thin.push("weekday (0 obs)".into());
        }
        if !thin.is_empty() {
            return Err(Error::DetrendCells { cells: thin });
        }
        if n <= DETREND_PARAMETERS {
            return Err(Error::InsufficientData(format!(
                "calendar model needs more than {DETREND_PARAMETERS} observations, got {n}"
            )));
        }

        let occupied: Vec<usize> = (0..CELLS).filter(|&c| count[c] > 0).collect();
        let rows = occupied.len();
        let mut design = DMatrix::zeros(rows, DETREND_PARAMETERS);
        let mut rhs = DVector::zeros(rows);
        for (i, &c) in occupied.iter().enumerate() {
            let w = (count[c] as f64).sqrt();
            let row = CalendarFeatures::from_cell(c).design_row();
            for (j, &x) in row.iter().enumerate() {
                design[(i, j)] = w * x;
            }
            rhs[i] = w * (sum[c] / count[c] as f64);
        }
        let sol = qr_least_squares(&design, &rhs, &column_name)?;
        Ok(DetrendModel {
            coefficients: sol.beta.iter().copied().collect(),
            grand_mean: values.iter().sum::<f64>() / n as f64,
            n_obs: n,
            residual_dof: n - DETREND_PARAMETERS,
        })
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn residual_dof(&self) -> usize {
        self.residual_dof
    }

    /// Non-reference effects keyed by level, e.g. `hour=7`, `season=summer`,
    /// `hour=7:season=summer`, `weekend=true`.
    pub fn effects(&self) -> BTreeMap<String, f64> {
        (1..DETREND_PARAMETERS)
            .map(|j| (column_name(j), self.coefficients[j]))
            .collect()
    }

    /// Predicted calendar component for a cell.
    pub fn fitted(&self, features: CalendarFeatures) -> f64 {
        features
            .design_row()
            .iter()
            .zip(&self.coefficients)
            .filter(|(x, _)| **x != 0.0)
            .map(|(_, b)| b)
            .sum()
    }

    /// `value − fitted + grand_mean` for each observation.
    pub fn detrend_values(&self, timestamps: &[NaiveDateTime], values: &[f64]) -> Vec<f64> {
        let table: Vec<f64> = (0..CELLS)
            .map(|c| self.fitted(CalendarFeatures::from_cell(c)))
            .collect();
        timestamps
            .iter()
            .zip(values)
            .map(|(&ts, &v)| v - table[CalendarFeatures::of(ts).cell()] + self.grand_mean)
            .collect()
    }
}

/// Fits the calendar model to the system price of joined records.
pub fn fit_detrend(records: &[HourlyRecord]) -> Result<DetrendModel> {
    let (ts, mec): (Vec<_>, Vec<_>) = records.iter().map(|r| (r.timestamp, r.mec)).unzip();
    DetrendModel::fit(&ts, &mec)
}

/// Detrended system price per record.
pub fn detrend(records: &[HourlyRecord], model: &DetrendModel) -> Vec<(NaiveDateTime, f64)> {
    let (ts, mec): (Vec<_>, Vec<_>) = records.iter().map(|r| (r.timestamp, r.mec)).unzip();
    let values = model.detrend_values(&ts, &mec);
    ts.into_iter().zip(values).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};

    fn ts(s: &str) -> NaiveDateTime {
        crate::ingest::parse_timestamp(s).unwrap()
    }

    fn year_of_hours() -> Vec<NaiveDateTime> {
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..24 * 365).map(|h| start + Duration::hours(h)).collect()
    }

    #[test]
    fn seasons() {
        assert_eq!(season_of(ts("2015-01-15T10:00")), Season::Winter);
        assert_eq!(season_of(ts("2015-07-04T14:00")), Season::Summer);
        assert_eq!(season_of(ts("2015-12-01T00:00")), Season::Winter);
        assert_eq!(season_of(ts("2015-03-01T00:00")), Season::Spring);
        assert_eq!(season_of(ts("2015-11-30T23:00")), Season::Fall);
    }

    #[test]
    fn weekend_flag() {
        assert!(CalendarFeatures::of(ts("2015-07-04T14:00")).weekend); // Saturday
        assert!(!CalendarFeatures::of(ts("2015-07-06T14:00")).weekend); // Monday
    }

    #[test]
    fn parameter_count_and_names() {
        assert_eq!(DETREND_PARAMETERS, 97);
        let names: std::collections::BTreeSet<String> =
            (0..DETREND_PARAMETERS).map(column_name).collect();
        assert_eq!(names.len(), 97);
        assert_eq!(column_name(27), "hour=1:season=spring");
        assert_eq!(column_name(95), "hour=23:season=fall");
    }

    #[test]
    fn cell_round_trip() {
        for c in 0..CELLS {
            assert_eq!(CalendarFeatures::from_cell(c).cell(), c);
        }
    }

    #[test]
    fn constant_price_has_no_effects() {
        let t = year_of_hours();
        let v = vec![42.0; t.len()];
        let m = DetrendModel::fit(&t, &v).unwrap();
        assert!((m.intercept() - 42.0).abs() < 1e-10);
        assert!(m.effects().values().all(|e| e.abs() < 1e-10));
        assert!(m.detrend_values(&t, &v).iter().all(|d| (d - 42.0).abs() < 1e-10));
        assert_eq!(m.residual_dof(), t.len() - 97);
    }

    #[test]
    fn summer_shift_is_recovered() {
        let t = year_of_hours();
        let v: Vec<f64> = t
            .iter()
            .map(|&x| 10.0 + if season_of(x) == Season::Summer { 5.0 } else { 0.0 })
            .collect();
        let m = DetrendModel::fit(&t, &v).unwrap();
        for (name, e) in m.effects() {
            let want = if name == "season=summer" { 5.0 } else { 0.0 };
            assert!((e - want).abs() < 1e-9, "{name}: {e}");
        }
        assert!((m.intercept() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn missing_season_names_cells() {
        let t: Vec<_> = year_of_hours().into_iter().take(24 * 60).collect();
        let v = vec![1.0; t.len()];
        match DetrendModel::fit(&t, &v) {
            Err(Error::DetrendCells { cells }) => {
                assert!(cells.iter().any(|c| c.contains("summer")));
                assert!(!cells.iter().any(|c| c.contains("winter")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let t = year_of_hours();
        let v: Vec<f64> = t.iter().enumerate().map(|(i, _)| (i % 17) as f64).collect();
        let m = DetrendModel::fit(&t, &v).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: DetrendModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        let mut raw: serde_json::Value = serde_json::from_str(&json).unwrap();
        raw["effects"].as_object_mut().unwrap().remove("weekend=true");
        assert!(serde_json::from_value::<DetrendModel>(raw).is_err());
    }
}

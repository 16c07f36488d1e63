//! Volatility, penetration and descriptive statistics.

use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_timestamp, parse_timestamp, SourceEnergy};
use crate::regression::{Regressor, Response};

/// Default EWMSD span in hours (one daily cycle).
pub const DEFAULT_SPAN: f64 = 24.0;

/// Header of the study frame CSV.
pub const FRAME_HEADER: [&str; 6] = [
    "timestamp",
    "detrended_price",
    "detrended_volatility",
    "hydro_pct",
    "solar_pct",
    "wind_pct",
];

#[derive(Debug, Clone, PartialEq)]
pub struct VolatilitySeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<f64>,
    pub span: f64,
}

/// Exponentially weighted moving standard deviation.
///
/// With `α = 2 / (span + 1)` the observation at lag `i` gets weight `(1 − α)^i`
/// over the whole history; the value at `t` is the uncorrected weighted
/// standard deviation about the weighted mean, so the first value is 0.
///
/// The recursion is a weighted Welford update run on `x − x₀`. Shifting by the
/// first observation makes the output exactly translation invariant whenever
/// the shifted inputs are themselves exact.
pub fn ewmsd(values: &[f64], span: f64) -> Result<Vec<f64>> {
    if !(span >= 2.0) || !span.is_finite() {
        return Err(Error::Parameter(format!("EWMSD span must be ≥ 2, got {span}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("EWMSD input contains non-finite values".into()));
    }
    let Some(&origin) = values.first() else {
        return Ok(Vec::new());
    };
    let decay = 1.0 - 2.0 / (span + 1.0);
    let mut weight = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    Ok(values
        .iter()
        .map(|&x| {
            let d = x - origin;
            weight = decay * weight + 1.0;
            let delta = d - mean;
            mean += delta / weight;
            m2 = decay * m2 + delta * (d - mean);
            (m2 / weight).max(0.0).sqrt()
        })
        .collect())
}

pub fn ewmsd_series(timestamps: &[NaiveDateTime], values: &[f64], span: f64) -> Result<VolatilitySeries> {
    if timestamps.len() != values.len() {
        return Err(Error::Parameter("timestamps and values differ in length".into()));
    }
    Ok(VolatilitySeries {
        timestamps: timestamps.to_vec(),
        values: ewmsd(values, span)?,
        span,
    })
}

/// Share of hourly generation per source, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penetration {
    pub hydro: f64,
    pub solar: f64,
    pub wind: f64,
    pub other: f64,
}

pub fn penetration(generation: &SourceEnergy, total_gen: f64) -> Result<Penetration> {
    if !(total_gen > 0.0) {
        return Err(Error::Domain(format!(
            "penetration undefined for total generation {total_gen}"
        )));
    }
    let pct = |mwh: f64| 100.0 * mwh / total_gen;
    Ok(Penetration {
        hydro: pct(generation.hydro),
        solar: pct(generation.solar),
        wind: pct(generation.wind),
        other: pct(generation.other),
    })
}

/// Aligned hourly analysis columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyFrame {
    timestamps: Vec<NaiveDateTime>,
    detrended_price: Vec<f64>,
    detrended_volatility: Vec<f64>,
    hydro_pct: Vec<f64>,
    solar_pct: Vec<f64>,
    wind_pct: Vec<f64>,
}

impl StudyFrame {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        detrended_price: Vec<f64>,
        detrended_volatility: Vec<f64>,
        hydro_pct: Vec<f64>,
        solar_pct: Vec<f64>,
        wind_pct: Vec<f64>,
    ) -> Result<Self> {
        let n = timestamps.len();
        for (name, col) in [
            ("detrended_price", &detrended_price),
            ("detrended_volatility", &detrended_volatility),
            ("hydro_pct", &hydro_pct),
            ("solar_pct", &solar_pct),
            ("wind_pct", &wind_pct),
        ] {
            if col.len() != n {
                return Err(Error::Parameter(format!(
                    "column {name} has {} rows, expected {n}",
                    col.len()
                )));
            }
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::DataIntegrity(format!(
                "frame timestamps not strictly increasing at {}",
                w[1]
            )));
        }
        Ok(StudyFrame {
            timestamps,
            detrended_price,
            detrended_volatility,
            hydro_pct,
            solar_pct,
            wind_pct,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn response(&self, response: Response) -> &[f64] {
        match response {
            Response::DetrendedPrice => &self.detrended_price,
            Response::DetrendedVolatility => &self.detrended_volatility,
        }
    }

    pub fn regressor(&self, regressor: Regressor) -> &[f64] {
        match regressor {
            Regressor::Hydro => &self.hydro_pct,
            Regressor::Wind => &self.wind_pct,
            Regressor::Solar => &self.solar_pct,
        }
    }

    /// All value columns in CSV order.
    pub fn columns(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("detrended_price", &self.detrended_price),
            ("detrended_volatility", &self.detrended_volatility),
            ("hydro_pct", &self.hydro_pct),
            ("solar_pct", &self.solar_pct),
            ("wind_pct", &self.wind_pct),
        ]
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns().into_iter().find(|(n, _)| *n == name).map(|(_, c)| c)
    }

    /// Keeps only rows where `keep` is true.
    pub fn filter(&self, keep: &[bool]) -> StudyFrame {
        let pick = |col: &[f64]| -> Vec<f64> {
            col.iter().zip(keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect()
        };
        StudyFrame {
            timestamps: self
                .timestamps
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(t, _)| *t)
                .collect(),
            detrended_price: pick(&self.detrended_price),
            detrended_volatility: pick(&self.detrended_volatility),
            hydro_pct: pick(&self.hydro_pct),
            solar_pct: pick(&self.solar_pct),
            wind_pct: pick(&self.wind_pct),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(FRAME_HEADER)?;
        for i in 0..self.len() {
            let mut row = vec![format_timestamp(self.timestamps[i])];
            row.extend(self.columns().iter().map(|(_, c)| c[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<frame>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != FRAME_HEADER {
            return Err(Error::MalformedRecord {
                row: 0,
                message: format!("unexpected frame header `{}`", header.join(",")),
            });
        }
        let mut cols: [Vec<f64>; 5] = Default::default();
        let mut ts = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |message: String| Error::MalformedRecord { row: i + 1, message };
            ts.push(parse_timestamp(&rec[0]).ok_or_else(|| bad(format!("bad timestamp `{}`", &rec[0])))?);
            for (k, col) in cols.iter_mut().enumerate() {
                col.push(rec[k + 1].parse().map_err(|_| bad(format!("bad number `{}`", &rec[k + 1])))?);
            }
        }
        let [p, v, h, s, w] = cols;
        StudyFrame::new(ts, p, v, h, s, w)
    }
}

/// Min, max, median, mean and sample standard deviation of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    /// Single observation: `std` reported as 0 by convention.
    pub degenerate: bool,
}

pub fn summarize(name: &str, values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Domain(format!("cannot summarize empty column {name}")));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        name: name.to_string(),
        n,
        min: sorted[0],
        max: sorted[n - 1],
        median,
        mean,
        std,
        degenerate: n == 1,
    })
}

/// Type-7 empirical quantile of an ascending slice (linear interpolation
/// between order statistics at position `(n − 1) p`).
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "empirical quantile of an empty slice");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary statistics for each named column.
pub fn descriptive_stats(columns: &[(&str, &[f64])]) -> Result<Vec<Summary>> {
    columns.iter().map(|(name, col)| summarize(name, col)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(values: &[f64], span: f64) -> Vec<f64> {
        let decay = 1.0 - 2.0 / (span + 1.0);
        (0..values.len())
            .map(|t| {
                let w: Vec<f64> = (0..=t).map(|i| decay.powi(i as i32)).collect();
                let sw: f64 = w.iter().sum();
                let mu = (0..=t).map(|i| w[i] * values[t - i]).sum::<f64>() / sw;
                ((0..=t).map(|i| w[i] * (values[t - i] - mu).powi(2)).sum::<f64>() / sw).sqrt()
            })
            .collect()
    }

    #[test]
    fn constant_series_has_zero_volatility() {
        assert_eq!(ewmsd(&[5.0; 4], 24.0).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn first_value_is_zero() {
        assert_eq!(ewmsd(&[3.0, 9.0], 10.0).unwrap()[0], 0.0);
    }

    #[test]
    fn short_series_matches_direct_sum() {
        let x = [1.0, 2.0, 4.0];
        let got = ewmsd(&x, 3.0).unwrap();
        // α = 1/2: t = 1 weights (1, 1/2) → μ = 5/3, var = 2/9
        assert!((got[1] - (2.0f64 / 9.0).sqrt()).abs() < 1e-15);
        for (a, b) in got.iter().zip(direct(&x, 3.0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn span_below_two_is_rejected() {
        assert!(matches!(ewmsd(&[1.0], 1.5), Err(Error::Parameter(_))));
        assert!(ewmsd(&[f64::NAN], 24.0).is_err());
    }

    #[test]
    fn penetration_examples() {
        let g = SourceEnergy { hydro: 100.0, solar: 0.0, wind: 0.0, other: 300.0 };
        let p = penetration(&g, 400.0).unwrap();
        assert_eq!(p.hydro, 25.0);
        assert_eq!(p.solar, 0.0);
        let g = SourceEnergy { hydro: 2606.33, solar: 218.85, wind: 1148.80, other: 10000.0 - 3974.0 };
        let p = penetration(&g, 10000.0).unwrap();
        assert!((p.hydro - 26.0633).abs() < 1e-12);
        assert!((p.solar - 2.1885).abs() < 1e-12);
        assert!((p.wind - 11.4880).abs() < 1e-12);
        assert!(matches!(penetration(&g, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn type_seven_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&v, 0.0), 1.0);
        assert_eq!(empirical_quantile(&v, 1.0), 4.0);
        assert!((empirical_quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((empirical_quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn summary_examples() {
        let s = summarize("x", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.mean, s.std), (1.0, 3.0, 2.0, 2.0, 1.0));
        let s = summarize("x", &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        let s = summarize("x", &[7.0]).unwrap();
        assert_eq!(s.std, 0.0);
        assert!(s.degenerate);
        assert!(summarize("x", &[]).is_err());
    }

    #[test]
    fn frame_rejects_unsorted_timestamps() {
        let t = parse_timestamp("2015-01-01T00:00").unwrap();
        let r = StudyFrame::new(vec![t, t], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]);
        assert!(matches!(r, Err(Error::DataIntegrity(_))));
    }
}

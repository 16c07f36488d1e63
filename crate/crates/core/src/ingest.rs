//! Raw market data ingestion.
//!
//! Hourly price rows carry the locational marginal price together with its
//! congestion and loss components; the system price (marginal energy cost) is
//! what remains once both components are removed. Generation readings arrive
//! at 5 to 60 minute resolution per source and are integrated to hourly
//! energy before being joined with prices on the hour.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header expected on price CSV files.
pub const PRICE_HEADER: [&str; 4] = ["timestamp", "lmp", "mcc", "mlc"];
/// Header expected on generation CSV files.
pub const GENERATION_HEADER: [&str; 4] = ["timestamp", "source", "power_mw", "interval_min"];

const ALLOWED_INTERVALS: [u32; 4] = [5, 10, 15, 60];

/// Generation source bucket. Anything that is not hydro, solar or wind lands in `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Hydro,
    Solar,
    Wind,
    Other,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Hydro, Source::Solar, Source::Wind, Source::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Hydro => "hydro",
            Source::Solar => "solar",
            Source::Wind => "wind",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = std::convert::Infallible;

    /// Fuel labels are matched case-insensitively; unknown labels (gas, coal,
    /// nuclear, ...) map to `Other` so totals stay system-wide.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let label = s.trim().to_ascii_lowercase();
        Ok(match label.as_str() {
            "hydro" | "water" | "hydropower" => Source::Hydro,
            "solar" | "sun" => Source::Solar,
            "wind" => Source::Wind,
            _ => Source::Other,
        })
    }
}

/// One hour of hub pricing in market-local civil time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub timestamp: NaiveDateTime,
    pub lmp: f64,
    pub mcc: f64,
    pub mlc: f64,
}

/// One sub-hourly generation reading; `timestamp` marks the interval start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationReading {
    pub timestamp: NaiveDateTime,
    pub source: Source,
    pub power_mw: f64,
    pub interval_minutes: u32,
}

impl GenerationReading {
    fn validate(&self, row: usize) -> Result<()> {
        if !self.power_mw.is_finite() || self.power_mw < 0.0 {
            return Err(Error::MalformedRecord {
                row,
                message: format!("power must be finite and non-negative, got {}", self.power_mw),
            });
        }
        if !ALLOWED_INTERVALS.contains(&self.interval_minutes) {
            return Err(Error::MalformedRecord {
                row,
                message: format!(
                    "interval must be one of {:?} minutes, got {}",
                    ALLOWED_INTERVALS, self.interval_minutes
                ),
            });
        }
        Ok(())
    }
}

/// Hourly energy per source, in MWh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceEnergy {
    pub hydro: f64,
    pub solar: f64,
    pub wind: f64,
    pub other: f64,
}

impl SourceEnergy {
    pub fn get(&self, source: Source) -> f64 {
        match source {
            Source::Hydro => self.hydro,
            Source::Solar => self.solar,
            Source::Wind => self.wind,
            Source::Other => self.other,
        }
    }

    pub fn get_mut(&mut self, source: Source) -> &mut f64 {
        match source {
            Source::Hydro => &mut self.hydro,
            Source::Solar => &mut self.solar,
            Source::Wind => &mut self.wind,
            Source::Other => &mut self.other,
        }
    }

    pub fn total(&self) -> f64 {
        self.hydro + self.solar + self.wind + self.other
    }
}

/// A joined market hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    /// System price, $/MWh.
    pub mec: f64,
    pub generation: SourceEnergy,
    /// Sum of `generation`, MWh.
    pub total_gen: f64,
}

/// Energy of one source over one hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HourlyEnergy {
    pub hour: NaiveDateTime,
    pub source: Source,
    pub mwh: f64,
    pub covered_minutes: u32,
    /// Set when the hour was only partially covered and the energy was scaled up.
    pub scaled: bool,
}

/// Drop and flag counts accumulated during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub price_rows: usize,
    pub generation_readings: usize,
    pub missing_price_rows: usize,
    pub dst_duplicate_price_rows: usize,
    pub dst_duplicate_readings: usize,
    pub partial_coverage_source_hours: usize,
    pub price_only_hours: usize,
    pub generation_only_hours: usize,
    pub zero_generation_hours: usize,
    pub records: usize,
}

/// System price: the locational price with congestion and loss removed.
pub fn compute_mec(row: usize, lmp: f64, mcc: f64, mlc: f64) -> Result<f64> {
    if !(lmp.is_finite() && mcc.is_finite() && mlc.is_finite()) {
        return Err(Error::MalformedRecord {
            row,
            message: format!("non-finite price component (lmp {lmp}, mcc {mcc}, mlc {mlc})"),
        });
    }
    Ok(lmp - mcc - mlc)
}

pub(crate) fn truncate_to_hour(ts: NaiveDateTime) -> NaiveDateTime {
    ts.date().and_hms_opt(ts.hour(), 0, 0).expect("hour of a valid timestamp")
}

/// Integrates sub-hourly readings to hourly energy per source.
///
/// Each reading contributes `power × interval / 60` MWh to the hour containing
/// its start. Hours covered by fewer than 60 minutes of intervals are scaled by
/// `60 / covered` and flagged. Overlapping intervals, or an interval running
/// past the end of its hour, are integrity errors.
pub fn aggregate_generation(readings: &[GenerationReading]) -> Result<Vec<HourlyEnergy>> {
    let mut buckets: BTreeMap<(NaiveDateTime, Source), Vec<(u32, u32, f64)>> = BTreeMap::new();
    for (row, reading) in readings.iter().enumerate() {
        reading.validate(row)?;
        if reading.timestamp.second() != 0 || reading.timestamp.nanosecond() != 0 {
            return Err(Error::MalformedRecord {
                row,
                message: format!("reading timestamp {} is not minute-aligned", reading.timestamp),
            });
        }
        let hour = truncate_to_hour(reading.timestamp);
        let start = reading.timestamp.minute();
        if start + reading.interval_minutes > 60 {
            return Err(Error::DataIntegrity(format!(
                "{} reading at {} ({} min) crosses the hour boundary",
                reading.source, reading.timestamp, reading.interval_minutes
            )));
        }
        buckets.entry((hour, reading.source)).or_default().push((
            start,
            reading.interval_minutes,
            reading.power_mw,
        ));
    }

    let mut out = Vec::with_capacity(buckets.len());
    for ((hour, source), mut intervals) in buckets {
        intervals.sort_by_key(|&(start, _, _)| start);
        let mut covered = 0u32;
        let mut end_of_previous = 0u32;
        let mut mwh = 0.0;
        for (i, &(start, minutes, power)) in intervals.iter().enumerate() {
            if i > 0 && start < end_of_previous {
                return Err(Error::DataIntegrity(format!(
                    "overlapping {source} intervals in hour {hour}"
                )));
            }
            end_of_previous = start + minutes;
            covered += minutes;
            mwh += power * f64::from(minutes) / 60.0;
        }
        let scaled = covered < 60;
        if scaled {
            mwh *= 60.0 / f64::from(covered);
        }
        out.push(HourlyEnergy {
            hour,
            source,
            mwh,
            covered_minutes: covered,
            scaled,
        });
    }
    Ok(out)
}

/// Counts produced by [`join_hourly`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub price_only: usize,
    pub generation_only: usize,
    pub zero_generation: usize,
}

/// Inner join of hourly prices and hourly generation on the timestamp.
///
/// Output is strictly increasing in time. Hours whose total generation is zero
/// are dropped because penetration is undefined there.
pub fn join_hourly(
    prices: &[PriceRow],
    generation: &[HourlyEnergy],
) -> Result<(Vec<HourlyRecord>, JoinStats)> {
    let mut price_by_hour: BTreeMap<NaiveDateTime, (usize, &PriceRow)> = BTreeMap::new();
    for (row, price) in prices.iter().enumerate() {
        if truncate_to_hour(price.timestamp) != price.timestamp {
            return Err(Error::MalformedRecord {
                row,
                message: format!("price timestamp {} is not on the hour", price.timestamp),
            });
        }
        if price_by_hour.insert(price.timestamp, (row, price)).is_some() {
            return Err(Error::DataIntegrity(format!(
                "duplicate price hour {}",
                price.timestamp
            )));
        }
    }

    let mut gen_by_hour: BTreeMap<NaiveDateTime, (SourceEnergy, [bool; 4])> = BTreeMap::new();
    for energy in generation {
        let (mix, seen) = gen_by_hour.entry(energy.hour).or_default();
        let slot = energy.source as usize;
        if seen[slot] {
            return Err(Error::DataIntegrity(format!(
                "duplicate {} generation for hour {}",
                energy.source, energy.hour
            )));
        }
        seen[slot] = true;
        *mix.get_mut(energy.source) = energy.mwh;
    }

    let mut stats = JoinStats::default();
    let mut records = Vec::with_capacity(price_by_hour.len().min(gen_by_hour.len()));
    for (&hour, &(row, price)) in &price_by_hour {
        let Some((mix, _)) = gen_by_hour.get(&hour) else {
            stats.price_only += 1;
            continue;
        };
        let mec = compute_mec(row, price.lmp, price.mcc, price.mlc)?;
        let total_gen = mix.total();
        if total_gen <= 0.0 {
            log::debug!("dropping {hour}: zero total generation");
            stats.zero_generation += 1;
            continue;
        }
        records.push(HourlyRecord {
            timestamp: hour,
            mec,
            generation: *mix,
            total_gen,
        });
    }
    stats.generation_only = gen_by_hour
        .keys()
        .filter(|hour| !price_by_hour.contains_key(hour))
        .count();
    if stats.price_only + stats.generation_only > 0 {
        log::info!(
            "join dropped {} price-only and {} generation-only hours",
            stats.price_only,
            stats.generation_only
        );
    }
    Ok((records, stats))
}

/// True when `ts` lies in the repeated 01:00 hour of the US daylight-saving
/// fall-back day (first Sunday of November).
pub fn is_fall_back_hour(ts: NaiveDateTime) -> bool {
    if ts.month() != 11 || ts.hour() != 1 || ts.weekday() != Weekday::Sun {
        return false;
    }
    ts.day() <= 7
}

/// First Sunday of November for `year`; used by the fixture and tests.
pub fn fall_back_day(year: i32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(year, 11, 1).expect("valid date");
    let offset = (7 - first.weekday().num_days_from_sunday()) % 7;
    first + Duration::days(i64::from(offset))
}

/// Keeps the first occurrence of each repeated fall-back price hour. Returns
/// the number of rows removed.
fn dedupe_fall_back_prices(prices: &mut Vec<PriceRow>) -> usize {
    let before = prices.len();
    let mut seen = std::collections::HashSet::new();
    prices.retain(|p| !is_fall_back_hour(p.timestamp) || seen.insert(p.timestamp));
    before - prices.len()
}

fn dedupe_fall_back_readings(readings: &mut Vec<GenerationReading>) -> usize {
    let before = readings.len();
    let mut seen = std::collections::HashSet::new();
    readings.retain(|r| !is_fall_back_hour(r.timestamp) || seen.insert((r.timestamp, r.source)));
    before - readings.len()
}

/// Joined hourly table plus its ingest report.
#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub records: Vec<HourlyRecord>,
    pub report: IngestReport,
}

/// Runs the in-memory part of ingestion: daylight-saving deduplication,
/// aggregation and the join.
pub fn ingest(
    mut prices: Vec<PriceRow>,
    mut readings: Vec<GenerationReading>,
    missing_price_rows: usize,
) -> Result<IngestOutput> {
    let mut report = IngestReport {
        price_rows: prices.len() + missing_price_rows,
        generation_readings: readings.len(),
        missing_price_rows,
        ..IngestReport::default()
    };
    report.dst_duplicate_price_rows = dedupe_fall_back_prices(&mut prices);
    report.dst_duplicate_readings = dedupe_fall_back_readings(&mut readings);

    let energy = aggregate_generation(&readings)?;
    report.partial_coverage_source_hours = energy.iter().filter(|e| e.scaled).count();
    let (records, stats) = join_hourly(&prices, &energy)?;
    report.price_only_hours = stats.price_only;
    report.generation_only_hours = stats.generation_only;
    report.zero_generation_hours = stats.zero_generation;
    report.records = records.len();
    Ok(IngestOutput { records, report })
}

/// Reads both input files and runs [`ingest`].
pub fn ingest_files(prices: &Path, generation: &Path) -> Result<IngestOutput> {
    let (price_rows, missing) = read_prices(prices)?;
    let readings = read_generation(generation)?;
    ingest(price_rows, readings, missing)
}

/// Accepts `YYYY-MM-DDTHH:MM[:SS]` with `T` or a space as separator.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let s = raw.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

#[derive(Debug, Deserialize)]
struct RawPrice {
    timestamp: String,
    lmp: Option<f64>,
    mcc: Option<f64>,
    mlc: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawReading {
    timestamp: String,
    source: String,
    power_mw: f64,
    interval_min: u32,
}

fn is_json_lines(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::MalformedRecord {
            row: 0,
            message: format!(
                "{}: expected header `{}`, found `{}`",
                path.display(),
                expected.join(","),
                found.join(",")
            ),
        });
    }
    Ok(())
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let file = open(path)?;
    if is_json_lines(path) {
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                row: i + 1,
                message: e.to_string(),
            })?;
            out.push(value);
        }
        return Ok(out);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    check_header(path, reader.headers()?, header)?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        out.push(row.map_err(|e| Error::MalformedRecord {
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn timestamp_or_err(raw: &str, row: usize) -> Result<NaiveDateTime> {
    parse_timestamp(raw).ok_or_else(|| Error::MalformedRecord {
        row,
        message: format!("unparseable timestamp `{raw}`"),
    })
}

/// Reads a price file (CSV or JSON lines). Rows with an empty price component
/// are skipped; their count is returned alongside the rows.
pub fn read_prices(path: &Path) -> Result<(Vec<PriceRow>, usize)> {
    let raw: Vec<RawPrice> = read_records(path, &PRICE_HEADER)?;
    let mut rows = Vec::with_capacity(raw.len());
    let mut missing = 0;
    for (i, r) in raw.into_iter().enumerate() {
        let timestamp = timestamp_or_err(&r.timestamp, i + 1)?;
        match (r.lmp, r.mcc, r.mlc) {
            (Some(lmp), Some(mcc), Some(mlc)) => {
                compute_mec(i + 1, lmp, mcc, mlc)?;
                rows.push(PriceRow {
                    timestamp,
                    lmp,
                    mcc,
                    mlc,
                });
            }
            _ => missing += 1,
        }
    }
    Ok((rows, missing))
}

/// Reads a generation file (CSV or JSON lines).
pub fn read_generation(path: &Path) -> Result<Vec<GenerationReading>> {
    let raw: Vec<RawReading> = read_records(path, &GENERATION_HEADER)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let reading = GenerationReading {
                timestamp: timestamp_or_err(&r.timestamp, i + 1)?,
                source: r.source.parse().expect("infallible"),
                power_mw: r.power_mw,
                interval_minutes: r.interval_min,
            };
            reading.validate(i + 1)?;
            Ok(reading)
        })
        .collect()
}

pub(crate) fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Writes price rows with the documented CSV header.
pub fn write_prices<W: std::io::Write>(out: W, rows: &[PriceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PRICE_HEADER)?;
    for r in rows {
        w.write_record([
            format_timestamp(r.timestamp),
            r.lmp.to_string(),
            r.mcc.to_string(),
            r.mlc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<prices>", e))?;
    Ok(())
}

/// Writes generation readings with the documented CSV header.
pub fn write_generation<W: std::io::Write>(out: W, readings: &[GenerationReading]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GENERATION_HEADER)?;
    for r in readings {
        w.write_record([
            format_timestamp(r.timestamp),
            r.source.to_string(),
            r.power_mw.to_string(),
            r.interval_minutes.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<generation>", e))?;
    Ok(())
}

/// Writes joined hourly records as CSV.
pub fn write_hourly<W: std::io::Write>(out: W, records: &[HourlyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "mec", "hydro_mwh", "solar_mwh", "wind_mwh", "other_mwh", "total_mwh"])?;
    for r in records {
        w.write_record([
            format_timestamp(r.timestamp),
            r.mec.to_string(),
            r.generation.hydro.to_string(),
            r.generation.solar.to_string(),
            r.generation.wind.to_string(),
            r.generation.other.to_string(),
            r.total_gen.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<hourly>", e))?;
    Ok(())
}

//! Synthetic market data with a known generating process.
//!
//! Prices follow `mec = base + calendar(t) + Σ βₖ penetrationₖ + noise`.
//! Total load carries daily and seasonal swings, so generation in MWh is
//! seasonally modulated, while each renewable share is a base level plus a
//! random deviation centred within every (hour, season, weekend) cell. Those
//! deviations are orthogonal to any calendar effect, so calendar detrending
//! leaves the planted penetration coefficients identifiable.
//!
//! Fixtures shorter than a year spread their days evenly across one year so
//! that every season and both day types are present.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarFeatures, Season};
use crate::error::{Error, Result};
use crate::ingest::{write_generation, write_prices, GenerationReading, PriceRow, Source};
use crate::study::StudyConfig;

/// Shortest fixture accepted: 90 days.
pub const MIN_FIXTURE_HOURS: usize = 24 * 90;

/// Planted penetration effects, $/MWh per percentage point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedCoefficients {
    pub hydro: f64,
    pub wind: f64,
    pub solar: f64,
}

impl Default for PlantedCoefficients {
    fn default() -> Self {
        PlantedCoefficients {
            hydro: -0.56,
            wind: -0.82,
            solar: -4.33,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    pub n_hours: usize,
    pub coefficients: PlantedCoefficients,
    pub noise_std: f64,
    pub calendar_effects: bool,
    pub base_price: f64,
    pub start: NaiveDate,
}

impl FixtureSpec {
    pub fn new(seed: u64, n_hours: usize) -> Self {
        FixtureSpec {
            seed,
            n_hours,
            coefficients: PlantedCoefficients::default(),
            noise_std: 5.0,
            calendar_effects: true,
            base_price: 40.0,
            start: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub prices: Vec<PriceRow>,
    pub readings: Vec<GenerationReading>,
}

// base share, half-width of the raw uniform deviation (percentage points)
const HYDRO_SHARE: (f64, f64) = (9.0, 3.0);
const WIND_SHARE: (f64, f64) = (6.0, 2.5);
const SOLAR_SHARE: (f64, f64) = (1.5, 0.7);

fn season_index(s: Season) -> usize {
    Season::ALL.iter().position(|&x| x == s).expect("known season")
}

/// Calendar component used by the fixture; it lies in the span of the
/// hour × season and weekend indicators.
pub fn fixture_calendar_effect(features: CalendarFeatures) -> f64 {
    const LEVEL: [f64; 4] = [8.0, -3.0, 6.0, -2.0];
    const AMPLITUDE: [f64; 4] = [1.0, 0.7, 1.4, 0.8];
    let s = season_index(features.season);
    let h = f64::from(features.hour);
    let diurnal = 8.0 * (std::f64::consts::TAU * (h - 8.0) / 24.0).sin()
        + if (17..=21).contains(&features.hour) { 4.0 } else { 0.0 };
    LEVEL[s] + AMPLITUDE[s] * diurnal - if features.weekend { 4.0 } else { 0.0 }
}

fn load_mw(features: CalendarFeatures) -> f64 {
    const OFFSET: [f64; 4] = [800.0, -600.0, 1500.0, -300.0];
    let h = f64::from(features.hour);
    13_000.0
        + OFFSET[season_index(features.season)]
        + 2_000.0 * (std::f64::consts::TAU * (h - 9.0) / 24.0).sin()
        - if features.weekend { 700.0 } else { 0.0 }
}

fn hour_stamps(spec: &FixtureSpec) -> Vec<NaiveDateTime> {
    let days = spec.n_hours.div_ceil(24);
    let spacing = if days >= 365 { 1.0 } else { 365.0 / days as f64 };
    let midnight = spec.start.and_hms_opt(0, 0, 0).expect("midnight");
    (0..days)
        .flat_map(|k| {
            let day = midnight + Duration::days((k as f64 * spacing).floor() as i64);
            (0..24).map(move |h| day + Duration::hours(h))
        })
        .take(spec.n_hours)
        .collect()
}

/// Subtracts the mean of each (hour, season, weekend) cell.
fn center_within_cells(values: &mut [f64], cells: &[usize]) {
    let mut sum = [0.0f64; 192];
    let mut count = [0usize; 192];
    for (&v, &c) in values.iter().zip(cells) {
        sum[c] += v;
        count[c] += 1;
    }
    for (v, &c) in values.iter_mut().zip(cells) {
        *v -= sum[c] / count[c] as f64;
    }
}

fn cell_of(f: CalendarFeatures) -> usize {
    (f.hour as usize * 4 + season_index(f.season)) * 2 + usize::from(f.weekend)
}

/// Generates price rows and sub-hourly generation readings.
pub fn synthetic_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    if spec.n_hours < MIN_FIXTURE_HOURS {
        return Err(Error::Parameter(format!(
            "fixture needs at least {MIN_FIXTURE_HOURS} hours, got {}",
            spec.n_hours
        )));
    }
    if !(spec.noise_std >= 0.0) {
        return Err(Error::Parameter("noise standard deviation must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stamps = hour_stamps(spec);
    let features: Vec<CalendarFeatures> = stamps.iter().map(|&t| CalendarFeatures::of(t)).collect();
    let cells: Vec<usize> = features.iter().map(|&f| cell_of(f)).collect();

    let share = |(base, half): (f64, f64), rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut dev: Vec<f64> = (0..stamps.len()).map(|_| rng.random_range(-half..half)).collect();
        center_within_cells(&mut dev, &cells);
        dev.into_iter().map(|d| base + d).collect()
    };
    let hydro = share(HYDRO_SHARE, &mut rng);
    let wind = share(WIND_SHARE, &mut rng);
    let solar = share(SOLAR_SHARE, &mut rng);

    let beta = spec.coefficients;
    let mut prices = Vec::with_capacity(stamps.len());
    let mut readings = Vec::with_capacity(stamps.len() * 32);
    for (i, (&ts, &f)) in stamps.iter().zip(&features).enumerate() {
        let calendar = if spec.calendar_effects { fixture_calendar_effect(f) } else { 0.0 };
        let noise: f64 = rng.sample(StandardNormal);
        let mec = spec.base_price
            + calendar
            + beta.hydro * hydro[i]
            + beta.wind * wind[i]
            + beta.solar * solar[i]
            + spec.noise_std * noise;
        let mcc = rng.random_range(-2.0..3.0);
        let mlc = rng.random_range(-1.0..1.0);
        prices.push(PriceRow {
            timestamp: ts,
            lmp: mec + mcc + mlc,
            mcc,
            mlc,
        });

        let load = load_mw(f);
        let other = 100.0 - hydro[i] - wind[i] - solar[i];
        for (source, pct, minutes) in [
            (Source::Hydro, hydro[i], 5u32),
            (Source::Wind, wind[i], 5),
            (Source::Solar, solar[i], 15),
            (Source::Other, other, 15),
        ] {
            let power = load * pct / 100.0;
            for k in 0..60 / minutes {
                readings.push(GenerationReading {
                    timestamp: ts + Duration::minutes(i64::from(k * minutes)),
                    source,
                    power_mw: power,
                    interval_minutes: minutes,
                });
            }
        }
    }
    Ok(Fixture {
        spec: spec.clone(),
        prices,
        readings,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `prices.csv`, `generation.csv`, `fixture.json` (the generating
/// specification) and a `config.json` study configuration pointing at the
/// two data files. Returns the configuration path.
pub fn write_fixture(fixture: &Fixture, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_prices(create(&dir.join("prices.csv"))?, &fixture.prices)?;
    write_generation(create(&dir.join("generation.csv"))?, &fixture.readings)?;
    let spec_path = dir.join("fixture.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&fixture.spec)?).map_err(|e| Error::io(&spec_path, e))?;
    let config = StudyConfig {
        prices: PathBuf::from("prices.csv"),
        generation: PathBuf::from("generation.csv"),
        seed: fixture.spec.seed,
        ..StudyConfig::default()
    };
    let config_path = dir.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(&config)?).map_err(|e| Error::io(&config_path, e))?;
    Ok(config_path)
}

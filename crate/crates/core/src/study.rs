//! The full study: ingest, detrend, metrics, then the grid of mean-effect and
//! quantile-effect models for both responses.
//!
//! Every fit in the grid runs independently. A failing fit is recorded in the
//! bundle with its error message and the remaining fits still run. Results
//! are assembled in grid order, so the serialized bundle is byte-identical
//! across runs with the same inputs and configuration, whatever order the
//! parallel fits finish in.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::{fit_detrend, DetrendModel};
use crate::error::{Error, Result};
use crate::ingest::{ingest_files, HourlyRecord, IngestReport};
use crate::metrics::{
    descriptive_stats, empirical_quantile, ewmsd, penetration, StudyFrame, Summary, DEFAULT_SPAN,
};
use crate::quantile::{bootstrap_se, fit_quantile, BootstrapInference, DEFAULT_REPLICATES};
use crate::regression::{correlation_matrix, fit_ols, CorrelationMatrix, Method, ModelSpec, RegressionResult, Response};

/// Fewest joined hourly rows a study accepts.
pub const MIN_STUDY_ROWS: usize = 1000;

pub const DEFAULT_QUANTILES: [f64; 4] = [0.25, 0.5, 0.75, 0.9];

fn default_span() -> f64 {
    DEFAULT_SPAN
}

fn default_quantiles() -> Vec<f64> {
    DEFAULT_QUANTILES.to_vec()
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Study settings, read from a JSON file.
///
/// Relative input paths are resolved against the directory holding the
/// configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub prices: PathBuf,
    pub generation: PathBuf,
    #[serde(default = "default_span")]
    pub ewmsd_span: f64,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub bootstrap_replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Inner fraction of detrended price kept before fitting; `None` keeps
    /// every row.
    #[serde(default)]
    pub trim: Option<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            prices: PathBuf::new(),
            generation: PathBuf::new(),
            ewmsd_span: DEFAULT_SPAN,
            quantiles: default_quantiles(),
            bootstrap_replicates: DEFAULT_REPLICATES,
            seed: 0,
            out_dir: default_out_dir(),
            trim: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.ewmsd_span.is_finite() || self.ewmsd_span < 2.0 {
            return Err(Error::Config(format!("ewmsd_span must be ≥ 2, got {}", self.ewmsd_span)));
        }
        if let Some(&bad) = self.quantiles.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config(format!("quantile {bad} is outside (0, 1)")));
        }
        if let Some(w) = self.quantiles.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "quantiles must be strictly increasing; {} is followed by {}",
                w[0], w[1]
            )));
        }
        if !self.quantiles.is_empty() && self.bootstrap_replicates < crate::quantile::MIN_REPLICATES {
            return Err(Error::Config(format!(
                "bootstrap_replicates must be ≥ {}, got {}",
                crate::quantile::MIN_REPLICATES,
                self.bootstrap_replicates
            )));
        }
        if let Some(t) = self.trim {
            if !(t > 0.9 && t <= 1.0) {
                return Err(Error::Config(format!("trim must lie in (0.9, 1], got {t}")));
            }
        }
        Ok(())
    }

    /// Reads, path-resolves and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: StudyConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.prices, &mut config.generation] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// One cell of the model grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTask {
    pub spec: ModelSpec,
    pub method: Method,
}

impl FitTask {
    pub fn label(&self) -> String {
        match self.method {
            Method::Ols => format!("{} ~ {} [mean]", self.spec.response().tag(), self.spec.label()),
            Method::Quantile { tau } => format!("{} ~ {} [tau={tau}]", self.spec.response().tag(), self.spec.label()),
        }
    }
}

/// Cartesian product of responses × specs × quantiles, response-major and
/// quantile-minor. With no quantiles the grid holds one mean-effect task
/// per (response, spec).
pub fn model_grid(specs: &[ModelSpec], quantiles: &[f64], responses: &[Response]) -> Vec<FitTask> {
    let mut tasks = Vec::new();
    for &response in responses {
        for spec in specs {
            let spec = spec.with_response(response);
            if quantiles.is_empty() {
                tasks.push(FitTask {
                    spec: spec.clone(),
                    method: Method::Ols,
                });
            }
            for &tau in quantiles {
                tasks.push(FitTask {
                    spec: spec.clone(),
                    method: Method::Quantile { tau },
                });
            }
        }
    }
    tasks
}

/// Interior-point and bootstrap diagnostics for a quantile fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub objective: f64,
    pub iterations: usize,
    pub vertex: bool,
    pub bootstrap_replicates: usize,
    pub bootstrap_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub task: FitTask,
    pub result: Option<RegressionResult>,
    pub solver: Option<SolverSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
    pub ewmsd_span: f64,
    pub quantiles: Vec<f64>,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub trim: Option<f64>,
    pub joined_rows: usize,
    pub trimmed_rows: usize,
    pub fitted_rows: usize,
    pub ingest: Option<IngestReport>,
    pub failed_fits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub descriptive_stats: Vec<Summary>,
    pub correlation: CorrelationMatrix,
    pub mean_fits: Vec<FitRecord>,
    pub quantile_fits: Vec<FitRecord>,
    pub provenance: Provenance,
}

impl ResultsBundle {
    pub fn fit_count(&self) -> usize {
        self.mean_fits.len() + self.quantile_fits.len()
    }

    pub fn failures(&self) -> impl Iterator<Item = &FitRecord> {
        self.mean_fits.iter().chain(&self.quantile_fits).filter(|f| f.error.is_some())
    }

    /// Successful mean-effect results for one response, in grid order.
    pub fn mean_results(&self, response: Response) -> Vec<&RegressionResult> {
        self.mean_fits
            .iter()
            .filter(|f| f.task.spec.response() == response)
            .filter_map(|f| f.result.as_ref())
            .collect()
    }

    /// Successful quantile results for one response at one τ, in grid order.
    pub fn quantile_results(&self, response: Response, tau: f64) -> Vec<&RegressionResult> {
        self.quantile_fits
            .iter()
            .filter(|f| f.task.spec.response() == response && f.task.method == Method::Quantile { tau })
            .filter_map(|f| f.result.as_ref())
            .collect()
    }

    /// Canonical serialization; identical runs give identical bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything a study produces.
#[derive(Debug, Clone)]
pub struct StudyRun {
    pub bundle: ResultsBundle,
    pub frame: StudyFrame,
    pub detrend: DetrendModel,
    pub records: Vec<HourlyRecord>,
}

/// Detrends the system price, derives EWMSD volatility of the detrended
/// price and per-source penetration.
pub fn build_frame(records: &[HourlyRecord], span: f64) -> Result<(StudyFrame, DetrendModel)> {
    let model = fit_detrend(records)?;
    let timestamps: Vec<NaiveDateTime> = records.iter().map(|r| r.timestamp).collect();
    let mec: Vec<f64> = records.iter().map(|r| r.mec).collect();
    let price = model.detrend_values(&timestamps, &mec);
    let volatility = ewmsd(&price, span)?;
    let mut hydro = Vec::with_capacity(records.len());
    let mut solar = Vec::with_capacity(records.len());
    let mut wind = Vec::with_capacity(records.len());
    for r in records {
        let p = penetration(&r.generation, r.total_gen)?;
        hydro.push(p.hydro);
        solar.push(p.solar);
        wind.push(p.wind);
    }
    let frame = StudyFrame::new(timestamps, price, volatility, hydro, solar, wind)?;
    Ok((frame, model))
}

/// Rows whose detrended price lies within the inner `trim` fraction.
fn trim_mask(frame: &StudyFrame, trim: f64) -> Vec<bool> {
    let price = frame.response(Response::DetrendedPrice);
    let mut sorted = price.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - trim) / 2.0;
    let lo = empirical_quantile(&sorted, tail);
    let hi = empirical_quantile(&sorted, 1.0 - tail);
    price.iter().map(|&v| v >= lo && v <= hi).collect()
}

/// Design matrix of `spec` on the frame: intercept then regressors.
pub fn task_design(frame: &StudyFrame, spec: &ModelSpec) -> DMatrix<f64> {
    spec.design(|r| frame.regressor(r).to_vec())
}

fn run_task(frame: &StudyFrame, task: &FitTask, config: &StudyConfig) -> FitRecord {
    let design = task_design(frame, &task.spec);
    let y = frame.response(task.spec.response());
    let outcome = match task.method {
        Method::Ols => fit_ols(&design, y).map(|fit| (fit.into_result(task.spec.clone()), None)),
        Method::Quantile { tau } => fit_quantile(&design, y, tau).and_then(|fit| {
            let inference = bootstrap_se(&design, y, tau, &fit.estimates, config.bootstrap_replicates, config.seed)?;
            Ok(quantile_result(task, &design, &fit, &inference))
        }),
    };
    match outcome {
        Ok((result, solver)) => FitRecord {
            task: task.clone(),
            result: Some(result),
            solver,
            error: None,
        },
        Err(e) => {
            warn!("fit {} failed: {e}", task.label());
            FitRecord {
                task: task.clone(),
                result: None,
                solver: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Fits every task concurrently; records come back in task order. Each
/// task depends only on the frame, its own spec and method, and the
/// configured bootstrap size and seed, so adding or removing tasks never
/// changes the others.
pub fn fit_tasks(frame: &StudyFrame, tasks: &[FitTask], config: &StudyConfig) -> Vec<FitRecord> {
    tasks.par_iter().map(|t| run_task(frame, t, config)).collect()
}

fn quantile_result(
    task: &FitTask,
    design: &DMatrix<f64>,
    fit: &crate::quantile::QuantileFit,
    inference: &BootstrapInference,
) -> (RegressionResult, Option<SolverSummary>) {
    let (n, p) = design.shape();
    let result = RegressionResult {
        spec: task.spec.clone(),
        method: task.method,
        coefficient_names: task.spec.coefficient_names(),
        estimates: fit.estimates.clone(),
        std_errors: inference.std_errors.clone(),
        p_values: inference.p_values.clone(),
        n_obs: n,
        residual_dof: n - p,
        degenerate: inference.degenerate,
    };
    let solver = SolverSummary {
        objective: fit.objective,
        iterations: fit.iterations,
        vertex: fit.vertex,
        bootstrap_replicates: inference.replicates,
        bootstrap_draws: inference.draws,
    };
    (result, Some(solver))
}

fn mwh_column(records: &[HourlyRecord], pick: impl Fn(&HourlyRecord) -> f64) -> Vec<f64> {
    records.iter().map(pick).collect()
}

/// Reads the configured inputs and runs the study.
pub fn run_study(config: &StudyConfig) -> Result<StudyRun> {
    config.validate()?;
    let ingested = ingest_files(&config.prices, &config.generation)?;
    info!(
        "ingested {} hourly rows from {} and {}",
        ingested.records.len(),
        config.prices.display(),
        config.generation.display()
    );
    run_study_on_records(ingested.records, Some(ingested.report), config)
}

/// Runs the study on already joined hourly records.
pub fn run_study_on_records(
    records: Vec<HourlyRecord>,
    ingest: Option<IngestReport>,
    config: &StudyConfig,
) -> Result<StudyRun> {
    config.validate()?;
    if records.len() < MIN_STUDY_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} hourly rows after joining; at least {MIN_STUDY_ROWS} are required",
            records.len()
        )));
    }
    let joined_rows = records.len();
    let (mut frame, detrend) = build_frame(&records, config.ewmsd_span)?;
    let mut kept_records = records;
    if let Some(trim) = config.trim {
        let keep = trim_mask(&frame, trim);
        frame = frame.filter(&keep);
        let mut it = keep.iter();
        kept_records.retain(|_| *it.next().expect("mask matches records"));
    }

    let stats = {
        let hydro = mwh_column(&kept_records, |r| r.generation.hydro);
        let solar = mwh_column(&kept_records, |r| r.generation.solar);
        let wind = mwh_column(&kept_records, |r| r.generation.wind);
        let mut columns: Vec<(&str, &[f64])> = vec![("hydro_mwh", &hydro), ("solar_mwh", &solar), ("wind_mwh", &wind)];
        columns.extend(frame.columns());
        descriptive_stats(&columns)?
    };
    let correlation = correlation_matrix(&frame.columns())?;

    let specs = ModelSpec::study_specs(Response::DetrendedPrice);
    let mean_tasks = model_grid(&specs, &[], &Response::ALL);
    let quantile_tasks = model_grid(&specs, &config.quantiles, &Response::ALL);
    let mean_fits = fit_tasks(&frame, &mean_tasks, config);
    let quantile_fits = fit_tasks(&frame, &quantile_tasks, config);

    let failed_fits = mean_fits
        .iter()
        .chain(&quantile_fits)
        .filter(|f| f.error.is_some())
        .map(|f| f.task.label())
        .collect();
    let provenance = Provenance {
        config_hash: config.config_hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        ewmsd_span: config.ewmsd_span,
        quantiles: config.quantiles.clone(),
        bootstrap_replicates: config.bootstrap_replicates,
        seed: config.seed,
        trim: config.trim,
        joined_rows,
        trimmed_rows: joined_rows - frame.len(),
        fitted_rows: frame.len(),
        ingest,
        failed_fits,
    };
    Ok(StudyRun {
        bundle: ResultsBundle {
            descriptive_stats: stats,
            correlation,
            mean_fits,
            quantile_fits,
            provenance,
        },
        frame,
        detrend,
        records: kept_records,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn stats_csv(stats: &[Summary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["column", "n", "min", "max", "median", "mean", "std"])?;
    for s in stats {
        w.write_record([
            s.name.clone(),
            s.n.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.median.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
}

fn correlation_csv(c: &CorrelationMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(c.names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in c.names.iter().zip(&c.values) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
}

/// Writes the bundle directory: summary tables, one coefficient table per
/// response (and per τ for quantile fits), provenance and the full bundle
/// as JSON, the analysis frame and the fitted calendar model.
pub fn write_bundle(run: &StudyRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bundle = &run.bundle;
    write_file(&dir.join("stats.csv"), stats_csv(&bundle.descriptive_stats)?)?;
    write_file(&dir.join("correlation.csv"), correlation_csv(&bundle.correlation)?)?;
    for response in Response::ALL {
        let table = crate::report::render_table(&bundle.mean_results(response))?;
        write_file(&dir.join(format!("mean_{}.csv", response.tag())), table.csv)?;
        for &tau in &bundle.provenance.quantiles {
            let table = crate::report::render_table(&bundle.quantile_results(response, tau))?;
            write_file(&dir.join(format!("qr_{}_tau{tau}.csv", response.tag())), table.csv)?;
        }
    }
    write_file(&dir.join("provenance.json"), serde_json::to_string_pretty(&bundle.provenance)?)?;
    write_file(&dir.join("bundle.json"), bundle.to_json()?)?;
    let mut frame_csv = Vec::new();
    run.frame.write_csv(&mut frame_csv)?;
    write_file(&dir.join("frame.csv"), frame_csv)?;
    write_file(&dir.join("detrend_model.json"), serde_json::to_string_pretty(&run.detrend)?)?;
    Ok(())
}

/// Reads `bundle.json` and `frame.csv` back from a bundle directory.
pub fn read_bundle(dir: &Path) -> Result<(ResultsBundle, StudyFrame)> {
    let path = dir.join("bundle.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bundle = serde_json::from_str(&text)?;
    let path = dir.join("frame.csv");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let frame = StudyFrame::read_csv(file)?;
    Ok((bundle, frame))
}

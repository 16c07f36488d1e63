//! Acceptance suite. Prints one `PASS`/`FAIL`/`SKIP` line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use hydroprice::calendar::{season_of, CalendarFeatures, DetrendModel};
use hydroprice::fixture::{synthetic_fixture, write_fixture, FixtureSpec, PlantedCoefficients, MIN_FIXTURE_HOURS};
use hydroprice::ingest::{ingest, ingest_files, HourlyRecord};
use hydroprice::metrics::ewmsd;
use hydroprice::quantile::{bootstrap_se, fit_quantile, subgradient_violation};
use hydroprice::regression::{fit_ols, Method, ModelSpec, Regressor, Response};
use hydroprice::study::{build_frame, run_study, run_study_on_records, task_design, write_bundle, StudyConfig, StudyRun};

type Check = (bool, String);

fn fixture_records(seed: u64, hours: usize) -> Vec<HourlyRecord> {
    let fx = synthetic_fixture(&FixtureSpec::new(seed, hours)).expect("fixture");
    ingest(fx.prices, fx.readings, 0).expect("ingest").records
}

fn ols_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0;
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let n = 20 + (seed as usize * 37) % 181;
        let p = 1 + (seed as usize) % 6;
        let (x, y) = random_instance(&mut r, n, p);
        let fit = fit_ols(&x.to_nalgebra(), &y).expect("ols fit");
        let oracle = ols_oracle(&x, &y);
        let mut ok = fit.residual_dof == oracle.dof;
        for j in 0..p {
            let de = (fit.estimates[j] - oracle.estimates[j]).abs() / oracle.estimates[j].abs().max(1.0);
            let ds = (fit.std_errors[j] - oracle.std_errors[j]).abs() / oracle.std_errors[j].abs().max(1.0);
            let dp = (fit.p_values[j] - oracle.p_values[j]).abs();
            worst = (worst.0.max(de), worst.1.max(ds), worst.2.max(dp));
            ok &= de <= 1e-8 && ds <= 1e-8 && dp <= 1e-9;
        }
        failures += usize::from(!ok);
    }
    let elapsed = start.elapsed();
    (
        failures == 0 && elapsed < Duration::from_secs(5),
        format!(
            "100 instances, {failures} mismatched; worst coef {:.1e}, se {:.1e}, p {:.1e}; {elapsed:.2?}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn qr_oracle_equivalence() -> Check {
    let start = Instant::now();
    let taus = [0.25, 0.5, 0.9];
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng(1000 + seed);
        let n = 10 + (seed as usize * 7) % 21;
        let p = 1 + (seed as usize) % 3;
        let tau = taus[seed as usize % 3];
        let (x, y) = random_instance(&mut r, n, p);
        let fit = fit_quantile(&x.to_nalgebra(), &y, tau).expect("quantile fit");
        let (best, _) = qr_brute_force(&x, &y, tau);
        worst = worst.max((fit.objective - best).abs() / best.max(1e-12));
    }
    let elapsed = start.elapsed();
    (
        worst <= 1e-6 && elapsed < Duration::from_secs(30),
        format!("50 instances, worst relative objective gap {worst:.1e}; {elapsed:.2?}"),
    )
}

/// Residuals within `1e-6` of zero count as zero; the bound may be exceeded
/// by at most `1e-6` of the column's absolute sum.
fn qr_subgradient_on_grid(run: &StudyRun) -> Check {
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for record in &run.bundle.quantile_fits {
        let Method::Quantile { tau } = record.task.method else {
            continue;
        };
        let Some(result) = &record.result else {
            return (false, format!("fit {} failed", record.task.label()));
        };
        let design = task_design(&run.frame, &record.task.spec);
        let y = run.frame.response(record.task.spec.response());
        let scale = (0..design.ncols())
            .map(|j| design.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let v = subgradient_violation(&design, y, tau, &result.estimates, 1e-6) / scale;
        worst = worst.max(v);
        checked += 1;
    }
    (
        checked == 32 && worst <= 1e-6,
        format!("{checked} quantile fits, worst scaled violation {worst:.2e}"),
    )
}

fn ewmsd_equivalence() -> Check {
    let mut r = rng(42);
    let x: Vec<f64> = (0..10_000).map(|_| normal(&mut r)).collect();
    let span = 24.0;
    let stream = ewmsd(&x, span).expect("ewmsd");
    let direct = ewmsd_direct(&x, span);
    let diff = stream.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let shifted: Vec<f64> = x.iter().map(|v| v + 1000.0).collect();
    let shift = ewmsd(&shifted, span).expect("ewmsd");
    let shift_diff = shift.iter().zip(&stream).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut scale_diff = 0.0f64;
    for k in [3.7, -2.0, 1e-3] {
        let scaled: Vec<f64> = x.iter().map(|v| k * v).collect();
        let s = ewmsd(&scaled, span).expect("ewmsd");
        for (a, b) in s.iter().zip(&stream) {
            scale_diff = scale_diff.max((a - k.abs() * b).abs() / (k.abs() * b.max(1.0)));
        }
    }
    (
        diff <= 1e-10 && shift_diff <= 1e-9 && scale_diff <= 1e-12,
        format!(
            "n = 10000: direct {diff:.1e} (≤ 1e-10), shift by 1000 {shift_diff:.1e} (≤ 1e-9), scale {scale_diff:.1e} (≤ 1e-12 rel)"
        ),
    )
}

/// The calendar design spans the hour × season cells and the weekend
/// indicator, so residual means vanish on each of those groups.
fn detrend_orthogonality() -> Check {
    let records = fixture_records(5, MIN_FIXTURE_HOURS);
    let ts: Vec<_> = records.iter().map(|r| r.timestamp).collect();
    let mec: Vec<f64> = records.iter().map(|r| r.mec).collect();
    let model = DetrendModel::fit(&ts, &mec).expect("detrend");
    let detrended = model.detrend_values(&ts, &mec);
    let gm = model.grand_mean();

    let mut cell_sum = std::collections::BTreeMap::<(u32, String), (f64, usize)>::new();
    let mut weekend_sum = (0.0, 0usize);
    for (t, d) in ts.iter().zip(&detrended) {
        let f = CalendarFeatures::of(*t);
        let e = cell_sum.entry((f.hour, season_of(*t).to_string())).or_insert((0.0, 0));
        e.0 += d - gm;
        e.1 += 1;
        if f.weekend {
            weekend_sum.0 += d - gm;
            weekend_sum.1 += 1;
        }
    }
    let worst_cell = cell_sum
        .values()
        .map(|(s, n)| (s / *n as f64).abs())
        .fold((weekend_sum.0 / weekend_sum.1 as f64).abs(), f64::max);

    let again = DetrendModel::fit(&ts, &detrended).expect("detrend").detrend_values(&ts, &detrended);
    let idem = again.iter().zip(&detrended).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (
        worst_cell <= 1e-8 && idem <= 1e-8 && cell_sum.len() == 96,
        format!(
            "{} hour×season cells + weekend: worst mean {worst_cell:.1e}; re-detrend change {idem:.1e}",
            cell_sum.len()
        ),
    )
}

fn coefficient_recovery() -> Check {
    let start = Instant::now();
    let truth = PlantedCoefficients::default();
    let planted = [truth.hydro, truth.wind, truth.solar];
    let spec = ModelSpec::new(
        Response::DetrendedPrice,
        vec![Regressor::Hydro, Regressor::Wind, Regressor::Solar],
    )
    .expect("valid model");
    let mut recovered = 0;
    for seed in 0..100u64 {
        let records = fixture_records(10_000 + seed, 8760);
        let (frame, _) = build_frame(&records, 24.0).expect("frame");
        let fit = fit_ols(&task_design(&frame, &spec), frame.response(Response::DetrendedPrice)).expect("ols");
        let ok = (0..3).all(|k| (fit.estimates[k + 1] - planted[k]).abs() <= 3.0 * fit.std_errors[k + 1]);
        recovered += usize::from(ok);
    }
    let elapsed = start.elapsed();
    (
        recovered >= 95 && elapsed < Duration::from_secs(120),
        format!("{recovered}/100 runs within 3 SE on all of hydro, wind, solar; {elapsed:.1?}"),
    )
}

fn real_data_signs() -> Option<Check> {
    let dir = std::env::var_os("HYDROPRICE_ISONE_DIR")?;
    let dir = Path::new(&dir);
    let out = match ingest_files(&dir.join("prices.csv"), &dir.join("generation.csv")) {
        Ok(out) => out,
        Err(e) => return Some((false, format!("ingest failed: {e}"))),
    };
    let (frame, _) = match build_frame(&out.records, 24.0) {
        Ok(v) => v,
        Err(e) => return Some((false, format!("frame failed: {e}"))),
    };
    let spec = ModelSpec::new(
        Response::DetrendedPrice,
        vec![Regressor::Hydro, Regressor::Wind, Regressor::Solar],
    )
    .expect("valid model");
    let fit = match fit_quantile(&task_design(&frame, &spec), frame.response(Response::DetrendedPrice), 0.9) {
        Ok(f) => f,
        Err(e) => return Some((false, format!("fit failed: {e}"))),
    };
    let b = &fit.estimates;
    Some((
        b[1] < 0.0 && b[2] < 0.0 && b[3] < 0.0,
        format!("tau 0.9 joint price model: hydro {:.2}, wind {:.2}, solar {:.2}", b[1], b[2], b[3]),
    ))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .expect("bundle dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).expect("read"))
        })
        .collect();
    files.sort();
    files
}

fn grid_and_determinism() -> Check {
    let tmp = tempfile::tempdir().expect("tempdir");
    let fx = synthetic_fixture(&FixtureSpec::new(7, MIN_FIXTURE_HOURS)).expect("fixture");
    let config_path = write_fixture(&fx, &tmp.path().join("fx")).expect("write fixture");
    let mut config = StudyConfig::load(&config_path).expect("config");
    config.bootstrap_replicates = 100;
    let mut outputs = Vec::new();
    let mut counts = (0, 0, 0);
    for k in 0..2 {
        let run = run_study(&config).expect("study");
        counts = (run.bundle.mean_fits.len(), run.bundle.quantile_fits.len(), run.bundle.failures().count());
        let dir = tmp.path().join(format!("run{k}"));
        write_bundle(&run, &dir).expect("write bundle");
        outputs.push(dir_bytes(&dir));
    }
    let identical = outputs[0] == outputs[1];
    (
        counts == (8, 32, 0) && identical,
        format!(
            "{} mean + {} quantile fits, {} failed; two runs byte-identical: {identical} ({} files)",
            counts.0,
            counts.1,
            counts.2,
            outputs[0].len()
        ),
    )
}

fn full_scale_runtime() -> (Check, Option<StudyRun>) {
    let records = fixture_records(2024, 61_368);
    let spec = ModelSpec::new(
        Response::DetrendedPrice,
        vec![Regressor::Hydro, Regressor::Wind, Regressor::Solar],
    )
    .expect("valid model");
    let (frame, _) = build_frame(&records, 24.0).expect("frame");
    let start = Instant::now();
    let single = fit_quantile(&task_design(&frame, &spec), frame.response(Response::DetrendedPrice), 0.9);
    let single_time = start.elapsed();
    if let Err(e) = single {
        return ((false, format!("single fit failed: {e}")), None);
    }
    let config = StudyConfig {
        bootstrap_replicates: 200,
        ..StudyConfig::default()
    };
    let start = Instant::now();
    let run = match run_study_on_records(records, None, &config) {
        Ok(run) => run,
        Err(e) => return ((false, format!("study failed: {e}")), None),
    };
    let study_time = start.elapsed();
    let ok = single_time < Duration::from_secs(5)
        && study_time < Duration::from_secs(600)
        && run.bundle.fit_count() == 40
        && run.bundle.failures().count() == 0;
    (
        (
            ok,
            format!(
                "61368 rows: single fit {single_time:.2?} (< 5 s); 40-fit study with B = 200 {study_time:.1?} (< 10 min)"
            ),
        ),
        Some(run),
    )
}

fn bootstrap_sanity() -> Check {
    let start = Instant::now();
    let n = 500;
    let asymptotic = (std::f64::consts::PI / 2.0).sqrt() / (n as f64).sqrt();
    let design = nalgebra::DMatrix::from_element(n, 1, 1.0);
    let mut within = 0;
    for trial in 0..100u64 {
        let mut r = rng(50_000 + trial);
        let y: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let fit = fit_quantile(&design, &y, 0.5).expect("median");
        let se = bootstrap_se(&design, &y, 0.5, &fit.estimates, 1000, trial).expect("bootstrap").std_errors[0];
        within += usize::from((se - asymptotic).abs() <= 0.2 * asymptotic);
    }
    (
        within >= 90,
        format!(
            "{within}/100 trials within 20% of {asymptotic:.4}; {:.1?}",
            start.elapsed()
        ),
    )
}

fn report(name: &str, outcome: Option<Check>, failed: &mut Vec<String>) {
    match outcome {
        Some((true, detail)) => println!("PASS  {name}: {detail}"),
        Some((false, detail)) => {
            println!("FAIL  {name}: {detail}");
            failed.push(name.to_string());
        }
        None => println!("SKIP  {name}: HYDROPRICE_ISONE_DIR not set"),
    }
}

fn main() {
    let mut failed = Vec::new();
    report("ols_oracle_equivalence", Some(ols_oracle_equivalence()), &mut failed);
    report("qr_oracle_equivalence", Some(qr_oracle_equivalence()), &mut failed);
    report("ewmsd_equivalence", Some(ewmsd_equivalence()), &mut failed);
    report("detrend_orthogonality", Some(detrend_orthogonality()), &mut failed);
    report("coefficient_recovery", Some(coefficient_recovery()), &mut failed);
    report("real_data_sign_agreement", real_data_signs(), &mut failed);
    report("grid_cardinality_and_determinism", Some(grid_and_determinism()), &mut failed);
    let (runtime, run) = full_scale_runtime();
    report("full_scale_runtime", Some(runtime), &mut failed);
    let subgradient = match &run {
        Some(run) => qr_subgradient_on_grid(run),
        None => (false, "full-scale study did not complete".to_string()),
    };
    report("qr_subgradient_on_study_grid", Some(subgradient), &mut failed);
    report("bootstrap_sanity", Some(bootstrap_sanity()), &mut failed);
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}

//! Tables and figures rendered from a results bundle.
//!
//! Rendering never recomputes a statistic: every printed number is a bundle
//! value after the documented rounding (estimates and standard errors to two
//! decimals, p-values to two as well, so a very small p-value prints as
//! `0.00`). SVG output holds no timestamps or generated identifiers, so
//! identical input gives identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::calendar::{season_of, Season};
use crate::error::{Error, Result};
use crate::metrics::{empirical_quantile, StudyFrame};
use crate::regression::{CorrelationMatrix, Method, RegressionResult, Regressor, Response};
use crate::study::ResultsBundle;

/// Normal multiplier for 95% bands.
pub const CI_MULTIPLIER: f64 = 1.96;

/// Inner fraction kept for the price violin data.
pub const PRICE_VIOLIN_TRIM: f64 = 0.9999;

/// Inner fraction kept for the other violin data.
pub const DEFAULT_VIOLIN_TRIM: f64 = 0.99;

pub const TABLE_HEADER: [&str; 5] = ["model", "coefficient", "estimate", "std_error", "p_value"];

/// A coefficient table as full-precision CSV and as aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub csv: String,
    pub text: String,
}

/// Two decimals; negative zero prints as `0.00`.
pub fn format_estimate(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

/// Two decimals; the stored value keeps full precision.
pub fn format_p_value(p: f64) -> String {
    format!("{p:.2}")
}

fn model_name(r: &RegressionResult) -> String {
    match r.method {
        Method::Ols => format!("{} ~ {}", r.spec.response().tag(), r.spec.label()),
        Method::Quantile { tau } => format!("{} ~ {} (tau = {tau})", r.spec.response().tag(), r.spec.label()),
    }
}

/// One row per coefficient, grouped by model in input order.
pub fn render_table(results: &[&RegressionResult]) -> Result<RenderedTable> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER)?;
    let mut rows: Vec<[String; 5]> = vec![["Model", "Coefficient", "Estimate", "Std. Error", "P-value"].map(String::from)];
    for r in results {
        let name = model_name(r);
        for (j, coef) in r.coefficient_names.iter().enumerate() {
            w.write_record([
                name.clone(),
                coef.clone(),
                r.estimates[j].to_string(),
                r.std_errors[j].to_string(),
                r.p_values[j].to_string(),
            ])?;
            rows.push([
                if j == 0 { name.clone() } else { String::new() },
                coef.clone(),
                format_estimate(r.estimates[j]),
                format_estimate(r.std_errors[j]),
                format_p_value(r.p_values[j]),
            ]);
        }
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv");

    let mut widths = [0usize; 5];
    for row in &rows {
        for (k, cell) in row.iter().enumerate() {
            widths[k] = widths[k].max(cell.chars().count());
        }
    }
    let mut text = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                if k < 2 {
                    format!("{cell:<w$}", w = widths[k])
                } else {
                    format!("{cell:>w$}", w = widths[k])
                }
            })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
        if i == 0 {
            let rule = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            text.push_str(&"-".repeat(rule));
            text.push('\n');
        }
    }
    Ok(RenderedTable { csv, text })
}

/// One coefficient across quantiles, with its least-squares counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePoint {
    pub tau: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePlotSeries {
    pub coefficient: String,
    pub points: Vec<QuantilePoint>,
    pub ols_estimate: f64,
    pub ols_lower: f64,
    pub ols_upper: f64,
}

impl QuantilePlotSeries {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Parameter(format!(
                "quantile plot for {} needs at least 2 points, got {}",
                self.coefficient,
                self.points.len()
            )));
        }
        if self.points.windows(2).any(|w| !(w[0].tau < w[1].tau)) {
            return Err(Error::Parameter(format!(
                "quantile levels for {} are not strictly increasing",
                self.coefficient
            )));
        }
        let ordered = |lo: f64, mid: f64, hi: f64| lo <= mid && mid <= hi;
        if !self.points.iter().all(|p| ordered(p.lower, p.estimate, p.upper))
            || !ordered(self.ols_lower, self.ols_estimate, self.ols_upper)
        {
            return Err(Error::Parameter(format!(
                "interval for {} does not contain its estimate",
                self.coefficient
            )));
        }
        Ok(())
    }
}

fn band(estimate: f64, se: f64) -> (f64, f64) {
    (estimate - CI_MULTIPLIER * se, estimate + CI_MULTIPLIER * se)
}

/// Plot series for every coefficient of the joint (all-regressor) model of
/// one response.
pub fn quantile_plot_series(bundle: &ResultsBundle, response: Response) -> Result<Vec<QuantilePlotSeries>> {
    let joint = [Regressor::Hydro, Regressor::Wind, Regressor::Solar];
    let is_joint = |r: &RegressionResult| r.spec.response() == response && r.spec.regressors() == joint;
    let ols = bundle
        .mean_fits
        .iter()
        .filter_map(|f| f.result.as_ref())
        .find(|r| is_joint(r))
        .ok_or_else(|| Error::Parameter(format!("no joint mean fit for {}", response.tag())))?;
    let quantile: Vec<&RegressionResult> = bundle
        .quantile_fits
        .iter()
        .filter_map(|f| f.result.as_ref())
        .filter(|r| is_joint(r))
        .collect();
    Ok(ols
        .coefficient_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (ols_lower, ols_upper) = band(ols.estimates[j], ols.std_errors[j]);
            QuantilePlotSeries {
                coefficient: name.clone(),
                points: quantile
                    .iter()
                    .filter_map(|r| match r.method {
                        Method::Quantile { tau } => {
                            let (lower, upper) = band(r.estimates[j], r.std_errors[j]);
                            Some(QuantilePoint {
                                tau,
                                estimate: r.estimates[j],
                                lower,
                                upper,
                            })
                        }
                        Method::Ols => None,
                    })
                    .collect(),
                ols_estimate: ols.estimates[j],
                ols_lower,
                ols_upper,
            }
        })
        .collect())
}

const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One panel per coefficient: the least-squares estimate as a solid line
/// with a dashed 95% band, quantile estimates as dots joined by a line, and
/// a shaded ±1.96·SE region around them.
pub fn render_quantile_plot(series: &[QuantilePlotSeries]) -> Result<String> {
    for s in series {
        s.validate()?;
    }
    let width = MARGIN + series.len() as f64 * (PANEL_W + MARGIN);
    let height = PANEL_H + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, s) in series.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let tau_lo = s.points[0].tau;
        let tau_hi = s.points[s.points.len() - 1].tau;
        let mut v_lo = s.points.iter().map(|p| p.lower).fold(s.ols_lower, f64::min);
        let mut v_hi = s.points.iter().map(|p| p.upper).fold(s.ols_upper, f64::max);
        if v_hi - v_lo < 1e-12 {
            v_lo -= 1.0;
            v_hi += 1.0;
        }
        let pad = 0.05 * (v_hi - v_lo);
        let (v_lo, v_hi) = (v_lo - pad, v_hi + pad);
        let sx = |tau: f64| x0 + (tau - tau_lo) / (tau_hi - tau_lo) * PANEL_W;
        let sy = |v: f64| y0 + (v_hi - v) / (v_hi - v_lo) * PANEL_H;

        let _ = writeln!(svg, r#"<g class="panel">"#);
        let _ = writeln!(
            svg,
            r#"<rect x="{x0:.3}" y="{y0:.3}" width="{PANEL_W:.3}" height="{PANEL_H:.3}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 10.0,
            escape(&s.coefficient)
        );
        let mut region: Vec<String> = s.points.iter().map(|p| format!("{:.3},{:.3}", sx(p.tau), sy(p.upper))).collect();
        region.extend(s.points.iter().rev().map(|p| format!("{:.3},{:.3}", sx(p.tau), sy(p.lower))));
        let _ = writeln!(
            svg,
            r#"<polygon class="qr-band" points="{}" fill="gray" fill-opacity="0.3" stroke="none"/>"#,
            region.join(" ")
        );
        for (v, class, dash) in [
            (s.ols_estimate, "ols", ""),
            (s.ols_lower, "ols-band", r#" stroke-dasharray="5,4""#),
            (s.ols_upper, "ols-band", r#" stroke-dasharray="5,4""#),
        ] {
            let _ = writeln!(
                svg,
                r#"<line class="{class}" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="red"{dash}/>"#,
                x0,
                sy(v),
                x0 + PANEL_W,
                sy(v)
            );
        }
        let line: Vec<String> = s.points.iter().map(|p| format!("{:.3},{:.3}", sx(p.tau), sy(p.estimate))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="qr" points="{}" fill="none" stroke="black"/>"#,
            line.join(" ")
        );
        for p in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle class="qr-point" cx="{:.3}" cy="{:.3}" r="3" fill="black"/>"#,
                sx(p.tau),
                sy(p.estimate)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
                sx(p.tau),
                y0 + PANEL_H + 15.0,
                p.tau
            );
        }
        for v in [v_lo + pad, v_hi - pad] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                sy(v) + 4.0,
                format_estimate(v)
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Correlation heatmap: blue for negative, red for positive.
pub fn render_correlation_heatmap(c: &CorrelationMatrix) -> String {
    const CELL: f64 = 70.0;
    const LABEL: f64 = 140.0;
    let k = c.names.len() as f64;
    let size = LABEL + k * CELL + 10.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, name) in c.names.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            LABEL - 6.0,
            LABEL + (i as f64 + 0.5) * CELL + 4.0,
            escape(name)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="start" transform="rotate(-45 {:.3} {:.3})">{}</text>"#,
            LABEL + (i as f64 + 0.5) * CELL,
            LABEL - 6.0,
            LABEL + (i as f64 + 0.5) * CELL,
            LABEL - 6.0,
            escape(name)
        );
    }
    for (i, row) in c.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = v.clamp(-1.0, 1.0).abs();
            let fade = (255.0 * (1.0 - t)).round() as u8;
            let color = if v >= 0.0 {
                format!("rgb(255,{fade},{fade})")
            } else {
                format!("rgb({fade},{fade},255)")
            };
            let x = LABEL + j as f64 * CELL;
            let y = LABEL + i as f64 * CELL;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{CELL:.3}" height="{CELL:.3}" fill="{color}" stroke="white"/>"#
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
                x + CELL / 2.0,
                y + CELL / 2.0 + 4.0,
                format_estimate(v)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-season trimmed values plus a per-season summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolinExport {
    pub column: String,
    pub trim: f64,
    pub groups: BTreeMap<Season, Vec<f64>>,
    pub data_csv: String,
    pub summary_csv: String,
}

/// Within each season, drops values outside the empirical
/// `(1 − trim)/2` and `1 − (1 − trim)/2` quantiles. Seasons with no rows are
/// skipped.
pub fn export_violin_data(frame: &StudyFrame, column: &str, trim: f64) -> Result<ViolinExport> {
    if !(trim > 0.9 && trim <= 1.0) {
        return Err(Error::Parameter(format!("trim must lie in (0.9, 1], got {trim}")));
    }
    let values = frame
        .column(column)
        .ok_or_else(|| Error::Parameter(format!("unknown frame column {column}")))?;
    let mut by_season: BTreeMap<Season, Vec<f64>> = BTreeMap::new();
    for (&ts, &v) in frame.timestamps().iter().zip(values) {
        by_season.entry(season_of(ts)).or_default().push(v);
    }
    let tail = (1.0 - trim) / 2.0;
    let mut data = csv::Writer::from_writer(Vec::new());
    data.write_record(["season", column])?;
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["season", "n", "retained", "lower", "q25", "median", "q75", "upper"])?;
    let mut groups = BTreeMap::new();
    for season in Season::ALL {
        let Some(raw) = by_season.get(&season) else {
            warn!("violin {column}: no rows in {season}, group skipped");
            continue;
        };
        let mut sorted = raw.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = if trim == 1.0 {
            (sorted[0], sorted[sorted.len() - 1])
        } else {
            (empirical_quantile(&sorted, tail), empirical_quantile(&sorted, 1.0 - tail))
        };
        let kept: Vec<f64> = raw.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
        for v in &kept {
            data.write_record([season.as_str().to_string(), v.to_string()])?;
        }
        let mut kept_sorted = kept.clone();
        kept_sorted.sort_by(f64::total_cmp);
        summary.write_record([
            season.as_str().to_string(),
            raw.len().to_string(),
            kept.len().to_string(),
            lo.to_string(),
            empirical_quantile(&kept_sorted, 0.25).to_string(),
            empirical_quantile(&kept_sorted, 0.5).to_string(),
            empirical_quantile(&kept_sorted, 0.75).to_string(),
            hi.to_string(),
        ])?;
        groups.insert(season, kept);
    }
    let finish = |w: csv::Writer<Vec<u8>>| String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8");
    Ok(ViolinExport {
        column: column.to_string(),
        trim,
        groups,
        data_csv: finish(data),
        summary_csv: finish(summary),
    })
}

/// Mean penetration per season, one row per season present.
pub fn seasonal_penetration_csv(frame: &StudyFrame) -> Result<String> {
    let regressors = [Regressor::Hydro, Regressor::Solar, Regressor::Wind];
    let mut sums: BTreeMap<Season, ([f64; 3], usize)> = BTreeMap::new();
    for (i, &ts) in frame.timestamps().iter().enumerate() {
        let entry = sums.entry(season_of(ts)).or_insert(([0.0; 3], 0));
        for (k, &r) in regressors.iter().enumerate() {
            entry.0[k] += frame.regressor(r)[i];
        }
        entry.1 += 1;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["season".to_string(), "hours".to_string()];
    header.extend(regressors.iter().map(|r| format!("mean_{}", r.column_name())));
    w.write_record(&header)?;
    for season in Season::ALL {
        if let Some((s, n)) = sums.get(&season) {
            let mut row = vec![season.as_str().to_string(), n.to_string()];
            row.extend(s.iter().map(|v| (v / *n as f64).to_string()));
            w.write_record(&row)?;
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"))
}

/// All coefficient tables as aligned text, one block per response and method.
pub fn render_all_tables(bundle: &ResultsBundle) -> Result<String> {
    let mut out = String::new();
    for response in Response::ALL {
        let _ = writeln!(out, "Mean effects on {}\n", response.column_name());
        out.push_str(&render_table(&bundle.mean_results(response))?.text);
        out.push('\n');
        for &tau in &bundle.provenance.quantiles {
            let _ = writeln!(out, "Quantile effects on {} at tau = {tau}\n", response.column_name());
            out.push_str(&render_table(&bundle.quantile_results(response, tau))?.text);
            out.push('\n');
        }
    }
    Ok(out)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `tables.txt`, the quantile plots, the correlation heatmap, the
/// violin exports and the seasonal penetration table into `dir`.
pub fn write_report(bundle: &ResultsBundle, frame: &StudyFrame, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("tables.txt"), render_all_tables(bundle)?)?;
    if bundle.provenance.quantiles.len() >= 2 {
        for response in Response::ALL {
            let svg = render_quantile_plot(&quantile_plot_series(bundle, response)?)?;
            write_file(&dir.join(format!("fig_qr_{}.svg", response.tag())), svg)?;
        }
    } else {
        warn!("fewer than two quantiles configured; quantile plots skipped");
    }
    write_file(&dir.join("fig_correlation.svg"), render_correlation_heatmap(&bundle.correlation))?;
    for (name, _) in frame.columns() {
        let trim = if name == Response::DetrendedPrice.column_name() {
            PRICE_VIOLIN_TRIM
        } else {
            DEFAULT_VIOLIN_TRIM
        };
        let export = export_violin_data(frame, name, trim)?;
        write_file(&dir.join(format!("violin_{name}.csv")), export.data_csv)?;
        write_file(&dir.join(format!("violin_{name}_summary.csv")), export.summary_csv)?;
    }
    write_file(&dir.join("seasonal_penetration.csv"), seasonal_penetration_csv(frame)?)?;
    Ok(())
}

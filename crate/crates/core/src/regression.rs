//! Ordinary least squares with classical inference, and the shared model and
//! result types used by both the mean-effect and quantile-effect fits.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::p_value_t;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Penetration regressor, measured in percentage points of hourly generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regressor {
    Hydro,
    Wind,
    Solar,
}

impl Regressor {
    pub fn column_name(self) -> &'static str {
        match self {
            Regressor::Hydro => "hydro_pct",
            Regressor::Wind => "wind_pct",
            Regressor::Solar => "solar_pct",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regressor::Hydro => "hydro",
            Regressor::Wind => "wind",
            Regressor::Solar => "solar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    DetrendedPrice,
    DetrendedVolatility,
}

impl Response {
    pub const ALL: [Response; 2] = [Response::DetrendedPrice, Response::DetrendedVolatility];

    pub fn column_name(self) -> &'static str {
        match self {
            Response::DetrendedPrice => "detrended_price",
            Response::DetrendedVolatility => "detrended_volatility",
        }
    }

    /// Short tag used in output file names.
    pub fn tag(self) -> &'static str {
        match self {
            Response::DetrendedPrice => "price",
            Response::DetrendedVolatility => "volatility",
        }
    }
}

/// A response plus an ordered, duplicate-free list of regressors. An intercept
/// is always included.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecRepr")]
pub struct ModelSpec {
    response: Response,
    regressors: Vec<Regressor>,
}

#[derive(Deserialize)]
struct ModelSpecRepr {
    response: Response,
    regressors: Vec<Regressor>,
}

impl TryFrom<ModelSpecRepr> for ModelSpec {
    type Error = Error;

    fn try_from(r: ModelSpecRepr) -> Result<Self> {
        ModelSpec::new(r.response, r.regressors)
    }
}

impl ModelSpec {
    pub fn new(response: Response, regressors: Vec<Regressor>) -> Result<Self> {
        if regressors.is_empty() {
            return Err(Error::Parameter("a model needs at least one regressor".into()));
        }
        for (i, r) in regressors.iter().enumerate() {
            if regressors[..i].contains(r) {
                return Err(Error::Parameter(format!("regressor {} listed twice", r.label())));
            }
        }
        Ok(ModelSpec {
            response,
            regressors,
        })
    }

    /// The four nested specifications: hydro, hydro + solar, hydro + wind,
    /// hydro + wind + solar.
    pub fn study_specs(response: Response) -> Vec<ModelSpec> {
        use Regressor::*;
        [vec![Hydro], vec![Hydro, Solar], vec![Hydro, Wind], vec![Hydro, Wind, Solar]]
            .into_iter()
            .map(|regs| ModelSpec::new(response, regs).expect("static specs are valid"))
            .collect()
    }

    pub fn response(&self) -> Response {
        self.response
    }

    pub fn regressors(&self) -> &[Regressor] {
        &self.regressors
    }

    pub fn with_response(&self, response: Response) -> ModelSpec {
        ModelSpec {
            response,
            regressors: self.regressors.clone(),
        }
    }

    /// Coefficient names, intercept first.
    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.regressors.iter().map(|r| r.column_name().to_string()))
            .collect()
    }

    /// e.g. `hydro + wind + solar`
    pub fn label(&self) -> String {
        self.regressors
            .iter()
            .map(|r| r.label())
            .collect::<Vec<_>>()
            .join(" + ")
    }

    /// Builds the `n × (1 + k)` design matrix from regressor columns.
    pub fn design(&self, column: impl Fn(Regressor) -> Vec<f64>) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = self.regressors.iter().map(|&r| column(r)).collect();
        let n = cols.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, 1 + cols.len(), |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ {}", self.response.column_name(), self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Ols,
    Quantile { tau: f64 },
}

/// One fitted model with its inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub spec: ModelSpec,
    pub method: Method,
    pub coefficient_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n_obs: usize,
    pub residual_dof: usize,
    /// Set when some standard error is exactly zero (perfect fit or identical
    /// bootstrap replicates).
    pub degenerate: bool,
}

/// Result of [`fit_ols`].
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub sigma2: f64,
    pub n_obs: usize,
    pub residual_dof: usize,
}

impl OlsFit {
    pub fn fitted(&self, response: &[f64]) -> Vec<f64> {
        response.iter().zip(&self.residuals).map(|(y, r)| y - r).collect()
    }

    pub fn into_result(self, spec: ModelSpec) -> RegressionResult {
        RegressionResult {
            coefficient_names: spec.coefficient_names(),
            degenerate: self.std_errors.iter().any(|&s| s == 0.0),
            spec,
            method: Method::Ols,
            estimates: self.estimates,
            std_errors: self.std_errors,
            p_values: self.p_values,
            n_obs: self.n_obs,
            residual_dof: self.residual_dof,
        }
    }
}

/// Least-squares solution by Householder QR.
pub(crate) struct QrSolution {
    pub beta: DVector<f64>,
    /// `R⁻¹`, so that `(XᵀX)⁻¹ = R⁻¹ R⁻ᵀ`.
    pub r_inv: DMatrix<f64>,
}

/// Solves `min ‖Xβ − y‖²` through a QR factorization, refusing designs whose
/// condition (largest over smallest singular value of R) exceeds
/// `1 / RANK_TOLERANCE`. `names` label columns in the collinearity error.
pub(crate) fn qr_least_squares(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    names: &dyn Fn(usize) -> String,
) -> Result<QrSolution> {
    let p = design.ncols();
    let qr = design.clone().qr();
    let r = qr.r();
    if let Some(column) = first_dependent_column(&r) {
        return Err(Error::Collinear {
            column,
            name: names(column),
        });
    }
    let mut qty = response.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Collinear {
            column: p - 1,
            name: names(p - 1),
        })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .expect("R checked non-singular");
    Ok(QrSolution { beta, r_inv })
}

fn is_rank_deficient(r: &DMatrix<f64>) -> bool {
    if r.iter().any(|v| !v.is_finite()) {
        return true;
    }
    let sv = r.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    !(max > 0.0) || min <= RANK_TOLERANCE * max
}

/// With an unpivoted QR the leading `k × k` block of R spans the first `k`
/// columns, and its condition number can only grow with `k`, so the first
/// block that fails the tolerance names the offending column.
fn first_dependent_column(r: &DMatrix<f64>) -> Option<usize> {
    if !is_rank_deficient(r) {
        return None;
    }
    (1..=r.ncols())
        .find(|&k| is_rank_deficient(&r.view((0, 0), (k, k)).into_owned()))
        .map(|k| k - 1)
}

/// Fits `y = Xβ + ε` by least squares with homoskedastic standard errors
/// `σ̂² (XᵀX)⁻¹`, `σ̂² = RSS / (n − p)`, and two-sided t-test p-values.
pub fn fit_ols(design: &DMatrix<f64>, response: &[f64]) -> Result<OlsFit> {
    fit_ols_named(design, response, &|j| format!("x{j}"))
}

pub(crate) fn fit_ols_named(
    design: &DMatrix<f64>,
    response: &[f64],
    names: &dyn Fn(usize) -> String,
) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::Parameter(format!(
            "design has {n} rows but response has {}",
            response.len()
        )));
    }
    if p == 0 || n <= p {
        return Err(Error::InsufficientData(format!(
            "need more observations than coefficients (n = {n}, p = {p})"
        )));
    }
    if response.iter().chain(design.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("design and response must be finite".into()));
    }
    let y = DVector::from_column_slice(response);
    let sol = qr_least_squares(design, &y, names)?;
    let residuals = &y - design * &sol.beta;
    let rss = residuals.norm_squared();
    let dof = n - p;
    let sigma2 = rss / dof as f64;

    let estimates: Vec<f64> = sol.beta.iter().copied().collect();
    let std_errors: Vec<f64> = (0..p)
        .map(|j| (sigma2 * sol.r_inv.row(j).norm_squared()).sqrt())
        .collect();
    let t_stats: Vec<f64> = estimates
        .iter()
        .zip(&std_errors)
        .map(|(&b, &se)| t_ratio(b, se))
        .collect();
    let p_values = t_stats
        .iter()
        .map(|&t| p_value_t(t, dof as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(OlsFit {
        estimates,
        std_errors,
        t_stats,
        p_values,
        residuals: residuals.iter().copied().collect(),
        rss,
        sigma2,
        n_obs: n,
        residual_dof: dof,
    })
}

/// `estimate / se`, with a zero standard error read as an exact estimate.
pub(crate) fn t_ratio(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        estimate / se
    } else if estimate == 0.0 {
        0.0
    } else {
        estimate.signum() * f64::INFINITY
    }
}

/// Symmetric matrix of pairwise Pearson correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Pearson correlations by the two-pass (centered) formula.
pub fn correlation_matrix(columns: &[(&str, &[f64])]) -> Result<CorrelationMatrix> {
    let n = columns.first().map_or(0, |(_, c)| c.len());
    if n < 2 {
        return Err(Error::Domain("correlation needs at least two rows".into()));
    }
    let mut centered = Vec::with_capacity(columns.len());
    for (name, col) in columns {
        if col.len() != n {
            return Err(Error::Parameter(format!("column {name} has length {} (expected {n})", col.len())));
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss: f64 = dev.iter().map(|d| d * d).sum();
        if !(ss > 0.0) {
            return Err(Error::Domain(format!("column {name} is constant; correlation undefined")));
        }
        centered.push((dev, ss.sqrt()));
    }
    let k = columns.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in 0..i {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let r = (dot / (na * nb)).clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.iter().map(|(n, _)| n.to_string()).collect(),
        values,
    })
}

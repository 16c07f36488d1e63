//! Linear quantile regression.
//!
//! The τ-quantile fit minimizes the pinball loss `Σ ρ_τ(yᵢ − xᵢᵀβ)` with
//! `ρ_τ(r) = r (τ − 1[r < 0])`. Splitting each residual into positive and
//! negative parts turns this into a linear program; we solve its bounded dual
//!
//! ```text
//!     min  −yᵀa   s.t.  Xᵀa = (1 − τ) Xᵀ1,   0 ≤ a ≤ 1
//! ```
//!
//! with a primal-dual interior-point method using Mehrotra predictor-corrector
//! steps. The multipliers of the equality constraints are `−β`. Each Newton
//! step reduces to a `p × p` system `Xᵀ D⁻¹ X`, factored by Cholesky.
//!
//! When the iterates settle on a single vertex (exactly `p` residuals collapse
//! to zero), the vertex is recomputed from those `p` observations so that the
//! reported coefficients interpolate them to machine precision. On a flat
//! optimal face no such basis is identifiable and the interior point is
//! returned as is.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{qr_least_squares, t_ratio};
use crate::special::p_value_normal;

/// Default iteration cap for the interior-point solver.
pub const DEFAULT_MAX_ITERATIONS: usize = 200;
/// Relative tolerance on primal infeasibility, dual infeasibility and gap.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Default number of bootstrap replicates.
pub const DEFAULT_REPLICATES: usize = 1000;
/// Smallest accepted number of bootstrap replicates.
pub const MIN_REPLICATES: usize = 100;

const STEP_FRACTION: f64 = 0.99995;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("quantile level must lie in (0, 1), got {tau}")))
    }
}

/// `Σ rᵢ (τ − 1[rᵢ < 0])`.
pub fn pinball_loss(residuals: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(check_loss(residuals.iter().copied(), tau))
}

fn check_loss(residuals: impl Iterator<Item = f64>, tau: f64) -> f64 {
    residuals
        .map(|r| if r < 0.0 { r * (tau - 1.0) } else { r * tau })
        .sum()
}

/// A converged quantile fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    pub estimates: Vec<f64>,
    /// Pinball loss at `estimates`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True when the coefficients were recomputed from an identified basis.
    pub vertex: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Row-major copy of the design; the solver only ever walks rows.
struct Rows {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Rows {
    fn new(design: &DMatrix<f64>) -> Self {
        let (n, p) = design.shape();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            data.extend(design.row(i).iter());
        }
        Rows { n, p, data }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    /// `Xβ`
    fn times(&self, beta: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), beta);
        }
    }

    /// `Xᵀv`
    fn transpose_times(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x * vi;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place Cholesky of a small dense SPD matrix stored row-major.
/// Returns false if a pivot is not positive.
fn cholesky(m: &mut [f64], p: usize) -> bool {
    for j in 0..p {
        let mut d = m[j * p + j];
        for k in 0..j {
            d -= m[j * p + k] * m[j * p + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        m[j * p + j] = d;
        for i in j + 1..p {
            let mut s = m[i * p + j];
            for k in 0..j {
                s -= m[i * p + k] * m[j * p + k];
            }
            m[i * p + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

/// Newton direction together with the largest feasible step lengths along it.
struct Direction {
    da: Vec<f64>,
    dz: Vec<f64>,
    dw: Vec<f64>,
    dlambda: Vec<f64>,
    primal_step: f64,
    dual_step: f64,
}

impl Direction {
    fn new(n: usize, p: usize) -> Self {
        Direction {
            da: vec![0.0; n],
            dz: vec![0.0; n],
            dw: vec![0.0; n],
            dlambda: vec![0.0; p],
            primal_step: 0.0,
            dual_step: 0.0,
        }
    }
}

/// Interior-point state for the bounded dual LP. `a + s = 1` is kept as two
/// separately updated vectors so that values near either bound stay accurate.
struct State<'a> {
    x: &'a Rows,
    a: Vec<f64>,
    s: Vec<f64>,
    lambda: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    /// `D⁻¹` with `D = z/a + w/s`.
    inv_d: Vec<f64>,
    /// Dual residual `c − Aᵀλ − z + w` with `c = −y`, `Aᵀλ = Xλ`.
    rd: Vec<f64>,
}

impl State<'_> {
    /// Newton direction for complementarity right-hand sides
    /// `(r_az, r_sw) = comp(i, aᵢ, sᵢ, zᵢ, wᵢ)`, given the primal residual and
    /// the factored `Xᵀ D⁻¹ X`. `rt` is scratch space of length `n`.
    fn direction(
        &self,
        chol: &[f64],
        rp: &[f64],
        comp: impl Fn(usize, f64, f64, f64, f64) -> (f64, f64),
        rt: &mut [f64],
        out: &mut Direction,
    ) {
        let (n, p) = (self.x.n, self.x.p);
        // Xᵀ D⁻¹ r̃ + rp with r̃ = rd − r_az / a + r_sw / s
        out.dlambda.copy_from_slice(rp);
        for i in 0..n {
            let (r_az, r_sw) = comp(i, self.a[i], self.s[i], self.z[i], self.w[i]);
            rt[i] = self.rd[i] - r_az / self.a[i] + r_sw / self.s[i];
            let scaled = rt[i] * self.inv_d[i];
            for (o, x) in out.dlambda.iter_mut().zip(self.x.row(i)) {
                *o += x * scaled;
            }
        }
        cholesky_solve(chol, p, &mut out.dlambda);
        let mut primal = f64::INFINITY;
        let mut dual = f64::INFINITY;
        for i in 0..n {
            let (r_az, r_sw) = comp(i, self.a[i], self.s[i], self.z[i], self.w[i]);
            let da = (dot(self.x.row(i), &out.dlambda) - rt[i]) * self.inv_d[i];
            let dz = (r_az - self.z[i] * da) / self.a[i];
            let dw = (r_sw + self.w[i] * da) / self.s[i];
            if da < 0.0 {
                primal = primal.min(-self.a[i] / da);
            } else if da > 0.0 {
                primal = primal.min(self.s[i] / da);
            }
            if dz < 0.0 {
                dual = dual.min(-self.z[i] / dz);
            }
            if dw < 0.0 {
                dual = dual.min(-self.w[i] / dw);
            }
            out.da[i] = da;
            out.dz[i] = dz;
            out.dw[i] = dw;
        }
        out.primal_step = (STEP_FRACTION * primal).min(1.0);
        out.dual_step = (STEP_FRACTION * dual).min(1.0);
    }
}

/// Fits the τ-th conditional quantile `y ≈ Xβ` by minimizing pinball loss.
pub fn fit_quantile(design: &DMatrix<f64>, response: &[f64], tau: f64) -> Result<QuantileFit> {
    fit_quantile_with(design, response, tau, SolverOptions::default())
}

pub fn fit_quantile_with(
    design: &DMatrix<f64>,
    response: &[f64],
    tau: f64,
    options: SolverOptions,
) -> Result<QuantileFit> {
    check_tau(tau)?;
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

    // Least-squares warm start; also screens for collinearity.
    let y_vec = DVector::from_column_slice(response);
    let ols = qr_least_squares(design, &y_vec, &|j| format!("x{j}"))?;
    let beta0: Vec<f64> = ols.beta.iter().copied().collect();

    let rows = Rows::new(design);
    let mut fitted = vec![0.0; n];
    rows.times(&beta0, &mut fitted);
    let resid0: Vec<f64> = response.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let y_scale = response.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let y_max = response.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean_abs_resid = resid0.iter().map(|r| r.abs()).sum::<f64>() / n as f64;

    if mean_abs_resid <= 1e-13 * y_scale.max(f64::MIN_POSITIVE) || y_max == 0.0 {
        // Exact interpolation: zero loss at the least-squares point.
        return Ok(QuantileFit {
            tau,
            objective: check_loss(resid0.into_iter(), tau),
            estimates: beta0,
            iterations: 0,
            converged: true,
            vertex: false,
        });
    }

    let ones = vec![1.0 - tau; n];
    let mut b = vec![0.0; p];
    rows.transpose_times(&ones, &mut b);
    let col_scale: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| rows.row(i)[j].abs()).sum::<f64>().max(f64::MIN_POSITIVE))
        .collect();

    let offset = mean_abs_resid;
    let mut st = State {
        x: &rows,
        a: vec![1.0 - tau; n],
        s: vec![tau; n],
        lambda: beta0.iter().map(|v| -v).collect(),
        z: resid0.iter().map(|r| (-r).max(0.0) + offset).collect(),
        w: resid0.iter().map(|r| r.max(0.0) + offset).collect(),
        inv_d: vec![0.0; n],
        rd: vec![0.0; n],
    };

    let mut chol = vec![0.0; p * p];
    let mut rp = vec![0.0; p];
    let mut rt = vec![0.0; n];
    let mut aff = Direction::new(n, p);
    let mut dir = Direction::new(n, p);
    let mut last = (f64::NAN, f64::NAN, f64::NAN);
    for iteration in 0..options.max_iterations {
        // Residuals, loss and duality gap in one pass.
        let beta: Vec<f64> = st.lambda.iter().map(|l| -l).collect();
        let mut loss = 0.0;
        let mut gap = 0.0;
        let mut dual_inf = 0.0f64;
        rp.copy_from_slice(&b);
        for i in 0..n {
            let row = rows.row(i);
            let r = response[i] - dot(row, &beta);
            loss += if r < 0.0 { r * (tau - 1.0) } else { r * tau };
            let rd = -r - st.z[i] + st.w[i];
            st.rd[i] = rd;
            dual_inf = dual_inf.max(rd.abs());
            gap += st.a[i] * st.z[i] + st.s[i] * st.w[i];
            for (o, x) in rp.iter_mut().zip(row) {
                *o -= x * st.a[i];
            }
        }
        let primal_inf = rp
            .iter()
            .zip(&col_scale)
            .map(|(r, s)| r.abs() / s)
            .fold(0.0, f64::max);
        let dual_inf = dual_inf / y_max;
        let gap_rel = gap / (loss + y_scale);
        last = (primal_inf, dual_inf, gap_rel);
        if primal_inf < options.tolerance && dual_inf < options.tolerance && gap_rel < options.tolerance {
            return Ok(finish(&rows, response, tau, beta, iteration));
        }

        // Normal matrix Xᵀ D⁻¹ X.
        chol.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let inv = 1.0 / (st.z[i] / st.a[i] + st.w[i] / st.s[i]);
            st.inv_d[i] = inv;
            let row = rows.row(i);
            for j in 0..p {
                let xj = row[j] * inv;
                for k in 0..=j {
                    chol[j * p + k] += xj * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                chol[k * p + j] = chol[j * p + k];
            }
        }
        let normal = chol.clone();
        if !cholesky(&mut chol, p) {
            // Ill-conditioned near convergence; nudge the diagonal and retry.
            let trace: f64 = (0..p).map(|j| normal[j * p + j].abs()).sum();
            chol.copy_from_slice(&normal);
            for j in 0..p {
                chol[j * p + j] += 1e-12 * trace.max(f64::MIN_POSITIVE);
            }
            if !cholesky(&mut chol, p) {
                break;
            }
        }

        // Predictor.
        st.direction(&chol, &rp, |_, a, s, z, w| (-a * z, -s * w), &mut rt, &mut aff);
        let (ap, ad) = (aff.primal_step, aff.dual_step);
        let gap_aff: f64 = (0..n)
            .map(|i| {
                (st.a[i] + ap * aff.da[i]) * (st.z[i] + ad * aff.dz[i])
                    + (st.s[i] - ap * aff.da[i]) * (st.w[i] + ad * aff.dw[i])
            })
            .sum();
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);
        let mu = sigma * gap / (2 * n) as f64;

        // Corrector.
        st.direction(
            &chol,
            &rp,
            |i, a, s, z, w| {
                (
                    mu - a * z - aff.da[i] * aff.dz[i],
                    mu - s * w + aff.da[i] * aff.dw[i],
                )
            },
            &mut rt,
            &mut dir,
        );
        let (ap, ad) = (dir.primal_step, dir.dual_step);
        let mut positive = true;
        for i in 0..n {
            st.a[i] += ap * dir.da[i];
            st.s[i] -= ap * dir.da[i];
            st.z[i] += ad * dir.dz[i];
            st.w[i] += ad * dir.dw[i];
            positive &= st.a[i] > 0.0 && st.s[i] > 0.0 && st.z[i] > 0.0 && st.w[i] > 0.0;
        }
        for (l, dl) in st.lambda.iter_mut().zip(&dir.dlambda) {
            *l += ad * dl;
        }
        if !positive {
            break;
        }
    }
    Err(Error::SolverNonConvergence {
        iterations: options.max_iterations,
        primal: last.0,
        dual: last.1,
        gap: last.2,
    })
}

/// Wraps up a converged iterate, polishing onto a vertex when exactly `p`
/// residuals have collapsed.
fn finish(rows: &Rows, y: &[f64], tau: f64, beta: Vec<f64>, iterations: usize) -> QuantileFit {
    let (n, p) = (rows.n, rows.p);
    let mut fitted = vec![0.0; n];
    rows.times(&beta, &mut fitted);
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let objective = check_loss(resid.iter().copied(), tau);
    let fit = QuantileFit {
        tau,
        estimates: beta,
        objective,
        iterations,
        converged: true,
        vertex: false,
    };

    // the p smallest |residuals| land in order[..p], the next one at order[p]
    let mut order: Vec<usize> = (0..n).collect();
    order.select_nth_unstable_by(p, |&i, &j| resid[i].abs().total_cmp(&resid[j].abs()).then(i.cmp(&j)));
    let basis = &order[..p];
    let inside = basis.iter().map(|&i| resid[i].abs()).fold(0.0, f64::max);
    let outside = resid[order[p]].abs();
    let scale = y.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    if !(inside <= 1e-3 * outside && inside <= 1e-6 * scale.max(f64::MIN_POSITIVE)) {
        return fit;
    }
    let xb = DMatrix::from_fn(p, p, |r, c| rows.row(basis[r])[c]);
    let yb = DVector::from_iterator(p, basis.iter().map(|&i| y[i]));
    let Some(vertex) = xb.lu().solve(&yb) else {
        return fit;
    };
    let vertex: Vec<f64> = vertex.iter().copied().collect();
    if vertex.iter().any(|v| !v.is_finite()) {
        return fit;
    }
    rows.times(&vertex, &mut fitted);
    let objective_v = check_loss(y.iter().zip(&fitted).map(|(y, f)| y - f), tau);
    if objective_v <= objective * (1.0 + 1e-12) + 1e-300 {
        QuantileFit {
            estimates: vertex,
            objective: objective_v,
            vertex: true,
            ..fit
        }
    } else {
        fit
    }
}

/// Worst-case violation of the subgradient optimality condition at `beta`.
///
/// For each coordinate `j`, the signed sum `Σ xᵢⱼ (τ − 1[rᵢ < 0])` over
/// observations with non-zero residual must be offset by the zero-residual
/// observations, each of which can absorb at most `|xᵢⱼ| max(τ, 1 − τ)`.
/// Residuals with `|rᵢ| ≤ zero_tol` count as zero. Returns
/// `max_j (|sum_j| − allowance_j)`; values `≤ 0` mean the condition holds exactly.
pub fn subgradient_violation(
    design: &DMatrix<f64>,
    response: &[f64],
    tau: f64,
    beta: &[f64],
    zero_tol: f64,
) -> f64 {
    let (n, p) = design.shape();
    let fitted = design * DVector::from_column_slice(beta);
    let cap = tau.max(1.0 - tau);
    let mut sums = vec![0.0; p];
    let mut allowance = vec![0.0; p];
    for i in 0..n {
        let r = response[i] - fitted[i];
        if r.abs() <= zero_tol {
            for j in 0..p {
                allowance[j] += design[(i, j)].abs() * cap;
            }
        } else {
            let psi = if r < 0.0 { tau - 1.0 } else { tau };
            for j in 0..p {
                sums[j] += design[(i, j)] * psi;
            }
        }
    }
    (0..p)
        .map(|j| sums[j].abs() - allowance[j])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Bootstrap standard errors and normal-approximation p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInference {
    pub replicates: usize,
    pub seed: u64,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Resamples drawn in total, including rank-deficient redraws.
    pub draws: usize,
    /// Some standard error is zero (all replicates agree).
    pub degenerate: bool,
}

/// SplitMix64 finalizer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for replicate `index`, attempt `attempt`.
pub fn replicate_seed(seed: u64, index: u64, attempt: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index) ^ attempt.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Pairs bootstrap around `estimates` (the full-sample fit).
///
/// Each replicate resamples `(xᵢ, yᵢ)` with replacement from its own
/// deterministically derived seed, so results do not depend on scheduling.
/// A resample is fit on its distinct rows, each scaled by its multiplicity,
/// which is the same linear program as the resample itself. Rank-deficient
/// resamples are redrawn, up to `10 B` draws in total.
pub fn bootstrap_se(
    design: &DMatrix<f64>,
    response: &[f64],
    tau: f64,
    estimates: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapInference> {
    check_tau(tau)?;
    if replicates < MIN_REPLICATES {
        return Err(Error::Parameter(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    let (n, p) = design.shape();
    if estimates.len() != p {
        return Err(Error::Parameter("estimate vector does not match design".into()));
    }
    let budget = 10 * replicates;
    let per_replicate: Vec<Result<(Vec<f64>, usize)>> = (0..replicates)
        .into_par_iter()
        .map(|index| {
            for attempt in 0..budget {
                let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, index as u64, attempt as u64));
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                // Pinball loss is positively homogeneous, so a row drawn c
                // times contributes exactly like one row scaled by c.
                let kept: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
                let xb = DMatrix::from_fn(kept.len(), p, |r, c| design[(kept[r], c)] * f64::from(counts[kept[r]]));
                let yb: Vec<f64> = kept.iter().map(|&i| response[i] * f64::from(counts[i])).collect();
                if kept.len() <= p {
                    continue;
                }
                match fit_quantile(&xb, &yb, tau) {
                    Ok(fit) => return Ok((fit.estimates, attempt + 1)),
                    Err(Error::Collinear { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::BootstrapExhausted {
                draws: budget,
                accepted: 0,
            })
        })
        .collect();

    let mut draws = 0;
    let mut samples = Vec::with_capacity(replicates);
    for r in per_replicate {
        let (est, used) = r?;
        draws += used;
        samples.push(est);
    }
    if draws > budget {
        return Err(Error::BootstrapExhausted {
            draws,
            accepted: samples.len(),
        });
    }

    let b = replicates as f64;
    let std_errors: Vec<f64> = (0..p)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / b;
            let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (b - 1.0);
            let se = var.sqrt();
            // spread below the floating-point resolution of the estimate is noise
            if se <= 1e-12 * (1.0 + mean.abs()) {
                0.0
            } else {
                se
            }
        })
        .collect();
    let p_values = estimates
        .iter()
        .zip(&std_errors)
        .map(|(&e, &s)| p_value_normal(t_ratio(e, s)))
        .collect();
    Ok(BootstrapInference {
        replicates,
        seed,
        degenerate: std_errors.iter().any(|&s| s == 0.0),
        std_errors,
        p_values,
        draws,
    })
}

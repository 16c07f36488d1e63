//! Reference implementations used to check the library. None of them share
//! code with the crate: least squares goes through the normal equations,
//! t-distribution tails through numerical quadrature, quantile regression
//! through exhaustive enumeration of basic solutions, and EWMSD through the
//! direct weighted-moment sums.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Row-major dense matrix used by the oracles.
#[derive(Debug, Clone)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.at(i, j))
    }
}

/// Solves `A x = b` for square `A` by Gaussian elimination with partial
/// pivoting. Returns `None` for a (numerically) singular matrix.
pub fn gauss_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| a.at(i, j)).collect();
            row.push(b[i]);
            row
        })
        .collect();
    let scale = a.data.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        m.swap(col, pivot);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x)
}

/// Least squares through the normal equations `XᵀX β = Xᵀy`, with
/// homoskedastic standard errors and quadrature p-values.
#[derive(Debug, Clone)]
pub struct OlsOracle {
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub dof: usize,
}

pub fn ols_oracle(x: &Mat, y: &[f64]) -> OlsOracle {
    let (n, p) = (x.rows, x.cols);
    let xtx = Mat::from_fn(p, p, |j, k| (0..n).map(|i| x.at(i, j) * x.at(i, k)).sum());
    let xty: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x.at(i, j) * y[i]).sum()).collect();
    let beta = gauss_solve(&xtx, &xty).expect("full-rank design");
    // one step of iterative refinement on the normal equations
    let resid_ne: Vec<f64> = (0..p)
        .map(|j| xty[j] - (0..p).map(|k| xtx.at(j, k) * beta[k]).sum::<f64>())
        .collect();
    let corr = gauss_solve(&xtx, &resid_ne).expect("full-rank design");
    let beta: Vec<f64> = beta.iter().zip(&corr).map(|(b, c)| b + c).collect();

    let rss: f64 = (0..n)
        .map(|i| {
            let f: f64 = (0..p).map(|j| x.at(i, j) * beta[j]).sum();
            (y[i] - f).powi(2)
        })
        .sum();
    let dof = n - p;
    let sigma2 = rss / dof as f64;
    let std_errors: Vec<f64> = (0..p)
        .map(|j| {
            let e: Vec<f64> = (0..p).map(|k| if k == j { 1.0 } else { 0.0 }).collect();
            let col = gauss_solve(&xtx, &e).expect("full-rank design");
            (sigma2 * col[j]).sqrt()
        })
        .collect();
    let p_values = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, s)| t_two_sided_quadrature(b / s, dof as f64))
        .collect();
    OlsOracle {
        estimates: beta,
        std_errors,
        p_values,
        dof,
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_2,
    0.063_092_092_629_979_0,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 7-point Gauss / 15-point Kronrod pair on `[a, b]`: (Kronrod estimate, error estimate).
fn gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GK_GAUSS_WEIGHTS[3] * fc;
    for k in 0..7 {
        let dx = h * GK_NODES[k];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_KRONROD_WEIGHTS[k] * s;
        if k % 2 == 1 {
            gauss += GK_GAUSS_WEIGHTS[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integration to absolute tolerance `tol`, or to
/// round-off relative to the panel value when that is the larger.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gauss_kronrod(f, a, b);
        // stop at the requested absolute tolerance or at round-off level
        if err <= tol || err <= 1e-12 * v.abs() || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, tol / 2.0, depth - 1) + recurse(f, m, b, tol / 2.0, depth - 1)
    }
    recurse(f, a, b, tol, 40)
}

/// `P(|T| ≥ |t|)` for Student t with `dof` degrees of freedom, as the ratio
/// of the tail integral to the total integral of the unnormalized density
/// `(1 + x²/ν)^{−(ν+1)/2}`. Substituting `x = tan θ` maps both ranges onto
/// finite intervals.
pub fn t_two_sided_quadrature(t: f64, dof: f64) -> f64 {
    let g = move |theta: f64| {
        let (s, c) = theta.sin_cos();
        if c <= 0.0 {
            return 0.0;
        }
        // (1 + tan²θ/ν)^{−(ν+1)/2} / cos²θ = (c² + s²/ν)^{−(ν+1)/2} c^{ν−1}, in
        // logs so that large ν neither overflows nor amplifies rounding
        let s2 = s * s;
        let base = if s2 < 0.5 {
            (-s2 * (dof - 1.0) / dof).ln_1p()
        } else {
            (c * c + s2 / dof).ln()
        };
        (-0.5 * (dof + 1.0) * base + (dof - 1.0) * c.ln()).exp()
    };
    let half = std::f64::consts::FRAC_PI_2;
    let start = t.abs().atan();
    let total = integrate(&g, 0.0, half, 1e-15);
    let tail = integrate(&g, start, half, 1e-17);
    (tail / total).min(1.0)
}

pub fn pinball(residuals: impl Iterator<Item = f64>, tau: f64) -> f64 {
    residuals.map(|r| if r < 0.0 { (tau - 1.0) * r } else { tau * r }).sum()
}

/// Minimum pinball loss over all basic solutions: coefficient vectors that
/// interpolate some `p` observations. Some optimum is always of this form.
pub fn qr_brute_force(x: &Mat, y: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let (n, p) = (x.rows, x.cols);
    let mut best = (f64::INFINITY, Vec::new());
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let sub = Mat::from_fn(p, p, |r, c| x.at(idx[r], c));
        let rhs: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if let Some(beta) = gauss_solve(&sub, &rhs) {
            let loss = pinball(
                (0..n).map(|i| y[i] - (0..p).map(|j| x.at(i, j) * beta[j]).sum::<f64>()),
                tau,
            );
            if loss < best.0 {
                best = (loss, beta);
            }
        }
        // next p-combination of 0..n in lexicographic order
        let mut k = p;
        while k > 0 && idx[k - 1] == n - p + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for j in k..p {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// EWMSD from the direct weighted sums: at time `t`, weights
/// `(1 − α)^{t−i}` for `i ≤ t`, weighted mean, then the (uncorrected)
/// weighted variance about it.
pub fn ewmsd_direct(values: &[f64], span: f64) -> Vec<f64> {
    let decay = 1.0 - 2.0 / (span + 1.0);
    (0..values.len())
        .map(|t| {
            let mut w = 1.0;
            let mut sw = 0.0;
            let mut swx = 0.0;
            for i in (0..=t).rev() {
                sw += w;
                swx += w * values[i];
                w *= decay;
                if w < 1e-300 {
                    break;
                }
            }
            let mean = swx / sw;
            let mut w = 1.0;
            let mut swd = 0.0;
            for i in (0..=t).rev() {
                swd += w * (values[i] - mean).powi(2);
                w *= decay;
                if w < 1e-300 {
                    break;
                }
            }
            (swd / sw).sqrt()
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random regression instance: intercept plus `p − 1` Gaussian columns and
/// Gaussian noise around random coefficients.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Mat, Vec<f64>) {
    let raw: Vec<f64> = (0..n * p).map(|_| normal(rng)).collect();
    let x = Mat::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { raw[i * p + j] });
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = (0..n)
        .map(|i| (0..p).map(|j| x.at(i, j) * beta[j]).sum::<f64>() + normal(rng))
        .collect();
    (x, y)
}

/// Tolerance check `|a − b| ≤ tol · max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

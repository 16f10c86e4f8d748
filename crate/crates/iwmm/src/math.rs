//! Small numerical utilities shared across the crate: log-gamma, log-sum-exp,
//! and rank-one Cholesky updates/downdates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;
pub const LN_PI: f64 = 1.1447298858494002;

/// Natural log of the gamma function (Lanczos approximation, g = 7).
///
/// Relative accuracy is ~1e-13 over the range used here (arguments > 0).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection formula
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().abs().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * LN_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

/// log(Σ exp(v_i)), stable. Empty input gives -inf.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-density of an isotropic Gaussian N(y; mean, var·I).
pub fn iso_gaussian_log_density(y: &DVector<f64>, mean: &DVector<f64>, var: f64) -> f64 {
    let d = y.len() as f64;
    let sq = (y - mean).norm_squared();
    -0.5 * d * (LN_2PI + var.ln()) - 0.5 * sq / var
}

/// Log-determinant of L·Lᵀ given the lower factor L.
pub fn chol_log_det(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// In-place rank-one update of a lower Cholesky factor:
/// on exit L·Lᵀ equals the old L·Lᵀ + w·wᵀ. `w` is used as workspace.
pub fn chol_update(l: &mut DMatrix<f64>, w: &mut DVector<f64>) {
    let n = l.nrows();
    debug_assert_eq!(n, w.len());
    let mut b = 1.0;
    for j in 0..n {
        let ljj = l[(j, j)];
        let wj = w[j];
        let nljj = (ljj * ljj + wj * wj / b).sqrt();
        let gamma = ljj * ljj * b + wj * wj;
        for k in j + 1..n {
            let lkj = l[(k, j)];
            let wk = w[k] - wj * lkj / ljj;
            l[(k, j)] = nljj * (lkj / ljj + wj * wk / gamma);
            w[k] = wk;
        }
        b += wj * wj / (ljj * ljj);
        l[(j, j)] = nljj;
    }
}

/// In-place rank-one downdate of a lower Cholesky factor:
/// on exit L·Lᵀ equals the old L·Lᵀ − w·wᵀ. `w` is used as workspace.
///
/// Fails when cancellation would drive a pivot non-positive; the caller is
/// expected to rebuild the factor from scratch in that case.
pub fn chol_downdate(l: &mut DMatrix<f64>, w: &mut DVector<f64>) -> Result<()> {
    let n = l.nrows();
    debug_assert_eq!(n, w.len());
    for j in 0..n {
        let ljj = l[(j, j)];
        let wj = w[j];
        let arg = ljj * ljj - wj * wj;
        if arg <= 0.0 || !arg.is_finite() {
            return Err(Error::Numerical(format!(
                "cholesky downdate pivot {j} lost positivity"
            )));
        }
        let r = arg.sqrt();
        let c = r / ljj;
        let s = wj / ljj;
        l[(j, j)] = r;
        for i in j + 1..n {
            l[(i, j)] = (l[(i, j)] - s * w[i]) / c;
            w[i] = c * w[i] - s * l[(i, j)];
        }
    }
    Ok(())
}

/// Lower Cholesky factor of an SPD matrix, as a plain lower-triangular matrix.
pub fn chol_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l())
}

/// Every set partition of {0..n-1}, as canonical label vectors (restricted
/// growth strings). Feasible for the small n used by exhaustive oracles
/// (Bell(8) = 4140).
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn recurse(labels: &mut Vec<usize>, i: usize, max_used: usize, out: &mut Vec<Vec<usize>>) {
        if i == labels.len() {
            out.push(labels.clone());
            return;
        }
        for c in 0..=max_used + 1 {
            labels[i] = c;
            recurse(labels, i + 1, max_used.max(c), out);
        }
    }
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    recurse(&mut labels, 1, 0, &mut out);
    out
}

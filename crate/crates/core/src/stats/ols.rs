//! Ordinary least squares with HC3 heteroskedasticity-robust covariance.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OlsError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("observation {0} has leverage one")]
    LeverageOne(usize),
    #[error("need more observations ({n}) than columns ({k})")]
    TooFewObservations { n: usize, k: usize },
    #[error("response length {y} does not match design rows {n}")]
    ShapeMismatch { n: usize, y: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub hc3_standard_errors: Vec<f64>,
    pub hc3_covariance: DMatrix<f64>,
    pub r_squared: f64,
    pub n: usize,
    pub residuals: Vec<f64>,
    pub leverage: Vec<f64>,
}

const RANK_TOL: f64 = 1e-10;
const LEVERAGE_TOL: f64 = 1e-10;

/// Fits `y = X b + e`. Include a column of ones in `x` for an intercept.
pub fn ols_hc3(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit, OlsError> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(OlsError::ShapeMismatch { n, y: y.len() });
    }
    if n <= k {
        return Err(OlsError::TooFewObservations { n, k });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0_f64, f64::max);
    if scale == 0.0 || (0..k).any(|j| r[(j, j)].abs() <= RANK_TOL * scale) {
        return Err(OlsError::RankDeficient);
    }
    let yv = DVector::from_column_slice(y);
    let qty = q.transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(OlsError::RankDeficient)?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(OlsError::RankDeficient)?;
    // (X'X)^-1 = R^-1 R^-T
    let xtx_inv = &r_inv * r_inv.transpose();

    let fitted = x * &beta;
    let resid = &yv - &fitted;
    let leverage: Vec<f64> = (0..n).map(|i| q.row(i).norm_squared()).collect();
    if let Some(i) = leverage.iter().position(|&h| h >= 1.0 - LEVERAGE_TOL) {
        return Err(OlsError::LeverageOne(i));
    }

    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let w = resid[i] * resid[i] / (1.0 - leverage[i]).powi(2);
        let xi = x.row(i);
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += w * xi[a] * xi[b];
            }
        }
    }
    let cov = &xtx_inv * meat * &xtx_inv;
    let se = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();

    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        1.0
    };

    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        hc3_standard_errors: se,
        hc3_covariance: cov,
        r_squared,
        n,
        residuals: resid.iter().copied().collect(),
        leverage,
    })
}

/// Builds a design with a leading intercept column from row-major regressors.
pub fn design_with_intercept(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.first().map_or(0, |r| r.len()) + 1;
    DMatrix::from_fn(rows.len(), k, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] })
}

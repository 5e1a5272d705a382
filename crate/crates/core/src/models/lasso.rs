//! L1-penalized least squares by cyclic coordinate descent.
//!
//! Minimizes `(1/(2n)) ||y - Xw - b||^2 + alpha ||w||_1` with an unpenalized
//! intercept. Columns and target are centered once, so the intercept drops out
//! of the coordinate updates and is recovered as `mean(y) - mean(X) . w`.

use serde::{Deserialize, Serialize};

use super::{check_width, check_xy, ModelError, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoParams {
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams {
            alpha: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_iterations_run: usize,
    pub converged: bool,
}

pub(crate) fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Centered {
    cols: Vec<Vec<f64>>,
    x_mean: Vec<f64>,
    y: Vec<f64>,
    y_mean: f64,
}

fn center(x: &Matrix, y: &[f64]) -> Centered {
    let n = x.rows() as f64;
    let x_mean = x.column_means();
    let cols = (0..x.cols())
        .map(|j| x.column(j).into_iter().map(|v| v - x_mean[j]).collect())
        .collect();
    let y_mean = y.iter().sum::<f64>() / n;
    Centered {
        cols,
        x_mean,
        y: y.iter().map(|v| v - y_mean).collect(),
        y_mean,
    }
}

/// Smallest `alpha` at which every weight is exactly zero:
/// `max_j |X_j^T (y - mean(y))| / n` over centered columns.
pub fn lasso_alpha_max(x: &Matrix, y: &[f64]) -> Result<f64> {
    check_xy(x, y.len())?;
    let c = center(x, y);
    let n = x.rows() as f64;
    Ok(c.cols.iter().map(|col| (dot(col, &c.y) / n).abs()).fold(0.0, f64::max))
}

pub fn lasso_fit(x: &Matrix, y: &[f64], params: &LassoParams) -> Result<LassoModel> {
    check_xy(x, y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    if !(params.alpha >= 0.0 && params.alpha.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("alpha must be >= 0, got {}", params.alpha)));
    }
    if !(params.tol > 0.0) {
        return Err(ModelError::InvalidParameter("tol must be positive".into()));
    }
    let n = x.rows() as f64;
    let d = x.cols();
    let c = center(x, y);
    let z: Vec<f64> = c.cols.iter().map(|col| dot(col, col) / n).collect();

    let mut w = vec![0.0; d];
    let mut resid = c.y.clone();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < params.max_iter {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if z[j] == 0.0 {
                continue;
            }
            let old = w[j];
            let rho = dot(&c.cols[j], &resid) / n + z[j] * old;
            let new = soft_threshold(rho, params.alpha) / z[j];
            if new != old {
                let delta = new - old;
                for (r, xv) in resid.iter_mut().zip(&c.cols[j]) {
                    *r -= delta * xv;
                }
                w[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < params.tol {
            converged = true;
            break;
        }
    }
    let intercept = c.y_mean - dot(&c.x_mean, &w);
    Ok(LassoModel {
        weights: w,
        intercept,
        alpha: params.alpha,
        max_iter: params.max_iter,
        tol: params.tol,
        n_iterations_run: sweeps,
        converged,
    })
}

impl LassoModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_width(self.weights.len(), x)?;
        Ok(dot(&self.weights, x) + self.intercept)
    }

    pub fn predict_all(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.row_iter().map(|r| self.predict(r)).collect()
    }

    /// `(1/(2n)) ||y - Xw - b||^2 + alpha ||w||_1`
    pub fn objective(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        lasso_objective(x, y, &self.weights, self.intercept, self.alpha)
    }

    /// Coefficient of determination on `(x, y)`.
    pub fn score(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        check_xy(x, y.len())?;
        r2_score(y, &self.predict_all(x)?)
    }
}

pub fn lasso_objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, alpha: f64) -> Result<f64> {
    check_xy(x, y.len())?;
    check_width(x.cols(), w)?;
    let n = x.rows() as f64;
    let rss: f64 = x
        .row_iter()
        .zip(y)
        .map(|(r, yi)| (yi - dot(r, w) - b).powi(2))
        .sum();
    Ok(rss / (2.0 * n) + alpha * w.iter().map(|v| v.abs()).sum::<f64>())
}

/// `1 - SS_res / SS_tot`; negative when predictions are worse than the mean.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if y_true.len() != y_pred.len() {
        return Err(ModelError::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(ModelError::ConstantTarget);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

//! Principal components by power iteration on the sample covariance.
//!
//! Components are extracted one at a time. Each iterate is re-orthogonalized
//! against the components already found, which deflates them out of the
//! operator without forming `C - lambda v v^T` explicitly.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{check_width, ModelError, Result};
use crate::linalg::{axpy, dot, norm_sq, Matrix};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 500_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// `n_components x n_features`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
    pub total_variance: f64,
    pub n_samples: usize,
}

fn covariance(x: &Matrix, mean: &[f64]) -> Vec<Vec<f64>> {
    let d = x.cols();
    let mut cov = vec![vec![0.0; d]; d];
    let mut centered = vec![0.0; d];
    for r in x.row_iter() {
        for j in 0..d {
            centered[j] = r[j] - mean[j];
        }
        for a in 0..d {
            for b in a..d {
                cov[a][b] += centered[a] * centered[b];
            }
        }
    }
    let denom = (x.rows() - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= denom;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Removes the span of `basis` from `v` (two Gram-Schmidt passes).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            axpy(-p, b, v);
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm_sq(v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// A unit vector orthogonal to `basis`, taken from the standard basis.
fn complement_vector(d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; d];
    let mut best_norm = -1.0;
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        orthogonalize(&mut e, basis);
        let n = norm_sq(&e);
        if n > best_norm {
            best_norm = n;
            best = e;
        }
    }
    normalize(&mut best);
    best
}

/// Dominant eigenpair of `cov` restricted to the complement of `found`.
fn power_iteration(cov: &[Vec<f64>], found: &[Vec<f64>], scale: f64, seed: u64) -> (f64, Vec<f64>) {
    let d = cov.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, found);
    if normalize(&mut v) == 0.0 {
        v = complement_vector(d, found);
    }
    for _ in 0..POWER_MAX_ITER {
        let mut u = mat_vec(cov, &v);
        orthogonalize(&mut u, found);
        let lambda = dot(&v, &u);
        // residual of the Rayleigh pair bounds the eigenvalue error
        let resid = u
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid <= POWER_TOL * scale {
            return (lambda.max(0.0), v);
        }
        if normalize(&mut u) <= POWER_TOL * scale {
            // remaining spectrum is numerically zero
            return (0.0, v);
        }
        v = u;
    }
    log::warn!("power iteration hit {POWER_MAX_ITER} iterations without converging");
    let lambda = dot(&v, &mat_vec(cov, &v));
    (lambda.max(0.0), v)
}

/// Fits the top `n_components` principal axes of `x`.
///
/// `n_components` is clamped to `min(rows - 1, features)` with a warning.
pub fn pca_fit(x: &Matrix, n_components: usize) -> Result<PcaModel> {
    if x.rows() < 2 {
        return Err(ModelError::TooFewRows {
            needed: 2,
            have: x.rows(),
        });
    }
    if !x.is_finite() {
        return Err(ModelError::NonFinite);
    }
    if n_components == 0 {
        return Err(ModelError::InvalidParameter("n_components must be positive".into()));
    }
    let limit = (x.rows() - 1).min(x.cols());
    let k = if n_components > limit {
        log::warn!("n_components {n_components} clamped to {limit}");
        limit
    } else {
        n_components
    };
    let mean = x.column_means();
    let cov = covariance(x, &mean);
    let total: f64 = (0..cov.len()).map(|i| cov[i][i]).sum();
    if total <= 0.0 {
        return Err(ModelError::DegenerateInput("all rows identical".into()));
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variance = Vec::with_capacity(k);
    for i in 0..k {
        let (lambda, v) = power_iteration(&cov, &components, total, i as u64);
        components.push(v);
        variance.push(lambda);
    }
    // Rounding can leave later estimates a hair above earlier ones when
    // eigenvalues coincide; the order is the extraction order.
    for i in 1..variance.len() {
        if variance[i] > variance[i - 1] {
            variance[i] = variance[i - 1];
        }
    }
    let ratio = variance.iter().map(|v| v / total).collect();
    Ok(PcaModel {
        components,
        explained_variance: variance,
        explained_variance_ratio: ratio,
        mean,
        total_variance: total,
        n_samples: x.rows(),
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Coordinates of `x` in component space.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_width(self.mean.len(), x)?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centered)).collect())
    }

    /// Maps component coordinates back to feature space.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_width(self.components.len(), z)?;
        let mut out = self.mean.clone();
        for (c, &s) in self.components.iter().zip(z) {
            axpy(s, c, &mut out);
        }
        Ok(out)
    }

    /// Running sum of explained-variance ratios.
    pub fn cumulative_ratio(&self) -> Vec<f64> {
        self.explained_variance_ratio
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

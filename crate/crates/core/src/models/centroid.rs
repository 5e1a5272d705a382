//! Nearest centroid classification with optional centroid shrinkage.
//!
//! With a shrink threshold, each class centroid's deviation from the overall
//! mean is standardized by `m_k * (s_j + s0)`, soft-thresholded, and mapped
//! back. `s_j` is the pooled within-class standard deviation of feature j,
//! `s0` the median of the `s_j`, and `m_k = sqrt(1/n_k - 1/n)`.

use serde::{Deserialize, Serialize};

use super::{check_width, check_xy, distinct_labels, lasso::soft_threshold, ModelError, Result};
use crate::linalg::{dot, norm_sq, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
    Manhattan,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Cosine, Metric::Manhattan];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Manhattan => "manhattan",
        }
    }

    /// Distance between `a` and `b`; cosine distance is `1 - cos`.
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Cosine => {
                let (na, nb) = (norm_sq(a), norm_sq(b));
                if na == 0.0 || nb == 0.0 {
                    return Err(ModelError::ZeroVector);
                }
                1.0 - dot(a, b) / (na.sqrt() * nb.sqrt())
            }
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::InvalidParameter(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidParams {
    pub metric: Metric,
    pub shrink_threshold: Option<f64>,
    /// Class order used for tie-breaking; defaults to ascending labels.
    pub classes: Option<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub class_centroids: Vec<Vec<f64>>,
    pub classes: Vec<i32>,
    pub metric: Metric,
    pub shrink_threshold: Option<f64>,
}

fn class_order(y: &[i32], requested: Option<&[i32]>) -> Result<Vec<i32>> {
    let present = distinct_labels(y);
    let Some(order) = requested else { return Ok(present) };
    let mut seen = order.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(ModelError::InvalidParameter("duplicate class in class order".into()));
    }
    if let Some(&missing) = order.iter().find(|c| present.binary_search(c).is_err()) {
        return Err(ModelError::EmptyClass(missing));
    }
    if let Some(&extra) = present.iter().find(|c| !order.contains(c)) {
        return Err(ModelError::InvalidParameter(format!("label {extra} not in class order")));
    }
    Ok(order.to_vec())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

pub fn centroid_fit(x: &Matrix, y: &[i32], params: &CentroidParams) -> Result<CentroidModel> {
    check_xy(x, y.len())?;
    if let Some(t) = params.shrink_threshold {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("shrink threshold must be non-negative, got {t}")));
        }
    }
    let classes = class_order(y, params.classes.as_deref())?;
    let d = x.cols();
    let n = x.rows();
    let mut sums = vec![vec![0.0; d]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    let slot: Vec<usize> = y.iter().map(|v| classes.iter().position(|c| c == v).unwrap()).collect();
    for (r, &k) in x.row_iter().zip(&slot) {
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(r) {
            *s += v;
        }
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| v / c as f64).collect())
        .collect();

    // A zero threshold is the identity; skip it so results match bit for bit.
    if let Some(threshold) = params.shrink_threshold.filter(|&t| t > 0.0) {
        let overall = x.column_means();
        let dof = n.saturating_sub(classes.len());
        let mut within = vec![0.0; d];
        for (r, &k) in x.row_iter().zip(&slot) {
            for j in 0..d {
                within[j] += (r[j] - centroids[k][j]).powi(2);
            }
        }
        let s: Vec<f64> = within
            .iter()
            .map(|v| if dof > 0 { (v / dof as f64).sqrt() } else { 0.0 })
            .collect();
        let s0 = if d > 0 { median(&s) } else { 0.0 };
        for (k, centroid) in centroids.iter_mut().enumerate() {
            let mk = (1.0 / counts[k] as f64 - 1.0 / n as f64).max(0.0).sqrt();
            for j in 0..d {
                let scale = mk * (s[j] + s0);
                if scale == 0.0 {
                    // no noise estimate for this feature; leave it unshrunk
                    continue;
                }
                let dev = (centroid[j] - overall[j]) / scale;
                centroid[j] = overall[j] + scale * soft_threshold(dev, threshold);
            }
        }
    }

    Ok(CentroidModel {
        class_centroids: centroids,
        classes,
        metric: params.metric,
        shrink_threshold: params.shrink_threshold,
    })
}

impl CentroidModel {
    /// Class of the nearest centroid; ties go to the earlier class.
    pub fn predict(&self, x: &[f64]) -> Result<i32> {
        check_width(self.class_centroids[0].len(), x)?;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, c) in self.class_centroids.iter().enumerate() {
            let dist = self.metric.distance(x, c)?;
            if dist < best_dist {
                best = k;
                best_dist = dist;
            }
        }
        Ok(self.classes[best])
    }
}

//! Slow, independent reference solvers and fixture builders.
#![allow(dead_code)]

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stepgoal::ingest::{Segment, SegmentKind, StorylineDay, TimeOfDay};
use stepgoal::linalg::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of a symmetric PSD matrix, by plain power iteration.
fn top_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mv: Vec<f64> = m.iter().map(|r| dot(r, &v)).collect();
        let norm = dot(&mv, &mv).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &mv);
        v = mv.iter().map(|x| x / norm).collect();
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// LASSO by accelerated proximal gradient (FISTA) on
/// `1/(2n) |y - Xw - b|^2 + alpha |w|_1`, intercept unpenalized.
pub fn lasso_oracle(x: &Matrix, y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let n = x.rows();
    let d = x.cols();
    let x_mean = x.column_means();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().zip(&x_mean).map(|(v, m)| v - m).collect()).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let gram: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..d).map(|b| xc.iter().map(|r| r[a] * r[b]).sum::<f64>() / n as f64).collect())
        .collect();
    let xty: Vec<f64> = (0..d).map(|a| xc.iter().zip(&yc).map(|(r, v)| r[a] * v).sum::<f64>() / n as f64).collect();
    let lip = top_eigenvalue(&gram).max(1e-12);
    let step = 1.0 / lip;
    let prox = |v: f64| v.signum() * (v.abs() - alpha * step).max(0.0);

    let mut w = vec![0.0; d];
    let mut z = w.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let grad: Vec<f64> = (0..d).map(|a| dot(&gram[a], &z) - xty[a]).collect();
        let next: Vec<f64> = (0..d).map(|a| prox(z[a] - step * grad[a])).collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let moved: f64 = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // restart momentum when it points uphill
        let uphill = dot(
            &z.iter().zip(&next).map(|(a, b)| a - b).collect::<Vec<_>>(),
            &next.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>(),
        ) > 0.0;
        if uphill {
            t = 1.0;
            z = next.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            z = next.iter().zip(&w).map(|(a, b)| a + beta * (a - b)).collect();
            t = t_next;
        }
        w = next;
        if moved < 1e-15 {
            break;
        }
    }
    let b = y_mean - dot(&x_mean, &w);
    (w, b)
}

/// Dual multipliers of the linear SVM with the bias folded into an
/// augmented constant feature, by accelerated projected gradient on
/// `min 1/2 a^T Q a - 1^T a, 0 <= a <= C`, `Q_ij = y_i y_j (x_i.x_j + 1)`.
pub fn svm_dual_oracle(x: &Matrix, y: &[i32], c: f64) -> Vec<f64> {
    let n = x.rows();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| f64::from(y[i] * y[j]) * (dot(x.row(i), x.row(j)) + 1.0))
                .collect()
        })
        .collect();
    let step = 1.0 / top_eigenvalue(&q).max(1e-12);
    let project = |v: f64| v.clamp(0.0, c);
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..5_000_000 {
        let grad: Vec<f64> = (0..n).map(|i| dot(&q[i], &z) - 1.0).collect();
        let next: Vec<f64> = (0..n).map(|i| project(z[i] - step * grad[i])).collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let uphill = dot(
            &z.iter().zip(&next).map(|(p, r)| p - r).collect::<Vec<_>>(),
            &next.iter().zip(&a).map(|(p, r)| p - r).collect::<Vec<_>>(),
        ) > 0.0;
        if uphill {
            t = 1.0;
            z = next.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            z = next.iter().zip(&a).map(|(p, r)| p + beta * (p - r)).collect();
            t = t_next;
        }
        a = next;
        // stop on the projected gradient at the current iterate
        let g: Vec<f64> = (0..n).map(|i| dot(&q[i], &a) - 1.0).collect();
        let worst = (0..n)
            .map(|i| {
                if a[i] <= 0.0 {
                    g[i].min(0.0).abs()
                } else if a[i] >= c {
                    g[i].max(0.0).abs()
                } else {
                    g[i].abs()
                }
            })
            .fold(0.0, f64::max);
        if worst < 1e-11 {
            break;
        }
    }
    a
}

/// `(w, b)` from dual multipliers of the augmented problem.
pub fn svm_primal(x: &Matrix, y: &[i32], a: &[f64]) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    for i in 0..x.rows() {
        let s = a[i] * f64::from(y[i]);
        for (wj, xj) in w.iter_mut().zip(x.row(i)) {
            *wj += s * xj;
        }
        b += s;
    }
    (w, b)
}

pub fn svm_dual_value(x: &Matrix, y: &[i32], a: &[f64]) -> f64 {
    let (w, b) = svm_primal(x, y, a);
    a.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b)
}

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix by cyclic
/// Jacobi rotations, sorted by decreasing eigenvalue.
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance with an `n - 1` denominator.
pub fn sample_covariance(x: &Matrix) -> Vec<Vec<f64>> {
    let mean = x.column_means();
    let d = x.cols();
    let mut cov = vec![vec![0.0; d]; d];
    for r in x.row_iter() {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    let denom = (x.rows() - 1) as f64;
    cov.iter_mut().flatten().for_each(|v| *v /= denom);
    cov
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Unshrunk nearest-centroid prediction written as a plain loop over
/// ascending class labels; ties keep the first class.
pub fn nearest_centroid_oracle(
    x: &Matrix,
    y: &[i32],
    point: &[f64],
    dist: fn(&[f64], &[f64]) -> f64,
) -> i32 {
    let mut classes: Vec<i32> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut best = (f64::INFINITY, classes[0]);
    for &k in &classes {
        let mut centroid = vec![0.0; x.cols()];
        let mut count = 0.0;
        for i in 0..x.rows() {
            if y[i] == k {
                count += 1.0;
                for (c, v) in centroid.iter_mut().zip(x.row(i)) {
                    *c += v;
                }
            }
        }
        centroid.iter_mut().for_each(|c| *c /= count);
        let d = dist(&centroid, point);
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// A random storyline day: contiguous or gapped segments at second
/// resolution, some crossing several hours.
pub fn random_storyline_day(rng: &mut ChaCha8Rng, index: usize) -> StorylineDay {
    let date = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + chrono::Days::new(index as u64 % 365);
    let n_cuts = rng.random_range(2..30);
    let mut cuts: Vec<u32> = (0..n_cuts).map(|_| rng.random_range(0..=86_400)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut segments = Vec::new();
    for (i, pair) in cuts.windows(2).enumerate() {
        if rng.random_bool(0.15) {
            continue;
        }
        let kind = if i % 2 == 0 { SegmentKind::Location } else { SegmentKind::Transition };
        segments.push(Segment {
            user_id: format!("r{:03}", index % 50),
            date,
            kind,
            start: TimeOfDay::from_seconds(pair[0]).unwrap(),
            end: TimeOfDay::from_seconds(pair[1]).unwrap(),
            steps: rng.random_range(0..20_000),
            place_name: None,
            place_type: (kind == SegmentKind::Location).then(|| "home".to_string()),
        });
    }
    StorylineDay {
        user_id: format!("r{:03}", index % 50),
        date,
        segments,
    }
}

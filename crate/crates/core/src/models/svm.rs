//! Linear soft-margin SVM trained by dual coordinate descent.
//!
//! The bias is handled by appending a constant 1 to every row, so the dual
//! has box constraints only and each multiplier can be updated in closed
//! form. The model then solves
//!
//! ```text
//! max  sum(a) - 1/2 |sum_i a_i y_i [x_i, 1]|^2   s.t. 0 <= a_i <= C
//! ```
//!
//! and `w`, `b` are the two parts of `sum_i a_i y_i [x_i, 1]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_width, check_xy, distinct_labels, ModelError, Result};
use crate::linalg::{dot, norm_sq, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    /// Declared for configuration compatibility; fitting rejects it.
    Rbf,
    /// Declared for configuration compatibility; fitting rejects it.
    Poly,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Linear, Kernel::Rbf, Kernel::Poly];

    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Rbf => "rbf",
            Kernel::Poly => "poly",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::InvalidParameter(format!("unknown kernel {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    pub max_epochs: usize,
    pub tol: f64,
    pub shrinking: bool,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            kernel: Kernel::Linear,
            max_epochs: 1000,
            tol: 1e-4,
            shrinking: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub kernel: Kernel,
    pub tol: f64,
    pub shrinking: bool,
    pub seed: u64,
    /// Dual objective at `alphas`.
    pub dual_objective: f64,
    /// Largest projected-gradient magnitude at `alphas`.
    pub kkt_violation: f64,
    pub n_epochs_run: usize,
    pub converged: bool,
    pub alphas: Vec<f64>,
}

/// Row `i` of the augmented design, as `(x_i, 1)`.
fn aug_dot(w: &[f64], b: f64, x: &[f64]) -> f64 {
    dot(w, x) + b
}

/// `sum_i a_i y_i [x_i, 1]`, recomputed from scratch.
pub fn primal_from_dual(x: &Matrix, y: &[i32], alphas: &[f64]) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    for ((r, &yi), &a) in x.row_iter().zip(y).zip(alphas) {
        if a != 0.0 {
            let s = a * yi as f64;
            for (wj, xj) in w.iter_mut().zip(r) {
                *wj += s * xj;
            }
            b += s;
        }
    }
    (w, b)
}

/// `sum(a) - 1/2 |w|^2 - 1/2 b^2` for the given multipliers.
pub fn dual_objective(x: &Matrix, y: &[i32], alphas: &[f64]) -> f64 {
    let (w, b) = primal_from_dual(x, y, alphas);
    alphas.iter().sum::<f64>() - 0.5 * (norm_sq(&w) + b * b)
}

/// Projected gradient of the (minimization form of the) dual at coordinate i.
fn projected_gradient(g: f64, a: f64, c: f64) -> f64 {
    if a <= 0.0 {
        g.min(0.0)
    } else if a >= c {
        g.max(0.0)
    } else {
        g
    }
}

/// Largest KKT violation of `alphas`, measured with a fresh `w`.
pub fn kkt_violation(x: &Matrix, y: &[i32], alphas: &[f64], c: f64) -> f64 {
    let (w, b) = primal_from_dual(x, y, alphas);
    x.row_iter()
        .zip(y)
        .zip(alphas)
        .map(|((r, &yi), &a)| {
            let g = yi as f64 * aug_dot(&w, b, r) - 1.0;
            projected_gradient(g, a, c).abs()
        })
        .fold(0.0, f64::max)
}

fn check_labels(y: &[i32]) -> Result<()> {
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(ModelError::NonBinaryLabels(bad));
    }
    if distinct_labels(y).len() < 2 {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

/// Fits a linear SVM with labels in {-1, +1}.
pub fn svm_fit(x: &Matrix, y: &[i32], params: &SvmParams) -> Result<SvmModel> {
    if params.kernel != Kernel::Linear {
        return Err(ModelError::UnsupportedKernel(params.kernel));
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("C must be positive, got {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(ModelError::InvalidParameter("tol must be positive".into()));
    }
    check_xy(x, y.len())?;
    check_labels(y)?;

    let n = x.rows();
    let c = params.c;
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    // +1 for the constant column
    let qd: Vec<f64> = x.row_iter().map(|r| norm_sq(r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut active: Vec<usize> = (0..n).collect();
    // shrinking bounds from the previous epoch
    let mut upper_prev = f64::INFINITY;
    let mut lower_prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut epochs = 0;

    while epochs < params.max_epochs {
        epochs += 1;
        active.shuffle(&mut rng);
        let mut upper = f64::NEG_INFINITY;
        let mut lower = f64::INFINITY;
        let mut k = 0;
        while k < active.len() {
            let i = active[k];
            let r = x.row(i);
            let g = yf[i] * aug_dot(&w, b, r) - 1.0;
            let pg;
            if alpha[i] <= 0.0 {
                if params.shrinking && g > upper_prev {
                    active.swap_remove(k);
                    continue;
                }
                pg = g.min(0.0);
            } else if alpha[i] >= c {
                if params.shrinking && g < lower_prev {
                    active.swap_remove(k);
                    continue;
                }
                pg = g.max(0.0);
            } else {
                pg = g;
            }
            upper = upper.max(pg);
            lower = lower.min(pg);
            if pg.abs() > 1e-14 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let s = (alpha[i] - old) * yf[i];
                if s != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(r) {
                        *wj += s * xj;
                    }
                    b += s;
                }
            }
            k += 1;
        }

        let epoch_violation = upper.max(-lower).max(0.0);
        if epoch_violation < params.tol {
            if active.len() == n {
                // confirm with a fresh gradient before stopping
                if kkt_violation(x, y, &alpha, c) < params.tol {
                    converged = true;
                    break;
                }
            }
            // re-check everything that was shrunk away
            active = (0..n).collect();
            upper_prev = f64::INFINITY;
            lower_prev = f64::NEG_INFINITY;
            continue;
        }
        upper_prev = if upper <= 0.0 { f64::INFINITY } else { upper };
        lower_prev = if lower >= 0.0 { f64::NEG_INFINITY } else { lower };
    }
    if !converged {
        log::debug!("svm did not converge in {} epochs (C = {c})", params.max_epochs);
    }

    // drop the drift accumulated by incremental updates
    let (w, b) = primal_from_dual(x, y, &alpha);
    let dual = alpha.iter().sum::<f64>() - 0.5 * (norm_sq(&w) + b * b);
    let kkt = kkt_violation(x, y, &alpha, c);
    Ok(SvmModel {
        weights: w,
        bias: b,
        c,
        kernel: params.kernel,
        tol: params.tol,
        shrinking: params.shrinking,
        seed: params.seed,
        dual_objective: dual,
        kkt_violation: kkt,
        n_epochs_run: epochs,
        converged,
        alphas: alpha,
    })
}

impl SvmModel {
    pub fn decision_function(&self, x: &[f64]) -> Result<f64> {
        check_width(self.weights.len(), x)?;
        Ok(aug_dot(&self.weights, self.bias, x))
    }

    /// Sign of the decision value; exactly zero maps to +1.
    pub fn predict(&self, x: &[f64]) -> Result<i32> {
        Ok(if self.decision_function(x)? >= 0.0 { 1 } else { -1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn model(w: Vec<f64>, b: f64) -> SvmModel {
        SvmModel {
            weights: w,
            bias: b,
            c: 1.0,
            kernel: Kernel::Linear,
            tol: 1e-4,
            shrinking: true,
            seed: 0,
            dual_objective: 0.0,
            kkt_violation: 0.0,
            n_epochs_run: 0,
            converged: true,
            alphas: vec![],
        }
    }

    #[test]
    fn predict_sign_convention() {
        let m = model(vec![1.0, 0.0], 0.0);
        assert_eq!(m.predict(&[2.0, 5.0]).unwrap(), 1);
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), 1);
        assert_eq!(m.predict(&[-0.5, 9.0]).unwrap(), -1);
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn symmetric_pair() {
        let x = Matrix::from_vec(2, 1, vec![-1.0, 1.0]);
        let m = svm_fit(&x, &[-1, 1], &SvmParams::default()).unwrap();
        assert!(m.converged);
        assert!(m.bias.abs() < 1e-9);
        assert_eq!(m.predict(&[-1.0]).unwrap(), -1);
        assert_eq!(m.predict(&[1.0]).unwrap(), 1);
        assert!(m.predict(&[-0.01]).unwrap() == -1 && m.predict(&[0.01]).unwrap() == 1);
    }

    #[test]
    fn separable_large_c_fits_training_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        while y.len() < 60 {
            let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let s = 2.0 * a - b + 0.5;
            if s.abs() < 0.3 {
                continue;
            }
            rows.extend([a, b]);
            y.push(if s > 0.0 { 1 } else { -1 });
        }
        let x = Matrix::from_vec(60, 2, rows);
        let m = svm_fit(&x, &y, &SvmParams { c: 1000.0, tol: 1e-6, max_epochs: 100_000, ..Default::default() }).unwrap();
        assert!(m.converged);
        for (r, &label) in x.row_iter().zip(&y) {
            assert_eq!(m.predict(r).unwrap(), label);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]);
        assert_eq!(svm_fit(&x, &[1, 1, 1], &SvmParams::default()).unwrap_err(), ModelError::SingleClass);
        assert_eq!(
            svm_fit(&x, &[1, 0, -1], &SvmParams::default()).unwrap_err(),
            ModelError::NonBinaryLabels(0)
        );
        let rbf = SvmParams { kernel: Kernel::Rbf, ..Default::default() };
        assert_eq!(svm_fit(&x, &[1, -1, 1], &rbf).unwrap_err(), ModelError::UnsupportedKernel(Kernel::Rbf));
        let bad_c = SvmParams { c: 0.0, ..Default::default() };
        assert!(matches!(svm_fit(&x, &[1, -1, 1], &bad_c), Err(ModelError::InvalidParameter(_))));
        assert_eq!("poly".parse::<Kernel>().unwrap(), Kernel::Poly);
        assert!("sigmoid".parse::<Kernel>().is_err());
    }

    fn instance() -> impl Strategy<Value = (Matrix, Vec<i32>)> {
        (2usize..30, 1usize..5).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n * d),
                proptest::collection::vec(prop_oneof![Just(-1), Just(1)], n),
            )
                .prop_filter_map("both labels", move |(data, mut y)| {
                    y[0] = -1;
                    y[1] = 1;
                    Some((Matrix::from_vec(n, d, data), y))
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn box_kkt_and_primal_consistency((x, y) in instance(), c in prop_oneof![Just(0.01), Just(1.0), Just(10.0)]) {
            let p = SvmParams { c, tol: 1e-6, max_epochs: 200_000, ..Default::default() };
            let m = svm_fit(&x, &y, &p).unwrap();
            prop_assert!(m.converged);
            prop_assert!(m.alphas.iter().all(|&a| (0.0..=c).contains(&a)));
            prop_assert!(m.kkt_violation <= p.tol);
            let (w, b) = primal_from_dual(&x, &y, &m.alphas);
            for (a, e) in w.iter().zip(&m.weights) {
                prop_assert!((a - e).abs() <= 1e-9);
            }
            prop_assert!((b - m.bias).abs() <= 1e-9);
            prop_assert!((dual_objective(&x, &y, &m.alphas) - m.dual_objective).abs() <= 1e-9);
        }
    }
}

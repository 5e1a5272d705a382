//! From-scratch solvers: LASSO, PCA, randomized-tree importance, shrunken
//! nearest centroid and linear soft-margin SVM.
//!
//! Every fit is single-threaded and deterministic for a given seed. Fitted
//! models are plain data and serialize to tagged JSON through [`TrainedModel`].

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

pub mod centroid;
pub mod lasso;
pub mod pca;
pub mod svm;
pub mod trees;

pub use centroid::{centroid_fit, CentroidModel, CentroidParams, Metric};
pub use lasso::{lasso_alpha_max, lasso_fit, lasso_objective, r2_score, LassoModel, LassoParams};
pub use pca::{pca_fit, PcaModel};
pub use svm::{dual_objective, kkt_violation, primal_from_dual, svm_fit, Kernel, SvmModel, SvmParams};
pub use trees::{tree_importance, TreeEnsembleModel, TreeParams};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("input contains NaN or infinite values")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("only one class present")]
    SingleClass,
    #[error("labels must be -1 or +1, found {0}")]
    NonBinaryLabels(i32),
    #[error("too few rows: need at least {needed}, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("class {0} has no rows")]
    EmptyClass(i32),
    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,
    #[error("kernel {} is not supported (only linear is implemented)", .0.as_str())]
    UnsupportedKernel(Kernel),
    #[error("target is constant; R^2 undefined")]
    ConstantTarget,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Any fitted model, tagged by family for JSON round trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainedModel {
    Lasso(LassoModel),
    Pca(PcaModel),
    TreeEnsemble(TreeEnsembleModel),
    Centroid(CentroidModel),
    Svm(SvmModel),
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models contain only finite numbers")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub(crate) fn check_xy(x: &Matrix, n_targets: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(ModelError::EmptyInput);
    }
    if x.rows() != n_targets {
        return Err(ModelError::DimensionMismatch {
            expected: x.rows(),
            got: n_targets,
        });
    }
    if !x.is_finite() {
        return Err(ModelError::NonFinite);
    }
    Ok(())
}

pub(crate) fn check_width(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Sorted distinct labels.
pub(crate) fn distinct_labels(y: &[i32]) -> Vec<i32> {
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// SplitMix64 finalizer; derives independent child seeds from a base seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! K-fold cross-validation, per-hour sweeps, grid search and report output.
//!
//! Folds, sweep cells and grid cells are evaluated in parallel with rayon.
//! Every collection is gathered in input order, so reports are identical
//! regardless of thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bucketing::HourlyDay;
use crate::features::{build_matrix, FeatureConfig, FeatureError, FeatureMatrix, Scaler};
use crate::ingest::UserProfile;
use crate::linalg::Matrix;
use crate::models::{
    centroid_fit, lasso_fit, r2_score, svm_fit, CentroidParams, Kernel, LassoParams, Metric, ModelError,
    SvmParams, TrainedModel,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("too few rows for {k} folds: have {have}")]
    TooFewRows { k: usize, have: usize },
    #[error("invalid evaluation settings: {0}")]
    InvalidConfig(String),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("every grid cell was rejected")]
    AllCellsRejected,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Assignment of rows to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub n_rows: usize,
    pub k: usize,
    /// Fold id of every row.
    pub assignment: Vec<usize>,
    pub shuffled: bool,
    pub seed: Option<u64>,
}

/// Sizes of `k` contiguous blocks over `n` items; the first `n % k` get one extra.
fn block_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|f| n / k + usize::from(f < n % k)).collect()
}

fn block_assignment(n: usize, k: usize) -> Vec<usize> {
    block_sizes(n, k)
        .into_iter()
        .enumerate()
        .flat_map(|(f, size)| std::iter::repeat_n(f, size))
        .collect()
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Splits `n_rows` rows into `k` folds whose sizes differ by at most one.
///
/// Unshuffled folds are contiguous blocks. With `shuffled`, rows are first
/// permuted with `seed` (0 when absent) and the blocks are laid over the
/// permutation.
pub fn kfold(n_rows: usize, k: usize, shuffled: bool, seed: Option<u64>) -> Result<FoldSpec> {
    if k < 2 {
        return Err(EvalError::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    if n_rows < k {
        return Err(EvalError::TooFewRows { k, have: n_rows });
    }
    let blocks = block_assignment(n_rows, k);
    let assignment = if shuffled {
        let mut a = vec![0; n_rows];
        for (pos, row) in permutation(n_rows, seed.unwrap_or(0)).into_iter().enumerate() {
            a[row] = blocks[pos];
        }
        a
    } else {
        blocks
    };
    Ok(FoldSpec {
        n_rows,
        k,
        assignment,
        shuffled,
        seed,
    })
}

/// Folds that keep all rows of one group together.
///
/// Groups are taken in order of first appearance (optionally permuted) and
/// dealt into contiguous blocks by group count, so fold sizes in rows may
/// differ by more than one.
pub fn grouped_kfold(groups: &[&str], k: usize, shuffled: bool, seed: Option<u64>) -> Result<FoldSpec> {
    let mut order: Vec<&str> = Vec::new();
    for g in groups {
        if !order.contains(g) {
            order.push(g);
        }
    }
    if k < 2 {
        return Err(EvalError::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    if order.len() < k {
        return Err(EvalError::TooFewRows { k, have: order.len() });
    }
    if shuffled {
        let p = permutation(order.len(), seed.unwrap_or(0));
        order = p.into_iter().map(|i| order[i]).collect();
    }
    let blocks = block_assignment(order.len(), k);
    let fold_of: BTreeMap<&str, usize> = order.iter().copied().zip(blocks).collect();
    Ok(FoldSpec {
        n_rows: groups.len(),
        k,
        assignment: groups.iter().map(|g| fold_of[g]).collect(),
        shuffled,
        seed,
    })
}

impl FoldSpec {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n_rows).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n_rows).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// A model family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Regression on total daily steps, scored by R^2.
    Lasso(LassoParams),
    Svm(SvmParams),
    Centroid(CentroidParams),
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Lasso(_) => "lasso",
            ModelSpec::Svm(_) => "svm",
            ModelSpec::Centroid(_) => "centroid",
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::Lasso(_))
    }

    /// Compact `key=value` list separated by `;`.
    pub fn param_summary(&self) -> String {
        match self {
            ModelSpec::Lasso(p) => format!("alpha={};max_iter={};tol={}", p.alpha, p.max_iter, p.tol),
            ModelSpec::Svm(p) => format!(
                "C={};kernel={};shrinking={};tol={};max_epochs={};seed={}",
                p.c,
                p.kernel.as_str(),
                p.shrinking,
                p.tol,
                p.max_epochs,
                p.seed
            ),
            ModelSpec::Centroid(p) => {
                let shrink = p.shrink_threshold.map_or("none".to_string(), |t| t.to_string());
                format!("metric={};shrink={}", p.metric.as_str(), shrink)
            }
        }
    }

    /// Larger means more regularized; used to break score ties.
    fn regularization(&self) -> f64 {
        match self {
            ModelSpec::Lasso(p) => p.alpha,
            ModelSpec::Svm(p) => -p.c,
            ModelSpec::Centroid(p) => p.shrink_threshold.unwrap_or(0.0),
        }
    }

    /// Fits on rows that are already standardized.
    pub fn fit(&self, x: &Matrix, y_class: &[i32], y_reg: &[f64]) -> Result<TrainedModel> {
        Ok(match self {
            ModelSpec::Lasso(p) => TrainedModel::Lasso(lasso_fit(x, y_reg, p)?),
            ModelSpec::Svm(p) => TrainedModel::Svm(svm_fit(x, y_class, p)?),
            ModelSpec::Centroid(p) => TrainedModel::Centroid(centroid_fit(x, y_class, p)?),
        })
    }
}

/// Output of a fitted model for one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// `true` when the goal is predicted to be reached.
    Class(bool),
    Value(f64),
}

/// Predicts one standardized row with a classifier or regressor.
pub fn predict_row(model: &TrainedModel, x: &[f64]) -> Result<Prediction> {
    Ok(match model {
        TrainedModel::Lasso(m) => Prediction::Value(m.predict(x)?),
        TrainedModel::Svm(m) => Prediction::Class(m.predict(x)? > 0),
        TrainedModel::Centroid(m) => Prediction::Class(m.predict(x)? > 0),
        TrainedModel::TreeEnsemble(m) => Prediction::Class(m.predict(x)? > 0),
        TrainedModel::Pca(_) => {
            return Err(EvalError::InvalidConfig("a PCA model does not make predictions".into()));
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelSpec,
    pub cutoff_hour: Option<usize>,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
    /// Folds whose training split held one class, scored as the
    /// majority-class baseline.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_folds: Vec<usize>,
}

fn accuracy(truth: &[i32], pred: &[i32]) -> f64 {
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn majority(labels: &[i32]) -> i32 {
    let pos = labels.iter().filter(|&&v| v > 0).count();
    // ties go to the positive class, matching the sign(0) convention
    if 2 * pos >= labels.len() {
        1
    } else {
        -1
    }
}

/// Score of one fold and whether it fell back to the baseline.
fn score_fold(matrix: &FeatureMatrix, spec: &ModelSpec, folds: &FoldSpec, fold: usize) -> Result<(f64, bool)> {
    let train = folds.train_rows(fold);
    let test = folds.test_rows(fold);
    let scaler = Scaler::fit(train.iter().map(|&i| matrix.rows[i].x.as_slice()), &matrix.column_kinds)?;
    let x_of = |idx: &[usize]| {
        Matrix::from_rows(
            matrix.n_cols(),
            idx.iter().map(|&i| matrix.rows[i].x.as_slice()),
        )
    };
    let x_train = scaler.transform_matrix(&x_of(&train));
    let x_test = scaler.transform_matrix(&x_of(&test));
    let labels = matrix.signed_labels();
    let targets = matrix.regression_targets();
    let pick_i = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let pick_f = |idx: &[usize]| idx.iter().map(|&i| targets[i]).collect::<Vec<_>>();

    if !spec.is_classifier() {
        let model = spec.fit(&x_train, &pick_i(&train), &pick_f(&train))?;
        let TrainedModel::Lasso(m) = model else { unreachable!() };
        let pred = m.predict_all(&x_test)?;
        return Ok((r2_score(&pick_f(&test), &pred)?, false));
    }

    let y_train = pick_i(&train);
    let y_test = pick_i(&test);
    if y_train.iter().all(|&v| v == y_train[0]) {
        let baseline = vec![majority(&y_train); y_test.len()];
        return Ok((accuracy(&y_test, &baseline), true));
    }
    let model = spec.fit(&x_train, &y_train, &pick_f(&train))?;
    let pred = x_test
        .row_iter()
        .map(|r| match predict_row(&model, r)? {
            Prediction::Class(c) => Ok(if c { 1 } else { -1 }),
            Prediction::Value(_) => unreachable!("classifier returned a value"),
        })
        .collect::<Result<Vec<i32>>>()?;
    Ok((accuracy(&y_test, &pred), false))
}

/// Cross-validated score of `spec` on `matrix`.
///
/// Standardization and the model are fitted on each training split only.
pub fn cv_score(matrix: &FeatureMatrix, spec: &ModelSpec, folds: &FoldSpec) -> Result<CvReport> {
    if folds.n_rows != matrix.n_rows() {
        return Err(EvalError::InvalidConfig(format!(
            "fold spec covers {} rows, matrix has {}",
            folds.n_rows,
            matrix.n_rows()
        )));
    }
    let outcomes = (0..folds.k)
        .into_par_iter()
        .map(|f| score_fold(matrix, spec, folds, f))
        .collect::<Result<Vec<_>>>()?;
    let fold_scores: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let degenerate_folds: Vec<usize> = outcomes.iter().enumerate().filter(|(_, o)| o.1).map(|(f, _)| f).collect();
    if !degenerate_folds.is_empty() {
        log::warn!(
            "{}: folds {:?} had a one-class training split; scored as majority baseline",
            spec.family(),
            degenerate_folds
        );
    }
    let mean_score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
    Ok(CvReport {
        model: spec.clone(),
        cutoff_hour: Some(matrix.config.cutoff_hour),
        fold_scores,
        mean_score,
        degenerate_folds,
    })
}

/// How folds are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub k: usize,
    pub shuffled: bool,
    pub seed: Option<u64>,
    /// Keep every user's days inside one fold.
    #[serde(default)]
    pub group_by_user: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k: 5,
            shuffled: false,
            seed: None,
            group_by_user: false,
        }
    }
}

impl EvalSettings {
    pub fn folds_for(&self, matrix: &FeatureMatrix) -> Result<FoldSpec> {
        if self.group_by_user {
            let users: Vec<&str> = matrix.rows.iter().map(|r| r.user_id.as_str()).collect();
            grouped_kfold(&users, self.k, self.shuffled, self.seed)
        } else {
            kfold(matrix.n_rows(), self.k, self.shuffled, self.seed)
        }
    }
}

/// Row and label counts of the matrix built at one cutoff hour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub cutoff_hour: usize,
    pub rows: usize,
    pub positives: usize,
    pub users: usize,
    pub columns: usize,
    pub dropped_no_history: usize,
}

impl DatasetFingerprint {
    pub fn of(matrix: &FeatureMatrix, dropped_no_history: usize) -> Self {
        let mut users: Vec<&str> = matrix.rows.iter().map(|r| r.user_id.as_str()).collect();
        users.dedup();
        DatasetFingerprint {
            cutoff_hour: matrix.config.cutoff_hour,
            rows: matrix.n_rows(),
            positives: matrix.n_positive(),
            users: users.len(),
            columns: matrix.n_cols(),
            dropped_no_history,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<CvReport>,
    pub datasets: Vec<DatasetFingerprint>,
    pub features: FeatureConfig,
    pub eval: EvalSettings,
}

/// Cross-validates every model spec at every cutoff hour.
///
/// Rows come out ordered by hour, then by the order of `specs`.
pub fn hourly_sweep(
    days: &[HourlyDay],
    profiles: &BTreeMap<String, UserProfile>,
    hours: &[usize],
    specs: &[ModelSpec],
    template: &FeatureConfig,
    settings: &EvalSettings,
) -> Result<SweepReport> {
    let mut hours = hours.to_vec();
    hours.sort_unstable();
    hours.dedup();
    if let Some(&h) = hours.iter().find(|&&h| h >= crate::bucketing::HOURS_PER_DAY) {
        return Err(EvalError::InvalidConfig(format!("hour {h} outside 0..23")));
    }
    let built = hours
        .par_iter()
        .map(|&h| {
            let (m, summary) = build_matrix(days, profiles, &template.with_cutoff(h))?;
            let folds = settings.folds_for(&m)?;
            Ok((m, summary, folds))
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..built.len())
        .flat_map(|h| (0..specs.len()).map(move |s| (h, s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(h, s)| cv_score(&built[h].0, &specs[s], &built[h].2))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        rows,
        datasets: built
            .iter()
            .map(|(m, summary, _)| DatasetFingerprint::of(m, summary.dropped_no_history))
            .collect(),
        features: template.clone(),
        eval: *settings,
    })
}

/// Named hyperparameter lists for one family; cells are the cartesian
/// product, with the last-listed parameter varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ParamGrid {
    Lasso {
        alpha: Vec<f64>,
        #[serde(default)]
        base: LassoParams,
    },
    Svm {
        c: Vec<f64>,
        kernel: Vec<Kernel>,
        shrinking: Vec<bool>,
        #[serde(default)]
        base: SvmParams,
    },
    Centroid {
        metric: Vec<Metric>,
        shrink_threshold: Vec<Option<f64>>,
    },
}

impl ParamGrid {
    pub fn cells(&self) -> Vec<ModelSpec> {
        match self {
            ParamGrid::Lasso { alpha, base } => alpha
                .iter()
                .map(|&alpha| ModelSpec::Lasso(LassoParams { alpha, ..*base }))
                .collect(),
            ParamGrid::Svm {
                c,
                kernel,
                shrinking,
                base,
            } => {
                let mut out = Vec::new();
                for &c in c {
                    for &kernel in kernel {
                        for &shrinking in shrinking {
                            out.push(ModelSpec::Svm(SvmParams {
                                c,
                                kernel,
                                shrinking,
                                ..*base
                            }));
                        }
                    }
                }
                out
            }
            ParamGrid::Centroid {
                metric,
                shrink_threshold,
            } => {
                let mut out = Vec::new();
                for &metric in metric {
                    for &shrink_threshold in shrink_threshold {
                        out.push(ModelSpec::Centroid(CentroidParams {
                            metric,
                            shrink_threshold,
                            classes: None,
                        }));
                    }
                }
                out
            }
        }
    }
}

/// One grid cell: either a CV report or the reason the cell was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub spec: ModelSpec,
    pub report: Option<CvReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index into `cells`.
    pub best: usize,
}

impl GridResult {
    pub fn best_spec(&self) -> &ModelSpec {
        &self.cells[self.best].spec
    }

    pub fn best_report(&self) -> &CvReport {
        self.cells[self.best].report.as_ref().expect("best cell has a report")
    }

    pub fn reports(&self) -> Vec<&CvReport> {
        self.cells.iter().filter_map(|c| c.report.as_ref()).collect()
    }
}

/// Evaluates every cell of `grid` and picks the highest mean score.
///
/// Ties go to the more regularized cell (smaller C, larger shrink threshold,
/// larger alpha), then to the earlier cell. Cells asking for an unsupported
/// kernel are kept in the table as rejected.
pub fn grid_search(matrix: &FeatureMatrix, grid: &ParamGrid, folds: &FoldSpec) -> Result<GridResult> {
    let specs = grid.cells();
    if specs.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let cells = specs
        .into_par_iter()
        .map(|spec| match cv_score(matrix, &spec, folds) {
            Ok(r) => Ok(GridCell {
                spec,
                report: Some(r),
                rejected: None,
            }),
            Err(EvalError::Model(e @ ModelError::UnsupportedKernel(_))) => Ok(GridCell {
                spec,
                report: None,
                rejected: Some(e.to_string()),
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<usize> = None;
    for (i, cell) in cells.iter().enumerate() {
        let Some(r) = &cell.report else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let br = cells[b].report.as_ref().unwrap();
                r.mean_score > br.mean_score
                    || (r.mean_score == br.mean_score
                        && cell.spec.regularization() > cells[b].spec.regularization())
            }
        };
        if better {
            best = Some(i);
        }
    }
    let best = best.ok_or(EvalError::AllCellsRejected)?;
    Ok(GridResult { cells, best })
}

/// Fixed eight-decimal rendering used by every report.
pub fn fmt8(v: f64) -> String {
    format!("{v:.8}")
}

/// `hour,model,param_summary,fold1..foldK,mean` with 8-decimal floats.
///
/// Rejected grid cells keep their row with empty score fields.
pub fn report_csv(rows: &[(&ModelSpec, Option<&CvReport>)], k: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["hour".to_string(), "model".into(), "param_summary".into()];
    header.extend((1..=k).map(|f| format!("fold{f}")));
    header.push("mean".into());
    w.write_record(&header).expect("in-memory write");
    for (spec, report) in rows {
        let mut rec = vec![
            report.and_then(|r| r.cutoff_hour).map_or(String::new(), |h| h.to_string()),
            spec.family().to_string(),
            spec.param_summary(),
        ];
        match report {
            Some(r) => {
                rec.extend(r.fold_scores.iter().map(|&s| fmt8(s)));
                rec.push(fmt8(r.mean_score));
            }
            None => rec.extend(std::iter::repeat_n(String::new(), k + 1)),
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let rows: Vec<_> = self.rows.iter().map(|r| (&r.model, Some(r))).collect();
        report_csv(&rows, self.eval.k)
    }

    /// `hour` followed by one mean-score column per model, for plotting.
    pub fn to_plot_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut labels: Vec<String> = Vec::new();
        for r in &self.rows {
            let label = format!("{}[{}]", r.model.family(), r.model.param_summary());
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
        let mut header = vec!["hour".to_string()];
        header.extend(labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        let mut by_hour: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for r in &self.rows {
            let h = r.cutoff_hour.unwrap_or_default();
            let label = format!("{}[{}]", r.model.family(), r.model.param_summary());
            let col = labels.iter().position(|l| *l == label).unwrap();
            let line = by_hour.entry(h).or_insert_with(|| vec![String::new(); labels.len()]);
            line[col] = fmt8(r.mean_score);
        }
        for (h, line) in by_hour {
            let mut rec = vec![h.to_string()];
            rec.extend(line);
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl GridResult {
    pub fn to_csv(&self, k: usize) -> String {
        let rows: Vec<_> = self.cells.iter().map(|c| (&c.spec, c.report.as_ref())).collect();
        report_csv(&rows, k)
    }
}

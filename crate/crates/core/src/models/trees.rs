//! Fully grown randomized classification trees and impurity-based importance.
//!
//! At every node a random subset of `ceil(sqrt(d))` non-constant features is
//! drawn. Each candidate gets one random threshold, placed uniformly inside a
//! randomly chosen gap between consecutive distinct values, and the candidate
//! with the largest Gini decrease wins. Importance of a feature is the total
//! sample-weighted Gini decrease of its splits over all trees, normalized to 1.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_width, check_xy, distinct_labels, mix_seed, ModelError, Result};
use crate::linalg::Matrix;

const MIN_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub n_estimators: usize,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            n_estimators: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        /// Index into the ensemble's class list.
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn predict_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub trees: Vec<DecisionTree>,
    pub importances: Vec<f64>,
    pub classes: Vec<i32>,
    pub n_estimators: usize,
    pub seed: u64,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
    rng: ChaCha8Rng,
    /// Unnormalized sum of `n_node * gini_node - n_l * gini_l - n_r * gini_r`.
    decrease: Vec<f64>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    /// `n_l * gini_l + n_r * gini_r`
    child_impurity: f64,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn random_threshold(&mut self, idx: &[usize], feature: usize) -> Option<f64> {
        let mut vals: Vec<f64> = idx.iter().map(|&i| self.x.get(i, feature)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        if vals.len() < 2 {
            return None;
        }
        let g = self.rng.random_range(0..vals.len() - 1);
        let (lo, hi) = (vals[g], vals[g + 1]);
        let t = lo + self.rng.random::<f64>() * (hi - lo);
        // keep at least one value on each side
        Some(if t < hi { t } else { lo })
    }

    fn evaluate(&self, idx: &[usize], feature: usize, threshold: f64) -> f64 {
        let mut left = vec![0; self.n_classes];
        let mut right = vec![0; self.n_classes];
        for &i in idx {
            if self.x.get(i, feature) <= threshold {
                left[self.y[i]] += 1;
            } else {
                right[self.y[i]] += 1;
            }
        }
        let nl: usize = left.iter().sum();
        let nr: usize = right.iter().sum();
        nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<Candidate> {
        let mut features: Vec<usize> = (0..self.x.cols()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<Candidate> = None;
        let mut tried = 0;
        for feature in features {
            if tried == self.max_features {
                break;
            }
            // constant features do not count toward the draw
            let Some(threshold) = self.random_threshold(idx, feature) else { continue };
            tried += 1;
            let child_impurity = self.evaluate(idx, feature, threshold);
            if best.as_ref().is_none_or(|b| child_impurity < b.child_impurity) {
                best = Some(Candidate {
                    feature,
                    threshold,
                    child_impurity,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>) -> DecisionTree {
        let mut nodes = vec![Node::Leaf { class: 0 }];
        let mut stack = vec![(0usize, rows)];
        while let Some((at, idx)) = stack.pop() {
            let counts = self.counts(&idx);
            // majority class; ties to the lower class index
            let majority = (0..self.n_classes).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            if pure || idx.len() < 2 {
                nodes[at] = Node::Leaf { class: majority };
                continue;
            }
            let Some(split) = self.best_split(&idx) else {
                nodes[at] = Node::Leaf { class: majority };
                continue;
            };
            let parent = idx.len() as f64 * gini(&counts, idx.len());
            self.decrease[split.feature] += (parent - split.child_impurity).max(0.0);
            let (l, r): (Vec<usize>, Vec<usize>) = idx
                .iter()
                .partition(|&&i| self.x.get(i, split.feature) <= split.threshold);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { class: majority });
            nodes.push(Node::Leaf { class: majority });
            nodes[at] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: li,
                right: ri,
            };
            stack.push((ri, r));
            stack.push((li, l));
        }
        DecisionTree { nodes }
    }
}

/// Fits `n_estimators` randomized trees on the full data and reports
/// normalized impurity-decrease importances.
pub fn tree_importance(x: &Matrix, y: &[i32], params: &TreeParams) -> Result<TreeEnsembleModel> {
    check_xy(x, y.len())?;
    if x.rows() < MIN_ROWS {
        return Err(ModelError::TooFewRows {
            needed: MIN_ROWS,
            have: x.rows(),
        });
    }
    if params.n_estimators == 0 {
        return Err(ModelError::InvalidParameter("n_estimators must be positive".into()));
    }
    let classes = distinct_labels(y);
    if classes.len() < 2 {
        return Err(ModelError::SingleClass);
    }
    let encoded: Vec<usize> = y.iter().map(|v| classes.binary_search(v).unwrap()).collect();
    let d = x.cols();
    let max_features = ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1));

    let mut decrease = vec![0.0; d];
    let mut trees = Vec::with_capacity(params.n_estimators);
    for t in 0..params.n_estimators {
        let mut grower = Grower {
            x,
            y: &encoded,
            n_classes: classes.len(),
            max_features,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(params.seed, t as u64)),
            decrease: vec![0.0; d],
        };
        trees.push(grower.grow((0..x.rows()).collect()));
        for (acc, v) in decrease.iter_mut().zip(&grower.decrease) {
            *acc += v;
        }
    }
    let total: f64 = decrease.iter().sum();
    let importances = if total > 0.0 {
        decrease.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / d as f64; d]
    };
    Ok(TreeEnsembleModel {
        trees,
        importances,
        classes,
        n_estimators: params.n_estimators,
        seed: params.seed,
    })
}

impl TreeEnsembleModel {
    /// Majority vote over trees; ties go to the earlier class.
    pub fn predict(&self, x: &[f64]) -> Result<i32> {
        check_width(self.importances.len(), x)?;
        let mut votes = vec![0usize; self.classes.len()];
        for t in &self.trees {
            votes[t.predict_index(x)] += 1;
        }
        let best = (0..votes.len()).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
        Ok(self.classes[best])
    }

    /// Feature indices sorted by decreasing importance.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.importances.len()).collect();
        idx.sort_by(|&a, &b| self.importances[b].total_cmp(&self.importances[a]).then(a.cmp(&b)));
        idx
    }

    pub fn argmax(&self) -> usize {
        self.ranking()[0]
    }
}

//! Conventional classifiers over sparse (TF-IDF or count) features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SparseMatrix;
use crate::error::{Error, Result};
use crate::numerics::{argmax, log_sum_exp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlKind {
    NaiveBayes,
    Logistic,
    Svm,
    Tree,
    AdaBoost,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlHyper {
    /// Laplace smoothing for naive Bayes.
    pub nb_alpha: f64,
    /// L2 strength for the SGD-trained linear models.
    pub l2: f64,
    pub sgd_epochs: usize,
    pub sgd_lr: f64,
    pub tree_depth: usize,
    pub tree_min_split: usize,
    pub boost_rounds: usize,
}

impl Default for MlHyper {
    fn default() -> Self {
        MlHyper { nb_alpha: 1.0, l2: 1e-4, sgd_epochs: 15, sgd_lr: 0.5, tree_depth: 12, tree_min_split: 2, boost_rounds: 50 }
    }
}

/// Multinomial naive Bayes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub class_log_prior: Vec<f64>,
    /// `[category][term]`, each row a log-distribution over terms.
    pub feature_log_prob: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl NaiveBayes {
    pub fn fit(x: &SparseMatrix, labels: &[usize], k: usize, alpha: f64) -> Self {
        let v = x.n_cols;
        let mut counts = vec![vec![0.0; v]; k];
        let mut docs = vec![0usize; k];
        for (i, &y) in labels.iter().enumerate() {
            docs[y] += 1;
            let (idx, vals) = x.row(i);
            for (&j, &val) in idx.iter().zip(vals) {
                counts[y][j as usize] += val;
            }
        }
        let n = labels.len() as f64;
        let class_log_prior = docs.iter().map(|&d| (d as f64 / n).ln()).collect();
        let feature_log_prob = counts
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum::<f64>() + alpha * v as f64;
                row.iter().map(|&c| ((c + alpha) / total).ln()).collect()
            })
            .collect();
        NaiveBayes { class_log_prior, feature_log_prob, alpha }
    }

    /// Normalized log-posterior of each category for row `i`.
    pub fn log_posterior(&self, x: &SparseMatrix, i: usize) -> Vec<f64> {
        let (idx, vals) = x.row(i);
        let joint: Vec<f64> = self
            .class_log_prior
            .iter()
            .zip(&self.feature_log_prob)
            .map(|(&prior, lp)| prior + idx.iter().zip(vals).map(|(&j, &val)| val * lp[j as usize]).sum::<f64>())
            .collect();
        let z = log_sum_exp(&joint);
        joint.iter().map(|j| j - z).collect()
    }
}

/// Linear scores `W x + b` for logistic regression or one-vs-rest SVM.
/// Inputs are L2-normalized per row before scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum LinearLoss {
    Softmax,
    Hinge,
}

impl Linear {
    fn scores(&self, idx: &[u32], vals: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + idx.iter().zip(vals).map(|(&j, &v)| w[j as usize] * v).sum::<f64>())
            .collect()
    }

    /// SGD with L2 decay kept as a global scale, so each update touches only
    /// the nonzero features. Step size `lr / (1 + lr * l2 * t)`.
    fn fit(x: &SparseMatrix, labels: &[usize], k: usize, h: &MlHyper, loss: LinearLoss, seed: u64) -> Self {
        let x = x.l2_normalized();
        let v = x.n_cols;
        let mut w = vec![vec![0.0; v]; k];
        let mut b = vec![0.0; k];
        let mut scale = 1.0;
        let mut order: Vec<usize> = (0..labels.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        let mut g = vec![0.0; k];
        for _ in 0..h.sgd_epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1.0;
                let eta = h.sgd_lr / (1.0 + h.sgd_lr * h.l2 * t);
                let (idx, vals) = x.row(i);
                let z: Vec<f64> = (0..k)
                    .map(|c| b[c] + scale * idx.iter().zip(vals).map(|(&j, &xv)| w[c][j as usize] * xv).sum::<f64>())
                    .collect();
                match loss {
                    LinearLoss::Softmax => {
                        let lse = log_sum_exp(&z);
                        for c in 0..k {
                            g[c] = (z[c] - lse).exp() - if c == labels[i] { 1.0 } else { 0.0 };
                        }
                    }
                    LinearLoss::Hinge => {
                        for c in 0..k {
                            let y = if c == labels[i] { 1.0 } else { -1.0 };
                            g[c] = if y * z[c] < 1.0 { -y } else { 0.0 };
                        }
                    }
                }
                scale *= 1.0 - eta * h.l2;
                for c in 0..k {
                    if g[c] == 0.0 {
                        continue;
                    }
                    for (&j, &xv) in idx.iter().zip(vals) {
                        w[c][j as usize] -= eta * g[c] * xv / scale;
                    }
                    b[c] -= eta * g[c];
                }
                if scale < 1e-9 {
                    w.iter_mut().flatten().for_each(|x| *x *= scale);
                    scale = 1.0;
                }
            }
        }
        w.iter_mut().flatten().for_each(|x| *x *= scale);
        Linear { weights: w, bias: b }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { label: usize },
    Split { feature: u32, threshold: f64, left: usize, right: usize },
}

/// CART-style tree on weighted Gini impurity; `x <= threshold` goes left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

fn gini_weighted(w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    total - w.iter().map(|c| c * c).sum::<f64>() / total
}

struct SplitChoice {
    feature: u32,
    threshold: f64,
    score: f64,
}

impl Tree {
    pub fn fit(x: &SparseMatrix, labels: &[usize], weights: &[f64], k: usize, max_depth: usize, min_split: usize) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| weights[i] > 0.0).collect();
        let mut feats: Vec<Vec<(f64, usize)>> = vec![Vec::new(); x.n_cols];
        tree.grow(x, labels, weights, k, rows, 0, max_depth, min_split, &mut feats);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow(
        &mut self,
        x: &SparseMatrix,
        labels: &[usize],
        weights: &[f64],
        k: usize,
        rows: Vec<usize>,
        depth: usize,
        max_depth: usize,
        min_split: usize,
        feats: &mut [Vec<(f64, usize)>],
    ) -> usize {
        let mut class_w = vec![0.0; k];
        for &r in &rows {
            class_w[labels[r]] += weights[r];
        }
        let label = argmax(&class_w);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { label });
        let parent = gini_weighted(&class_w);
        if depth >= max_depth || rows.len() < min_split.max(2) || parent <= 1e-12 {
            return id;
        }
        let Some(best) = Self::best_split(x, labels, weights, &rows, &class_w, feats) else { return id };
        if best.score >= parent - 1e-12 {
            return id;
        }
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| x.get(r, best.feature) <= best.threshold);
        let l = self.grow(x, labels, weights, k, left, depth + 1, max_depth, min_split, feats);
        let r = self.grow(x, labels, weights, k, right, depth + 1, max_depth, min_split, feats);
        self.nodes[id] = TreeNode::Split { feature: best.feature, threshold: best.threshold, left: l, right: r };
        id
    }

    fn best_split(
        x: &SparseMatrix,
        labels: &[usize],
        weights: &[f64],
        rows: &[usize],
        class_w: &[f64],
        feats: &mut [Vec<(f64, usize)>],
    ) -> Option<SplitChoice> {
        let mut touched: Vec<u32> = Vec::new();
        for &r in rows {
            let (idx, vals) = x.row(r);
            for (&j, &v) in idx.iter().zip(vals) {
                let list = &mut feats[j as usize];
                if list.is_empty() {
                    touched.push(j);
                }
                list.push((v, r));
            }
        }
        touched.sort_unstable();
        let mut best: Option<SplitChoice> = None;
        let k = class_w.len();
        for &j in &touched {
            let list = &mut feats[j as usize];
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut right = vec![0.0; k];
            let mut right_n = 0usize;
            for &(_, r) in list.iter() {
                right[labels[r]] += weights[r];
                right_n += 1;
            }
            let mut left: Vec<f64> = class_w.iter().zip(&right).map(|(a, b)| a - b).collect();
            let mut left_n = rows.len() - right_n;
            // Candidate cut below the smallest stored value, then between
            // consecutive distinct values.
            let mut consider = |left: &[f64], right: &[f64], ln: usize, rn: usize, thr: f64| {
                if ln == 0 || rn == 0 {
                    return;
                }
                let score = gini_weighted(left) + gini_weighted(right);
                if best.as_ref().is_none_or(|b| score < b.score - 1e-12) {
                    best = Some(SplitChoice { feature: j, threshold: thr, score });
                }
            };
            let first = list[0].0;
            consider(&left, &right, left_n, right_n, if first > 0.0 { first / 2.0 } else { first - 1.0 });
            for p in 0..list.len() {
                let (v, r) = list[p];
                left[labels[r]] += weights[r];
                right[labels[r]] -= weights[r];
                left_n += 1;
                right_n -= 1;
                if p + 1 < list.len() && list[p + 1].0 > v {
                    consider(&left, &right, left_n, right_n, (v + list[p + 1].0) / 2.0);
                }
            }
            list.clear();
        }
        best
    }

    pub fn predict_row(&self, x: &SparseMatrix, i: usize) -> usize {
        let mut n = 0;
        loop {
            match self.nodes[n] {
                TreeNode::Leaf { label } => return label,
                TreeNode::Split { feature, threshold, left, right } => {
                    n = if x.get(i, feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], n: usize) -> usize {
            match nodes[n] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// SAMME boosting over decision stumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoost {
    pub stumps: Vec<Tree>,
    pub alphas: Vec<f64>,
    pub num_categories: usize,
}

impl AdaBoost {
    pub fn fit(x: &SparseMatrix, labels: &[usize], k: usize, rounds: usize) -> Self {
        let n = labels.len();
        let mut w = vec![1.0 / n as f64; n];
        let mut model = AdaBoost { stumps: Vec::new(), alphas: Vec::new(), num_categories: k };
        for _ in 0..rounds {
            let stump = Tree::fit(x, labels, &w, k, 1, 2);
            let miss: Vec<bool> = (0..n).map(|i| stump.predict_row(x, i) != labels[i]).collect();
            let err: f64 = w.iter().zip(&miss).filter(|(_, &m)| m).map(|(w, _)| w).sum::<f64>() / w.iter().sum::<f64>();
            if err >= 1.0 - 1.0 / k as f64 {
                break;
            }
            if err <= 1e-12 {
                // A perfect stump outvotes everything before it.
                let alpha = model.alphas.iter().sum::<f64>() + 1.0;
                model.stumps.push(stump);
                model.alphas.push(alpha);
                break;
            }
            let alpha = ((1.0 - err) / err).ln() + (k as f64 - 1.0).ln();
            for (wi, &m) in w.iter_mut().zip(&miss) {
                if m {
                    *wi *= alpha.exp();
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            model.stumps.push(stump);
            model.alphas.push(alpha);
        }
        model
    }

    /// Prediction using only the first `stages` stumps.
    pub fn predict_row_staged(&self, x: &SparseMatrix, i: usize, stages: usize) -> usize {
        let mut votes = vec![0.0; self.num_categories];
        for (s, a) in self.stumps.iter().zip(&self.alphas).take(stages) {
            votes[s.predict_row(x, i)] += a;
        }
        argmax(&votes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MlModel {
    NaiveBayes(NaiveBayes),
    Logistic(Linear),
    Svm(Linear),
    Tree(Tree),
    AdaBoost(AdaBoost),
}

impl MlModel {
    pub fn predict_row(&self, x: &SparseMatrix, i: usize) -> usize {
        match self {
            MlModel::NaiveBayes(nb) => argmax(&nb.log_posterior(x, i)),
            MlModel::Logistic(l) | MlModel::Svm(l) => {
                let (idx, vals) = x.row(i);
                let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
                let vals: Vec<f64> = vals.iter().map(|v| if norm > 0.0 { v / norm } else { *v }).collect();
                argmax(&l.scores(idx, &vals))
            }
            MlModel::Tree(t) => t.predict_row(x, i),
            MlModel::AdaBoost(a) => a.predict_row_staged(x, i, a.stumps.len()),
        }
    }

    pub fn predict(&self, x: &SparseMatrix) -> Vec<usize> {
        (0..x.n_rows()).map(|i| self.predict_row(x, i)).collect()
    }
}

/// Fits one conventional model on feature rows `x` with `labels < k`.
pub fn train_ml(kind: MlKind, x: &SparseMatrix, labels: &[usize], k: usize, hyper: &MlHyper, seed: u64) -> Result<MlModel> {
    if x.n_rows() != labels.len() {
        return Err(Error::Config(format!("{} feature rows but {} labels", x.n_rows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::UnknownCategory { category: bad, num_categories: k });
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::SingleCategory);
    }
    Ok(match kind {
        MlKind::NaiveBayes => MlModel::NaiveBayes(NaiveBayes::fit(x, labels, k, hyper.nb_alpha)),
        MlKind::Logistic => MlModel::Logistic(Linear::fit(x, labels, k, hyper, LinearLoss::Softmax, seed)),
        MlKind::Svm => MlModel::Svm(Linear::fit(x, labels, k, hyper, LinearLoss::Hinge, seed)),
        MlKind::Tree => {
            let w = vec![1.0; labels.len()];
            MlModel::Tree(Tree::fit(x, labels, &w, k, hyper.tree_depth, hyper.tree_min_split))
        }
        MlKind::AdaBoost => MlModel::AdaBoost(AdaBoost::fit(x, labels, k, hyper.boost_rounds)),
    })
}

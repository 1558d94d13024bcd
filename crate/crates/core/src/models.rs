//! The seven ensemble learners and weighted voting.
//!
//! Every learner trains on a [`SparseMatrix`] with boolean labels (true =
//! the more classified side) and scores documents into `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{SparseMatrix, SparseVector};
use crate::seed::{derive_seed, rng_for};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassifierKind {
    SgdLogloss,
    LogisticRegression,
    Ridge,
    BaggingTrees,
    ExtraTrees,
    Adaboost,
    MultinomialNb,
}

impl ClassifierKind {
    /// Ensemble member order.
    pub const ALL: [ClassifierKind; 7] = [
        ClassifierKind::SgdLogloss,
        ClassifierKind::LogisticRegression,
        ClassifierKind::Ridge,
        ClassifierKind::BaggingTrees,
        ClassifierKind::ExtraTrees,
        ClassifierKind::Adaboost,
        ClassifierKind::MultinomialNb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::SgdLogloss => "SGD_LOGLOSS",
            ClassifierKind::LogisticRegression => "LOGISTIC_REGRESSION",
            ClassifierKind::Ridge => "RIDGE",
            ClassifierKind::BaggingTrees => "BAGGING_TREES",
            ClassifierKind::ExtraTrees => "EXTRA_TREES",
            ClassifierKind::Adaboost => "ADABOOST",
            ClassifierKind::MultinomialNb => "MULTINOMIAL_NB",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(
            self,
            ClassifierKind::SgdLogloss | ClassifierKind::LogisticRegression | ClassifierKind::Ridge
        )
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canon = s.to_uppercase().replace('-', "_");
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.as_str() == canon)
            .ok_or_else(|| Error::config(format!("unknown classifier kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Sgd,
    FullBatch,
}

/// Features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, width: usize) -> Option<usize> {
        match self {
            MaxFeatures::All => None,
            MaxFeatures::Sqrt => Some(((width as f64).sqrt() as usize).max(1)),
            MaxFeatures::Count(k) => Some(k.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum BaseLearner {
    /// Small bootstrapped forest voting by majority.
    Forest { n_trees: usize, max_depth: usize },
    /// One exact tree on the weighted sample (depth 1 is a stump).
    Tree { max_depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub solver: Solver,
    pub ridge_lambda: f64,
    pub cg_max_iter: usize,
    pub cg_tol: f64,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` picks the kind's default (all features for bagging, sqrt
    /// otherwise).
    pub max_features: Option<MaxFeatures>,
    pub alpha: f64,
    pub rounds: usize,
    pub base: BaseLearner,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            learning_rate: 0.1,
            epochs: 20,
            l2: 1e-4,
            solver: Solver::Sgd,
            ridge_lambda: 1.0,
            cg_max_iter: 1000,
            cg_tol: 1e-8,
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            alpha: 1.0,
            rounds: 50,
            base: BaseLearner::Forest { n_trees: 10, max_depth: 3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        ClassifierSpec { kind, hyperparameters: Hyperparameters::default(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyperparameters;
        let bad = |m: &str| Err(Error::config(format!("{}: {m}", self.kind)));
        match self.kind {
            ClassifierKind::SgdLogloss | ClassifierKind::LogisticRegression => {
                if !(h.learning_rate > 0.0 && h.learning_rate.is_finite()) {
                    return bad("learning_rate must be > 0");
                }
                if !(h.l2 > 0.0 && h.l2.is_finite()) {
                    return bad("l2 must be > 0");
                }
                if h.learning_rate * h.l2 >= 1.0 {
                    return bad("learning_rate * l2 must be < 1");
                }
                if h.epochs == 0 {
                    return bad("epochs must be >= 1");
                }
            }
            ClassifierKind::Ridge => {
                if !(h.ridge_lambda > 0.0 && h.ridge_lambda.is_finite()) {
                    return bad("ridge_lambda must be > 0");
                }
                if h.cg_max_iter == 0 || !(h.cg_tol > 0.0) {
                    return bad("cg_max_iter must be >= 1 and cg_tol > 0");
                }
            }
            ClassifierKind::BaggingTrees | ClassifierKind::ExtraTrees => {
                if h.n_trees == 0 {
                    return bad("n_trees must be >= 1");
                }
            }
            ClassifierKind::Adaboost => {
                if h.rounds == 0 {
                    return bad("rounds must be >= 1");
                }
                match h.base {
                    BaseLearner::Forest { n_trees, max_depth } if n_trees == 0 || max_depth == 0 => {
                        return bad("base forest needs n_trees >= 1 and max_depth >= 1")
                    }
                    BaseLearner::Tree { max_depth: 0 } => return bad("base tree max_depth must be >= 1"),
                    _ => {}
                }
            }
            ClassifierKind::MultinomialNb => {
                if !(h.alpha > 0.0 && h.alpha.is_finite()) {
                    return bad("alpha must be > 0");
                }
            }
        }
        if h.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        if h.max_depth == Some(0) {
            return bad("max_depth must be >= 1");
        }
        if h.max_features == Some(MaxFeatures::Count(0)) {
            return bad("max_features must be >= 1");
        }
        Ok(())
    }
}

/// Binary decision tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    /// Go left when `x[f] <= t`.
    Split { f: u32, t: f64, l: u32, r: u32 },
    /// Weighted positive fraction of the training rows reaching the leaf.
    Leaf { p: f64 },
}

impl Tree {
    pub fn leaf_value(&self, x: &SparseVector) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { p } => return p,
                TreeNode::Split { f, t, l, r } => {
                    i = if x.get(f) <= t { l as usize } else { r as usize };
                }
            }
        }
    }

    fn leaf_value_row(&self, idx: &[u32], val: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { p } => return p,
                TreeNode::Split { f, t, l, r } => {
                    let v = match idx.binary_search(&f) {
                        Ok(p) => val[p],
                        Err(_) => 0.0,
                    };
                    i = if v <= t { l as usize } else { r as usize };
                }
            }
        }
    }

    pub fn votes_positive(&self, x: &SparseVector) -> bool {
        self.leaf_value(x) >= 0.5
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { l, r, .. } => 1 + go(t, l as usize).max(go(t, r as usize)),
            }
        }
        go(self, 0)
    }
}

fn vote_fraction(trees: &[Tree], x: &SparseVector) -> f64 {
    let pos = trees.iter().filter(|t| t.votes_positive(x)).count();
    pos as f64 / trees.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub weight: f64,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ModelState {
    Linear { weights: Vec<f64>, bias: f64 },
    NaiveBayes { class_log_prior: [f64; 2], feature_log_prob: [Vec<f64>; 2] },
    Forest { trees: Vec<Tree> },
    Boosted { stages: Vec<BoostStage> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub spec: ClassifierSpec,
    pub width: usize,
    /// Class labels in score order: index 1 is the positive class.
    pub classes: [bool; 2],
    pub state: ModelState,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{-z})` without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

impl TrainedClassifier {
    pub fn decision_score(&self, x: &SparseVector) -> Result<f64> {
        if x.width() != self.width {
            return Err(Error::data(format!(
                "{}: input width {} does not match model width {}",
                self.spec.kind,
                x.width(),
                self.width
            )));
        }
        Ok(match &self.state {
            ModelState::Linear { weights, bias } => sigmoid(x.dot(weights) + bias),
            ModelState::NaiveBayes { class_log_prior, feature_log_prob } => {
                let j0 = class_log_prior[0] + x.dot(&feature_log_prob[0]);
                let j1 = class_log_prior[1] + x.dot(&feature_log_prob[1]);
                sigmoid(j1 - j0)
            }
            ModelState::Forest { trees } => vote_fraction(trees, x),
            ModelState::Boosted { stages } => {
                let total: f64 = stages.iter().map(|s| s.weight).sum();
                let pos: f64 = stages
                    .iter()
                    .filter(|s| vote_fraction(&s.trees, x) >= 0.5)
                    .map(|s| s.weight)
                    .sum();
                if total > 0.0 {
                    (pos / total).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            }
        })
    }

    /// Posterior pair `[P(0|x), P(1|x)]` for naive Bayes models.
    pub fn nb_posteriors(&self, x: &SparseVector) -> Option<[f64; 2]> {
        match &self.state {
            ModelState::NaiveBayes { class_log_prior, feature_log_prob } => {
                let j = [
                    class_log_prior[0] + x.dot(&feature_log_prob[0]),
                    class_log_prior[1] + x.dot(&feature_log_prob[1]),
                ];
                let m = j[0].max(j[1]);
                let z = m + ((j[0] - m).exp() + (j[1] - m).exp()).ln();
                Some([(j[0] - z).exp(), (j[1] - z).exp()])
            }
            _ => None,
        }
    }
}

fn check_training(x: &SparseMatrix, y: &[bool]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::data(format!("{} rows but {} labels", x.n_rows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::data("need at least two training rows"));
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(Error::data("training labels contain a single class"));
    }
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite feature value"));
    }
    Ok(())
}

pub fn fit(spec: &ClassifierSpec, x: &[SparseVector], y: &[bool]) -> Result<TrainedClassifier> {
    let width = x.first().map(|r| r.width()).unwrap_or(0);
    let m = SparseMatrix::from_rows(x, width)?;
    fit_matrix(spec, &m, y)
}

pub fn fit_matrix(spec: &ClassifierSpec, x: &SparseMatrix, y: &[bool]) -> Result<TrainedClassifier> {
    spec.validate()?;
    check_training(x, y)?;
    let h = &spec.hyperparameters;
    let state = match spec.kind {
        ClassifierKind::SgdLogloss => fit_sgd(x, y, h, spec.seed),
        ClassifierKind::LogisticRegression => match h.solver {
            Solver::Sgd => fit_sgd(x, y, h, spec.seed),
            Solver::FullBatch => fit_full_batch(x, y, h),
        },
        ClassifierKind::Ridge => fit_ridge(x, y, h),
        ClassifierKind::BaggingTrees => {
            let params = TreeParams {
                max_depth: h.max_depth,
                min_samples_leaf: h.min_samples_leaf,
                max_features: h.max_features.unwrap_or(MaxFeatures::All).resolve(x.width()),
                mode: SplitMode::Best,
            };
            let w = vec![1.0; y.len()];
            ModelState::Forest { trees: fit_forest(x, y, &w, &params, h.n_trees, true, spec.seed) }
        }
        ClassifierKind::ExtraTrees => {
            let params = TreeParams {
                max_depth: h.max_depth,
                min_samples_leaf: h.min_samples_leaf,
                max_features: h.max_features.unwrap_or(MaxFeatures::Sqrt).resolve(x.width()),
                mode: SplitMode::Random,
            };
            let w = vec![1.0; y.len()];
            ModelState::Forest { trees: fit_forest(x, y, &w, &params, h.n_trees, false, spec.seed) }
        }
        ClassifierKind::Adaboost => fit_adaboost(x, y, h, spec.seed),
        ClassifierKind::MultinomialNb => fit_mnb(x, y, h.alpha)?,
    };
    Ok(TrainedClassifier { spec: spec.clone(), width: x.width(), classes: [false, true], state })
}

/// Mean logistic loss plus `l2/2 * |w|^2` and its gradient in `(w, b)`.
pub fn logistic_loss_and_gradient(
    x: &SparseMatrix,
    y: &[bool],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = y.len() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut gb = 0.0;
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let s = if yi { 1.0 } else { -1.0 };
        let m = x.row_dot(i, w) + b;
        loss += log1p_exp_neg(s * m);
        let g = -s * sigmoid(-s * m) / n;
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            grad[j as usize] += g * v;
        }
        gb += g;
    }
    let mut reg = 0.0;
    for (gj, &wj) in grad.iter_mut().zip(w) {
        *gj += l2 * wj;
        reg += wj * wj;
    }
    (loss / n + 0.5 * l2 * reg, grad, gb)
}

fn fit_sgd(x: &SparseMatrix, y: &[bool], h: &Hyperparameters, seed: u64) -> ModelState {
    let mut v = vec![0.0; x.width()];
    let mut scale = 1.0f64;
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut rng = rng_for(seed, 0);
    for epoch in 1..=h.epochs {
        let eta = h.learning_rate / (epoch as f64).sqrt();
        let decay = 1.0 - eta * h.l2;
        order.shuffle(&mut rng);
        for &i in &order {
            let s = if y[i] { 1.0 } else { -1.0 };
            let m = scale * x.row_dot(i, &v) + b;
            let g = -s * sigmoid(-s * m);
            scale *= decay;
            let step = eta * g / scale;
            let (idx, val) = x.row(i);
            for (&j, &xv) in idx.iter().zip(val) {
                v[j as usize] -= step * xv;
            }
            b -= eta * g;
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
    }
    v.iter_mut().for_each(|w| *w *= scale);
    ModelState::Linear { weights: v, bias: b }
}

fn fit_full_batch(x: &SparseMatrix, y: &[bool], h: &Hyperparameters) -> ModelState {
    let mut w = vec![0.0; x.width()];
    let mut b = 0.0;
    for _ in 0..h.epochs {
        let (_, g, gb) = logistic_loss_and_gradient(x, y, &w, b, h.l2);
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= h.learning_rate * gj;
        }
        b -= h.learning_rate * gb;
    }
    ModelState::Linear { weights: w, bias: b }
}

/// Least squares on ±1 targets with an unpenalized intercept, by conjugate
/// gradient on `(A'A + λD) z = A't` where `A = [X | 1]`.
fn fit_ridge(x: &SparseMatrix, y: &[bool], h: &Hyperparameters) -> ModelState {
    let w_len = x.width();
    let t: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let apply = |z: &[f64]| -> Vec<f64> {
        // (A'A + λD) z
        let mut out = vec![0.0; w_len + 1];
        for i in 0..y.len() {
            let r = x.row_dot(i, &z[..w_len]) + z[w_len];
            let (idx, val) = x.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                out[j as usize] += v * r;
            }
            out[w_len] += r;
        }
        for j in 0..w_len {
            out[j] += h.ridge_lambda * z[j];
        }
        out
    };
    let mut rhs = vec![0.0; w_len + 1];
    for (i, &ti) in t.iter().enumerate() {
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            rhs[j as usize] += v * ti;
        }
        rhs[w_len] += ti;
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| p * q).sum() };
    let mut z = vec![0.0; w_len + 1];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = h.cg_tol * h.cg_tol * rr.max(f64::MIN_POSITIVE);
    for _ in 0..h.cg_max_iter {
        if rr <= stop {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        for k in 0..z.len() {
            z[k] += a * p[k];
            r[k] -= a * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    let bias = z.pop().unwrap();
    ModelState::Linear { weights: z, bias }
}

fn fit_mnb(x: &SparseMatrix, y: &[bool], alpha: f64) -> Result<ModelState> {
    if x.values().iter().any(|&v| v < 0.0) {
        return Err(Error::data("naive Bayes needs non-negative feature values"));
    }
    let w_len = x.width();
    let mut counts = [vec![0.0; w_len], vec![0.0; w_len]];
    let mut n_class = [0usize; 2];
    for (i, &yi) in y.iter().enumerate() {
        let c = yi as usize;
        n_class[c] += 1;
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            counts[c][j as usize] += v;
        }
    }
    let n = y.len() as f64;
    let class_log_prior = [(n_class[0] as f64 / n).ln(), (n_class[1] as f64 / n).ln()];
    let feature_log_prob = counts.map(|cnt| {
        let denom = (cnt.iter().sum::<f64>() + alpha * w_len as f64).ln();
        cnt.iter().map(|&c| (c + alpha).ln() - denom).collect::<Vec<f64>>()
    });
    Ok(ModelState::NaiveBayes { class_log_prior, feature_log_prob })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SplitMode {
    /// Exact Gini search over all midpoints.
    Best,
    /// One uniform cut per candidate feature.
    Random,
}

#[derive(Debug, Clone, Copy)]
struct TreeParams {
    max_depth: Option<usize>,
    min_samples_leaf: usize,
    max_features: Option<usize>,
    mode: SplitMode,
}

#[derive(Clone, Copy)]
struct Entry {
    value: f64,
    weight: f64,
    pos: f64,
}

/// Rows of one node sharing a non-zero value of one column.
#[derive(Clone, Copy)]
struct Group {
    f: u32,
    v: f64,
    n: u32,
    w: f64,
    p: f64,
}

struct TreeBuilder<'a> {
    x: &'a SparseMatrix,
    y: &'a [bool],
    params: TreeParams,
    rng: ChaCha8Rng,
    slot: Vec<u32>,
    touched: Vec<u32>,
    offsets: Vec<usize>,
    entries: Vec<Entry>,
}

struct Candidate {
    score: f64,
    feature: u32,
    threshold: f64,
}

/// Weighted Gini purity of a split; larger is better.
fn purity(wl: f64, pl: f64, wr: f64, pr: f64) -> f64 {
    let nl = wl - pl;
    let nr = wr - pr;
    (pl * pl + nl * nl) / wl + (pr * pr + nr * nr) / wr
}

/// Removes a child's groups from its parent's. Both are sorted by column
/// then value and every child group exists in the parent.
fn subtract(parent: &mut Vec<Group>, child: &[Group]) {
    let mut j = 0;
    let mut out = 0;
    for i in 0..parent.len() {
        let mut g = parent[i];
        if j < child.len() && child[j].f == g.f && child[j].v == g.v {
            g.n -= child[j].n;
            g.w = (g.w - child[j].w).max(0.0);
            g.p = (g.p - child[j].p).max(0.0);
            j += 1;
        }
        if g.n > 0 {
            parent[out] = g;
            out += 1;
        }
    }
    debug_assert_eq!(j, child.len());
    parent.truncate(out);
}

/// Distinct-value groups `(value, rows, weight, positive weight)` of one
/// column's non-zero groups, with the implicit zeros merged in place.
fn with_zeros(run: &[Group], n_rows: usize, w: f64, wp: f64, out: &mut Vec<(f64, usize, f64, f64)>) {
    out.clear();
    let nz_n: usize = run.iter().map(|g| g.n as usize).sum();
    let nz_w: f64 = run.iter().map(|g| g.w).sum();
    let nz_p: f64 = run.iter().map(|g| g.p).sum();
    let zeros = n_rows - nz_n;
    let mut zero_pending = zeros > 0;
    let zero_group = (0.0, zeros, (w - nz_w).max(0.0), (wp - nz_p).max(0.0));
    for g in run {
        if zero_pending && g.v >= 0.0 {
            if g.v == 0.0 {
                out.push((0.0, zeros + g.n as usize, zero_group.2 + g.w, zero_group.3 + g.p));
                zero_pending = false;
                continue;
            }
            out.push(zero_group);
            zero_pending = false;
        }
        out.push((g.v, g.n as usize, g.w, g.p));
    }
    if zero_pending {
        out.push(zero_group);
    }
}

impl<'a> TreeBuilder<'a> {
    fn new(x: &'a SparseMatrix, y: &'a [bool], params: TreeParams, rng: ChaCha8Rng) -> Self {
        TreeBuilder {
            x,
            y,
            params,
            rng,
            slot: vec![u32::MAX; x.width()],
            touched: Vec::new(),
            offsets: Vec::new(),
            entries: Vec::new(),
        }
    }

    fn value(&self, row: u32, f: u32) -> f64 {
        let (idx, val) = self.x.row(row as usize);
        match idx.binary_search(&f) {
            Ok(p) => val[p],
            Err(_) => 0.0,
        }
    }

    /// Non-zero groups of the rows, sorted by column then value.
    fn histogram(&mut self, rows: &[(u32, f64)]) -> Vec<Group> {
        self.touched.clear();
        for &(r, _) in rows {
            for &f in self.x.row(r as usize).0 {
                if self.slot[f as usize] == u32::MAX {
                    self.slot[f as usize] = 0;
                    self.touched.push(f);
                }
                self.slot[f as usize] += 1;
            }
        }
        self.touched.sort_unstable();
        self.offsets.clear();
        let mut acc = 0usize;
        for &f in &self.touched {
            let c = self.slot[f as usize] as usize;
            self.offsets.push(acc);
            self.slot[f as usize] = acc as u32;
            acc += c;
        }
        self.offsets.push(acc);
        self.entries.clear();
        self.entries.resize(acc, Entry { value: 0.0, weight: 0.0, pos: 0.0 });
        for &(r, w) in rows {
            let (idx, val) = self.x.row(r as usize);
            let pos = if self.y[r as usize] { w } else { 0.0 };
            for (&f, &v) in idx.iter().zip(val) {
                let s = &mut self.slot[f as usize];
                self.entries[*s as usize] = Entry { value: v, weight: w, pos };
                *s += 1;
            }
        }
        let mut hist: Vec<Group> = Vec::new();
        for k in 0..self.touched.len() {
            let f = self.touched[k];
            self.slot[f as usize] = u32::MAX;
            let seg = &mut self.entries[self.offsets[k]..self.offsets[k + 1]];
            seg.sort_unstable_by(|a, b| a.value.total_cmp(&b.value));
            let start = hist.len();
            for e in seg.iter() {
                let fresh = hist.len() == start;
                match hist.last_mut() {
                    Some(g) if !fresh && g.v == e.value => {
                        g.n += 1;
                        g.w += e.weight;
                        g.p += e.pos;
                    }
                    _ => hist.push(Group { f, v: e.value, n: 1, w: e.weight, p: e.pos }),
                }
            }
        }
        hist
    }

    fn best_split(&mut self, hist: &[Group], n: usize, w: f64, wp: f64) -> Option<Candidate> {
        let min_leaf = self.params.min_samples_leaf;
        let mut eligible: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < hist.len() {
            let mut j = i + 1;
            while j < hist.len() && hist[j].f == hist[i].f {
                j += 1;
            }
            let constant = j - i == 1 && hist[i].n as usize == n;
            if !constant {
                eligible.push((i, j));
            }
            i = j;
        }
        if let Some(kmax) = self.params.max_features {
            if kmax < eligible.len() {
                let mut pick: Vec<usize> = rand::seq::index::sample(&mut self.rng, eligible.len(), kmax).into_vec();
                pick.sort_unstable();
                eligible = pick.into_iter().map(|k| eligible[k]).collect();
            }
        }
        let mut groups = Vec::new();
        let mut best: Option<Candidate> = None;
        for (a, b) in eligible {
            with_zeros(&hist[a..b], n, w, wp, &mut groups);
            if groups.len() < 2 {
                continue;
            }
            let feature = hist[a].f;
            match self.params.mode {
                SplitMode::Best => {
                    let (mut nl, mut wl, mut pl) = (0usize, 0.0, 0.0);
                    for g in 0..groups.len() - 1 {
                        nl += groups[g].1;
                        wl += groups[g].2;
                        pl += groups[g].3;
                        let (nr, wr, pr) = (n - nl, w - wl, wp - pl);
                        if nl < min_leaf || nr < min_leaf || wl <= 0.0 || wr <= 0.0 {
                            continue;
                        }
                        let score = purity(wl, pl, wr, pr);
                        if best.as_ref().map_or(true, |b| score > b.score) {
                            let (a, c) = (groups[g].0, groups[g + 1].0);
                            let mut t = a + (c - a) / 2.0;
                            if !(t >= a && t < c) {
                                t = a;
                            }
                            best = Some(Candidate { score, feature, threshold: t });
                        }
                    }
                }
                SplitMode::Random => {
                    let lo = groups[0].0;
                    let hi = groups[groups.len() - 1].0;
                    let t = self.rng.gen_range(lo..hi);
                    let (mut nl, mut wl, mut pl) = (0usize, 0.0, 0.0);
                    for g in &groups {
                        if g.0 > t {
                            break;
                        }
                        nl += g.1;
                        wl += g.2;
                        pl += g.3;
                    }
                    let (nr, wr, pr) = (n - nl, w - wl, wp - pl);
                    if nl < min_leaf || nr < min_leaf || wl <= 0.0 || wr <= 0.0 {
                        continue;
                    }
                    let score = purity(wl, pl, wr, pr);
                    if best.as_ref().map_or(true, |b| score > b.score) {
                        best = Some(Candidate { score, feature, threshold: t });
                    }
                }
            }
        }
        best
    }

    /// `(weight, positive weight)` and whether the node must be a leaf.
    fn node_stats(&self, rows: &[(u32, f64)], depth: usize) -> (f64, f64, bool) {
        let w: f64 = rows.iter().map(|r| r.1).sum();
        let wp: f64 = rows.iter().filter(|r| self.y[r.0 as usize]).map(|r| r.1).sum();
        let pure = wp <= 0.0 || wp >= w;
        let deep = self.params.max_depth.is_some_and(|d| depth >= d);
        (w, wp, pure || deep || rows.len() < 2 * self.params.min_samples_leaf)
    }

    /// Depth-first, smaller child first. A parent's groups minus the
    /// smaller child's give the larger child's.
    fn build(mut self, rows: Vec<(u32, f64)>) -> Tree {
        let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { p: 0.0 }];
        let mut stack: Vec<(usize, Vec<(u32, f64)>, usize, Option<Vec<Group>>)> = vec![(0, rows, 0, None)];
        while let Some((id, rows, depth, hist)) = stack.pop() {
            let (w, wp, terminal) = self.node_stats(&rows, depth);
            let p = if w > 0.0 { wp / w } else { 0.0 };
            if terminal {
                nodes[id] = TreeNode::Leaf { p };
                continue;
            }
            let mut hist = hist.unwrap_or_else(|| self.histogram(&rows));
            let Some(c) = self.best_split(&hist, rows.len(), w, wp) else {
                nodes[id] = TreeNode::Leaf { p };
                continue;
            };
            let (left, right): (Vec<_>, Vec<_>) =
                rows.into_iter().partition(|&(r, _)| self.value(r, c.feature) <= c.threshold);
            let l = nodes.len();
            nodes.push(TreeNode::Leaf { p: 0.0 });
            nodes.push(TreeNode::Leaf { p: 0.0 });
            nodes[id] = TreeNode::Split { f: c.feature, t: c.threshold, l: l as u32, r: (l + 1) as u32 };
            let small_is_left = left.len() <= right.len();
            let (small_id, small, large_id, large) =
                if small_is_left { (l, left, l + 1, right) } else { (l + 1, right, l, left) };
            let small_term = self.node_stats(&small, depth + 1).2;
            let large_term = self.node_stats(&large, depth + 1).2;
            let small_hist = (!small_term || !large_term).then(|| self.histogram(&small));
            let large_hist = (!large_term).then(|| {
                subtract(&mut hist, small_hist.as_ref().unwrap());
                hist
            });
            stack.push((large_id, large, depth + 1, large_hist));
            stack.push((small_id, small, depth + 1, small_hist.filter(|_| !small_term)));
        }
        Tree { nodes }
    }
}

fn fit_tree(
    x: &SparseMatrix,
    y: &[bool],
    weights: &[f64],
    params: &TreeParams,
    bootstrap: bool,
    seed: u64,
) -> Tree {
    let mut rng = rng_for(seed, 0);
    let n = y.len();
    let rows: Vec<(u32, f64)> = if bootstrap {
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[rng.gen_range(0..n)] += 1;
        }
        (0..n)
            .filter(|&i| counts[i] > 0 && weights[i] > 0.0)
            .map(|i| (i as u32, counts[i] as f64 * weights[i]))
            .collect()
    } else {
        (0..n).filter(|&i| weights[i] > 0.0).map(|i| (i as u32, weights[i])).collect()
    };
    TreeBuilder::new(x, y, *params, rng).build(rows)
}

fn fit_forest(
    x: &SparseMatrix,
    y: &[bool],
    weights: &[f64],
    params: &TreeParams,
    n_trees: usize,
    bootstrap: bool,
    seed: u64,
) -> Vec<Tree> {
    (0..n_trees)
        .into_par_iter()
        .map(|t| fit_tree(x, y, weights, params, bootstrap, derive_seed(seed, t as u64 + 1)))
        .collect()
}

fn stage_predictions(x: &SparseMatrix, trees: &[Tree]) -> Vec<bool> {
    (0..x.n_rows())
        .into_par_iter()
        .map(|i| {
            let (idx, val) = x.row(i);
            let pos = trees.iter().filter(|t| t.leaf_value_row(idx, val) >= 0.5).count();
            pos as f64 / trees.len() as f64 >= 0.5
        })
        .collect()
}

fn fit_adaboost(x: &SparseMatrix, y: &[bool], h: &Hyperparameters, seed: u64) -> ModelState {
    let n = y.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut stages: Vec<BoostStage> = Vec::new();
    for round in 0..h.rounds {
        let round_seed = derive_seed(seed, round as u64 + 1);
        let trees = match h.base {
            BaseLearner::Forest { n_trees, max_depth } => {
                let params = TreeParams {
                    max_depth: Some(max_depth),
                    min_samples_leaf: h.min_samples_leaf,
                    max_features: h.max_features.unwrap_or(MaxFeatures::Sqrt).resolve(x.width()),
                    mode: SplitMode::Best,
                };
                fit_forest(x, y, &w, &params, n_trees, true, round_seed)
            }
            BaseLearner::Tree { max_depth } => {
                let params = TreeParams {
                    max_depth: Some(max_depth),
                    min_samples_leaf: h.min_samples_leaf,
                    max_features: h.max_features.unwrap_or(MaxFeatures::All).resolve(x.width()),
                    mode: SplitMode::Best,
                };
                vec![fit_tree(x, y, &w, &params, false, round_seed)]
            }
        };
        let pred = stage_predictions(x, &trees);
        let total: f64 = w.iter().sum();
        let err: f64 = (0..n).filter(|&i| pred[i] != y[i]).map(|i| w[i]).sum::<f64>() / total;
        if err <= 0.0 {
            stages.push(BoostStage { weight: 1.0, trees });
            break;
        }
        if err >= 0.5 {
            if stages.is_empty() {
                stages.push(BoostStage { weight: 1.0, trees });
            }
            break;
        }
        let alpha = ((1.0 - err) / err).ln();
        for i in 0..n {
            if pred[i] != y[i] {
                w[i] *= alpha.exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        stages.push(BoostStage { weight: alpha, trees });
    }
    ModelState::Boosted { stages }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Voting {
    Soft,
    Hard,
}

pub const DEFAULT_WEIGHTS: [f64; 7] = [2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: Vec<ClassifierSpec>,
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub voting: Voting,
}

impl EnsembleConfig {
    /// The seven default members, each seeded from its own stream of
    /// `seed`.
    pub fn default_with_seed(seed: u64) -> Self {
        EnsembleConfig {
            members: ClassifierKind::ALL
                .iter()
                .enumerate()
                .map(|(i, &k)| ClassifierSpec::new(k, derive_seed(seed, 100 + i as u64)))
                .collect(),
            weights: DEFAULT_WEIGHTS.to_vec(),
            threshold: 0.5,
            voting: Voting::Soft,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::config("ensemble has no members"));
        }
        let kinds: Vec<_> = self.members.iter().map(|m| m.kind).collect();
        if kinds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "ensemble members must be distinct kinds in the order SGD, LogReg, Ridge, Bagging, ExtraTrees, AdaBoost, MNB",
            ));
        }
        check_weights(&self.weights, self.members.len())?;
        check_threshold(self.threshold)?;
        self.members.iter().try_for_each(ClassifierSpec::validate)
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::config(format!("{} weights for {n} members", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::config("ensemble weights must be >= 0 with a positive sum"));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::config(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub members: Vec<TrainedClassifier>,
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub voting: Voting,
}

impl TrainedEnsemble {
    pub fn new(members: Vec<TrainedClassifier>, weights: Vec<f64>, threshold: f64, voting: Voting) -> Result<Self> {
        check_weights(&weights, members.len())?;
        check_threshold(threshold)?;
        if members.windows(2).any(|m| m[0].width != m[1].width) {
            return Err(Error::config("ensemble members were fitted on different feature spaces"));
        }
        Ok(TrainedEnsemble { members, weights, threshold, voting })
    }

    pub fn fit(config: &EnsembleConfig, x: &SparseMatrix, y: &[bool]) -> Result<Self> {
        config.validate()?;
        let members = config
            .members
            .par_iter()
            .map(|spec| fit_matrix(spec, x, y))
            .collect::<Result<Vec<_>>>()?;
        TrainedEnsemble::new(members, config.weights.clone(), config.threshold, config.voting)
    }

    pub fn width(&self) -> usize {
        self.members[0].width
    }

    pub fn member_scores(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.members.iter().map(|m| m.decision_score(x)).collect()
    }

    /// Weighted mean of member scores (soft) or of member votes (hard).
    pub fn combine(&self, member_scores: &[f64]) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let acc: f64 = member_scores
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| match self.voting {
                Voting::Soft => w * s,
                Voting::Hard => {
                    if s >= 0.5 {
                        w
                    } else {
                        0.0
                    }
                }
            })
            .sum();
        (acc / total).clamp(0.0, 1.0)
    }

    pub fn score(&self, x: &SparseVector) -> Result<f64> {
        Ok(self.combine(&self.member_scores(x)?))
    }

    pub fn predict(&self, x: &SparseVector) -> Result<bool> {
        Ok(self.score(x)? >= self.threshold)
    }

    pub fn set_threshold(mut self, t: f64) -> Result<Self> {
        check_threshold(t)?;
        self.threshold = t;
        Ok(self)
    }
}

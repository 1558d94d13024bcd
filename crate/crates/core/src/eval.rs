//! Scenarios, stratified cross-validation, metrics and error analysis.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Cable, ClassificationLevel};
use crate::error::{Error, Result};
use crate::features::{default_field_configs, FeatureSpace, FieldConfig, SparseMatrix, SparseVector};
use crate::models::{
    BaseLearner, ClassifierKind, ClassifierSpec, EnsembleConfig, MaxFeatures, TrainedEnsemble, Voting,
};
use crate::preprocess::{FieldTokens, Tokenizer, TokenizerConfig};
use crate::seed::{derive_seed, rng_for, DEFAULT_SEED};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "U_vs_LCS")]
    UVsLcs,
    #[serde(rename = "UL_vs_CS")]
    UlVsCs,
    #[serde(rename = "ULC_vs_S")]
    UlcVsS,
    #[serde(rename = "U_vs_CS")]
    UVsCs,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::UVsLcs, Scenario::UlVsCs, Scenario::UlcVsS, Scenario::UVsCs];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::UVsLcs => "U_vs_LCS",
            Scenario::UlVsCs => "UL_vs_CS",
            Scenario::UlcVsS => "ULC_vs_S",
            Scenario::UVsCs => "U_vs_CS",
        }
    }

    /// `Some(true)` for the more classified side, `None` when excluded.
    pub fn label(self, level: ClassificationLevel) -> Option<bool> {
        use ClassificationLevel::*;
        match (self, level) {
            (Scenario::UVsCs, LimitedOfficialUse) => None,
            (Scenario::UVsLcs | Scenario::UVsCs, l) => Some(l != Unclassified),
            (Scenario::UlVsCs, l) => Some(l >= Confidential),
            (Scenario::UlcVsS, l) => Some(l == Secret),
        }
    }

    /// Level group names for predictions: (negative side, positive side).
    pub fn group_names(self) -> (&'static str, &'static str) {
        match self {
            Scenario::UVsLcs => ("U", "LCS"),
            Scenario::UlVsCs => ("UL", "CS"),
            Scenario::UlcVsS => ("ULC", "S"),
            Scenario::UVsCs => ("U", "CS"),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canon = s.to_uppercase().replace([',', ' ', '-'], "");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str().to_uppercase() == canon)
            .ok_or_else(|| {
                Error::config(format!("unknown scenario {s:?} (expected U_vs_LCS, UL_vs_CS, ULC_vs_S or U_vs_CS)"))
            })
    }
}

/// Labels of the kept records and their positions in `levels`.
pub fn binarize(levels: &[ClassificationLevel], s: Scenario) -> (Vec<bool>, Vec<usize>) {
    let mut labels = Vec::new();
    let mut kept = Vec::new();
    for (i, &l) in levels.iter().enumerate() {
        if let Some(y) = s.label(l) {
            labels.push(y);
            kept.push(i);
        }
    }
    (labels, kept)
}

/// Fold id per record. Each class is shuffled under `seed` and dealt
/// round-robin; the deal continues from one class into the next so fold
/// totals also stay within one of each other.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config("k must be at least 2"));
    }
    let mut folds = vec![0usize; labels.len()];
    let mut next = 0usize;
    for (stream, class) in [false, true].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::data(format!(
                "class {} has {} records, fewer than k = {k}",
                class as u8,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_for(seed, stream as u64));
        for i in idx {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

fn check_both_classes(labels: &[bool], n_scores: usize) -> Result<(usize, usize)> {
    if labels.len() != n_scores {
        return Err(Error::data(format!("{n_scores} scores but {} labels", labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::data("AUC needs both classes"));
    }
    Ok((pos, neg))
}

/// Rank-sum AUC with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_both_classes(labels, scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::data("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps midranks integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        for &o in &order[i..=j] {
            if labels[o] {
                rank2_sum += mid2;
            }
        }
        i = j + 1;
    }
    let pos_u = pos as u128;
    let u2 = rank2_sum - pos_u * (pos_u + 1);
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// `(fpr, tpr, threshold)`, starting at `(0, 0)`.
    pub roc: Vec<(f64, f64, f64)>,
    /// `(recall, precision, threshold)`, starting at recall 0.
    pub pr: Vec<(f64, f64, f64)>,
}

/// One point per distinct score (predict positive when `score >= t`) plus
/// the `(0, 0)` ROC and recall-0 PR endpoints.
pub fn curves(scores: &[f64], labels: &[bool]) -> Result<Curves> {
    let (pos, neg) = check_both_classes(labels, scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = vec![(0.0, 0.0, f64::MAX)];
    let mut pr = vec![(0.0, 1.0, f64::MAX)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / neg as f64, tp as f64 / pos as f64, t));
        pr.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64, t));
    }
    Ok(Curves { roc, pr })
}

pub fn trapezoid_area(roc: &[(f64, f64, f64)]) -> f64 {
    roc.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Highest recall whose false-positive rate stays within `max_fpr`.
pub fn best_recall_at_fpr(scores: &[f64], labels: &[bool], max_fpr: f64) -> Result<OperatingPoint> {
    let c = curves(scores, labels)?;
    let mut best = OperatingPoint { threshold: f64::MAX, tpr: 0.0, fpr: 0.0 };
    for &(fpr, tpr, t) in &c.roc {
        if fpr <= max_fpr && tpr > best.tpr {
            best = OperatingPoint { threshold: t, tpr, fpr };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(labels: &[bool], predicted: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&l, &p) in labels.iter().zip(predicted) {
            match (l, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&self, o: &Confusion) -> Confusion {
        Confusion { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// F1 from counts, `2 hit / (2 hit + misses)`; equal to the harmonic mean
/// of precision and recall.
fn f1_score(hit: u64, false_alarm: u64, miss: u64) -> f64 {
    ratio(2 * hit, 2 * hit + false_alarm + miss)
}

/// Metrics derived from a confusion table. Index 0 of the per-class arrays
/// is the less classified side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl Metrics {
    pub fn from_confusion(c: &Confusion) -> Self {
        let precision = [ratio(c.tn, c.tn + c.fn_), ratio(c.tp, c.tp + c.fp)];
        let recall = [ratio(c.tn, c.tn + c.fp), ratio(c.tp, c.tp + c.fn_)];
        let f1 = [f1_score(c.tn, c.fn_, c.fp), f1_score(c.tp, c.fp, c.fn_)];
        let support = [(c.tn + c.fp) as f64, (c.tp + c.fn_) as f64];
        let n = support[0] + support[1];
        Metrics {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            macro_f1: (f1[0] + f1[1]) / 2.0,
            weighted_f1: if n == 0.0 { 0.0 } else { (f1[0] * support[0] + f1[1] * support[1]) / n },
        }
    }
}

/// Everything needed to go from cables to an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tokenizer: TokenizerConfig,
    pub fields: Vec<FieldConfig>,
    pub ensemble: EnsembleConfig,
    pub k: usize,
    pub seed: u64,
    /// Build vocabularies once on the whole corpus instead of per fold.
    pub global_vocab: bool,
    /// FPR ceiling for the reported operating point.
    pub max_fpr: f64,
    pub top_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::with_seed(DEFAULT_SEED)
    }
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            tokenizer: TokenizerConfig::default(),
            fields: default_field_configs(),
            ensemble: EnsembleConfig::default_with_seed(seed),
            k: 3,
            seed,
            global_vocab: false,
            max_fpr: 0.11,
            top_n: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.ensemble.validate()?;
        for f in &self.fields {
            f.validate()?;
        }
        if self.k < 2 {
            return Err(Error::config("k must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.max_fpr) {
            return Err(Error::config("max_fpr must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub fold: usize,
    pub label: bool,
    pub score: f64,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_width: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub roc_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanOfFolds {
    pub accuracy: f64,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub roc_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub roc_auc: f64,
    pub operating_point: OperatingPoint,
    pub member_roc_auc: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassified {
    pub doc_id: String,
    pub score: f64,
    /// Highest classification marking found in the body, if any.
    pub embedded_marker: Option<ClassificationLevel>,
    pub metadata_level: Option<ClassificationLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub scenario: Scenario,
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub n_docs: usize,
    pub n_positive: usize,
    pub folds: Vec<FoldReport>,
    pub mean_of_folds: MeanOfFolds,
    pub pooled: Pooled,
    pub curves: Curves,
    pub top_false_positives: Vec<Misclassified>,
    pub top_false_negatives: Vec<Misclassified>,
    pub predictions: Vec<ScoredDoc>,
}

fn tokenize_all(cables: &[&Cable], tokenizer: &Tokenizer) -> Vec<FieldTokens> {
    cables.par_iter().map(|c| tokenizer.tokenize_cable(c)).collect()
}

fn matrix(space: &FeatureSpace, docs: &[&FieldTokens]) -> Result<(SparseMatrix, Vec<SparseVector>)> {
    let rows: Vec<SparseVector> = docs.par_iter().map(|d| space.assemble(d)).collect();
    Ok((SparseMatrix::from_rows(&rows, space.width)?, rows))
}

/// Scenario-labelled cables: returns the kept cables and their labels.
pub fn scenario_subset<'a>(cables: &'a [Cable], scenario: Scenario) -> (Vec<&'a Cable>, Vec<bool>) {
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    for c in cables {
        if let Some(y) = c.orig_class.and_then(|l| scenario.label(l)) {
            kept.push(c);
            labels.push(y);
        }
    }
    (kept, labels)
}

/// k-fold evaluation of the full pipeline. Vocabularies are rebuilt from
/// the training folds unless `global_vocab` is set.
pub fn cross_validate(cables: &[Cable], scenario: Scenario, config: &PipelineConfig) -> Result<EvalReport> {
    config.validate()?;
    let (kept, labels) = scenario_subset(cables, scenario);
    if kept.is_empty() {
        return Err(Error::data(format!("no cables left after applying scenario {scenario}")));
    }
    let tokenizer = Tokenizer::new(config.tokenizer.clone())?;
    let tokens = tokenize_all(&kept, &tokenizer);
    let folds = stratified_kfold(&labels, config.k, config.seed)?;
    let global = if config.global_vocab {
        Some(FeatureSpace::build(&tokens, &config.fields, config.tokenizer.clone())?)
    } else {
        None
    };

    let n = kept.len();
    let mut scores = vec![0.0; n];
    let mut member_scores = vec![vec![0.0; n]; config.ensemble.members.len()];
    let mut fold_reports = Vec::with_capacity(config.k);
    for fold in 0..config.k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        let train_tokens: Vec<FieldTokens> = train.iter().map(|&i| tokens[i].clone()).collect();
        let space = match &global {
            Some(s) => s.clone(),
            None => FeatureSpace::build(&train_tokens, &config.fields, config.tokenizer.clone())?,
        };
        let (xtr, _) = matrix(&space, &train_tokens.iter().collect::<Vec<_>>())?;
        let ytr: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let ensemble = TrainedEnsemble::fit(&config.ensemble, &xtr, &ytr)?;
        let test_rows: Vec<SparseVector> = test.par_iter().map(|&i| space.assemble(&tokens[i])).collect();
        let test_scores: Vec<Vec<f64>> =
            test_rows.par_iter().map(|x| ensemble.member_scores(x)).collect::<Result<_>>()?;
        let mut fs = Vec::with_capacity(test.len());
        for (&i, ms) in test.iter().zip(&test_scores) {
            let s = ensemble.combine(ms);
            scores[i] = s;
            fs.push(s);
            for (m, &v) in ms.iter().enumerate() {
                member_scores[m][i] = v;
            }
        }
        let yte: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let pred: Vec<bool> = fs.iter().map(|&s| s >= ensemble.threshold).collect();
        let confusion = Confusion::from_predictions(&yte, &pred);
        fold_reports.push(FoldReport {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            feature_width: space.width,
            confusion,
            metrics: Metrics::from_confusion(&confusion),
            roc_auc: roc_auc(&fs, &yte)?,
        });
    }

    let threshold = config.ensemble.threshold;
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let confusion = Confusion::from_predictions(&labels, &predicted);
    let k = fold_reports.len() as f64;
    let mean = |f: &dyn Fn(&FoldReport) -> f64| fold_reports.iter().map(f).sum::<f64>() / k;
    let mean_of_folds = MeanOfFolds {
        accuracy: mean(&|r| r.metrics.accuracy),
        precision: [mean(&|r| r.metrics.precision[0]), mean(&|r| r.metrics.precision[1])],
        recall: [mean(&|r| r.metrics.recall[0]), mean(&|r| r.metrics.recall[1])],
        f1: [mean(&|r| r.metrics.f1[0]), mean(&|r| r.metrics.f1[1])],
        macro_f1: mean(&|r| r.metrics.macro_f1),
        weighted_f1: mean(&|r| r.metrics.weighted_f1),
        roc_auc: mean(&|r| r.roc_auc),
    };
    let mut member_roc_auc = BTreeMap::new();
    for (spec, ms) in config.ensemble.members.iter().zip(&member_scores) {
        member_roc_auc.insert(spec.kind.as_str().to_string(), roc_auc(ms, &labels)?);
    }
    let pooled = Pooled {
        confusion,
        metrics: Metrics::from_confusion(&confusion),
        roc_auc: roc_auc(&scores, &labels)?,
        operating_point: best_recall_at_fpr(&scores, &labels, config.max_fpr)?,
        member_roc_auc,
    };
    let predictions: Vec<ScoredDoc> = (0..n)
        .map(|i| ScoredDoc {
            doc_id: kept[i].doc_id.clone(),
            fold: folds[i],
            label: labels[i],
            score: scores[i],
            predicted: predicted[i],
        })
        .collect();
    let mut report = EvalReport {
        version: REPORT_VERSION,
        scenario,
        k: config.k,
        seed: config.seed,
        threshold,
        n_docs: n,
        n_positive: labels.iter().filter(|&&l| l).count(),
        folds: fold_reports,
        mean_of_folds,
        pooled,
        curves: curves(&scores, &labels)?,
        top_false_positives: Vec::new(),
        top_false_negatives: Vec::new(),
        predictions,
    };
    let by_id: BTreeMap<&str, &Cable> = kept.iter().map(|c| (c.doc_id.as_str(), *c)).collect();
    for (dir, slot) in [(Direction::FalsePos, 0), (Direction::FalseNeg, 1)] {
        let rows: Vec<Misclassified> = rank_misclassified(&report, dir, config.top_n)
            .into_iter()
            .map(|(doc_id, score)| {
                let c = by_id.get(doc_id.as_str());
                Misclassified {
                    embedded_marker: c.and_then(|c| detect_embedded_marker(&c.body)),
                    metadata_level: c.and_then(|c| c.orig_class),
                    doc_id,
                    score,
                }
            })
            .collect();
        if slot == 0 {
            report.top_false_positives = rows;
        } else {
            report.top_false_negatives = rows;
        }
    }
    Ok(report)
}

/// Fitted pipeline: feature space plus ensemble, written as `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub n_train: usize,
    pub feature_space: FeatureSpace,
    pub ensemble: TrainedEnsemble,
}

impl ModelArtifact {
    pub fn train(cables: &[Cable], scenario: Scenario, config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let (kept, labels) = scenario_subset(cables, scenario);
        if kept.is_empty() {
            return Err(Error::data(format!("no cables left after applying scenario {scenario}")));
        }
        let tokenizer = Tokenizer::new(config.tokenizer.clone())?;
        let tokens = tokenize_all(&kept, &tokenizer);
        let space = FeatureSpace::build(&tokens, &config.fields, config.tokenizer.clone())?;
        let (x, _) = matrix(&space, &tokens.iter().collect::<Vec<_>>())?;
        let ensemble = TrainedEnsemble::fit(&config.ensemble, &x, &labels)?;
        Ok(ModelArtifact {
            version: REPORT_VERSION,
            scenario,
            seed: config.seed,
            n_train: kept.len(),
            feature_space: space,
            ensemble,
        })
    }

    /// `(score, predicted level group)` per cable.
    pub fn score(&self, cables: &[Cable]) -> Result<Vec<(f64, &'static str)>> {
        let tokenizer = Tokenizer::new(self.feature_space.tokenizer.clone())?;
        let (neg, pos) = self.scenario.group_names();
        cables
            .par_iter()
            .map(|c| {
                let x = self.feature_space.assemble(&tokenizer.tokenize_cable(c));
                let s = self.ensemble.score(&x)?;
                Ok((s, if s >= self.ensemble.threshold { pos } else { neg }))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    FalsePos,
    FalseNeg,
}

/// False positives by descending score or false negatives by ascending
/// score; ties by doc id.
pub fn rank_misclassified(report: &EvalReport, direction: Direction, n: usize) -> Vec<(String, f64)> {
    let mut rows: Vec<&ScoredDoc> = report
        .predictions
        .iter()
        .filter(|p| match direction {
            Direction::FalsePos => !p.label && p.predicted,
            Direction::FalseNeg => p.label && !p.predicted,
        })
        .collect();
    rows.sort_by(|a, b| {
        let o = match direction {
            Direction::FalsePos => b.score.total_cmp(&a.score),
            Direction::FalseNeg => a.score.total_cmp(&b.score),
        };
        o.then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    rows.into_iter().take(n).map(|p| (p.doc_id.clone(), p.score)).collect()
}

fn collapse_spaced_letters(line: &str) -> String {
    let words: Vec<&str> = line.split_whitespace().collect();
    let mut out: Vec<String> = Vec::new();
    let mut run = String::new();
    for w in words {
        if w.chars().count() == 1 {
            run.push_str(w);
        } else {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            out.push(w.to_string());
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out.join(" ")
}

/// Highest classification marking written on its own line of the body.
/// A marker line is the marking alone, the marking followed by a short
/// caveat (`SECRET NODIS`, `CONFIDENTIAL SECTION 01 OF 02`), or a short
/// signature line ending in it. Letter-spaced markings are recognised.
pub fn detect_embedded_marker(body: &str) -> Option<ClassificationLevel> {
    let mut best: Option<ClassificationLevel> = None;
    for raw in body.lines() {
        let cleaned: String = raw
            .to_uppercase()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
            .collect();
        let line = collapse_spaced_letters(&cleaned);
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        for level in ClassificationLevel::ALL {
            let marking: Vec<&str> = level.marking().split_whitespace().collect();
            let joined = marking.concat();
            let head = if words.starts_with(&marking) {
                marking.len()
            } else if words[0] == joined {
                1
            } else {
                0
            };
            let tail = if words.ends_with(&marking) {
                marking.len()
            } else if words[words.len() - 1] == joined {
                1
            } else {
                0
            };
            if (head > 0 && words.len() <= head + 5) || (tail > 0 && words.len() <= tail + 2) {
                best = best.max(Some(level));
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    RocAuc,
    Accuracy,
    MacroF1,
    RecallAtFpr,
}

impl Objective {
    pub fn value(self, r: &EvalReport) -> f64 {
        match self {
            Objective::RocAuc => r.pooled.roc_auc,
            Objective::Accuracy => r.pooled.metrics.accuracy,
            Objective::MacroF1 => r.pooled.metrics.macro_f1,
            Objective::RecallAtFpr => r.pooled.operating_point.tpr,
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "auc" | "roc_auc" => Ok(Objective::RocAuc),
            "accuracy" => Ok(Objective::Accuracy),
            "macro_f1" | "f1" => Ok(Objective::MacroF1),
            "recall_at_fpr" => Ok(Objective::RecallAtFpr),
            _ => Err(Error::config(format!("unknown objective {s:?}"))),
        }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Draws hyperparameters for `kind` from fixed search distributions.
pub fn sample_spec<R: Rng>(kind: ClassifierKind, seed: u64, rng: &mut R) -> ClassifierSpec {
    let mut s = ClassifierSpec::new(kind, seed);
    let h = &mut s.hyperparameters;
    match kind {
        ClassifierKind::SgdLogloss | ClassifierKind::LogisticRegression => {
            h.learning_rate = log_uniform(rng, 0.01, 1.0);
            h.l2 = log_uniform(rng, 1e-6, 1e-2);
            h.epochs = rng.gen_range(5..=40);
        }
        ClassifierKind::Ridge => h.ridge_lambda = log_uniform(rng, 1e-2, 1e2),
        ClassifierKind::BaggingTrees | ClassifierKind::ExtraTrees => {
            h.n_trees = rng.gen_range(10..=100);
            h.max_depth = if rng.gen_bool(0.5) { None } else { Some(rng.gen_range(5..=40)) };
            h.min_samples_leaf = rng.gen_range(1..=5);
            if kind == ClassifierKind::ExtraTrees && rng.gen_bool(0.5) {
                h.max_features = Some(MaxFeatures::Count(rng.gen_range(10..=400)));
            }
        }
        ClassifierKind::Adaboost => {
            h.rounds = rng.gen_range(10..=80);
            h.base = BaseLearner::Forest { n_trees: rng.gen_range(3..=15), max_depth: rng.gen_range(1..=4) };
        }
        ClassifierKind::MultinomialNb => h.alpha = log_uniform(rng, 0.01, 3.0),
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub spec: ClassifierSpec,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ClassifierSpec,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

/// Samples `budget` specs for `kind`, scores each as a one-member
/// ensemble by cross-validation on `cables`, and keeps the best (earliest
/// trial on ties). With `include_default`, trial 0 is the default spec.
pub fn random_search(
    cables: &[Cable],
    scenario: Scenario,
    kind: ClassifierKind,
    base: &PipelineConfig,
    budget: usize,
    objective: Objective,
    include_default: bool,
) -> Result<SearchResult> {
    if budget == 0 {
        return Err(Error::config("search budget must be at least 1"));
    }
    let mut trials = Vec::with_capacity(budget);
    for t in 0..budget {
        let member_seed = derive_seed(base.seed, 100 + t as u64);
        let spec = if include_default && t == 0 {
            ClassifierSpec::new(kind, member_seed)
        } else {
            sample_spec(kind, member_seed, &mut rng_for(base.seed, 10_000 + t as u64))
        };
        let mut cfg = base.clone();
        cfg.ensemble = EnsembleConfig {
            members: vec![spec.clone()],
            weights: vec![1.0],
            threshold: base.ensemble.threshold,
            voting: Voting::Soft,
        };
        let report = cross_validate(cables, scenario, &cfg)?;
        trials.push(Trial { trial: t, spec, objective: objective.value(&report) });
    }
    let best = trials
        .iter()
        .fold(None::<&Trial>, |acc, t| match acc {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        })
        .unwrap();
    Ok(SearchResult { best: best.spec.clone(), best_objective: best.objective, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassificationLevel::*;

    pub(crate) fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut half_units = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li {
                p += 1;
            } else {
                n += 1;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    if scores[i] > scores[j] {
                        half_units += 2;
                    } else if scores[i] == scores[j] {
                        half_units += 1;
                    }
                }
            }
        }
        half_units as f64 / (2.0 * p as f64 * n as f64)
    }

    #[test]
    fn binarize_scenarios() {
        assert_eq!(binarize(&[Unclassified, Secret, LimitedOfficialUse], Scenario::UVsCs), (vec![false, true], vec![0, 1]));
        let all = [Unclassified, LimitedOfficialUse, Confidential, Secret];
        assert_eq!(binarize(&all, Scenario::UlcVsS).0, vec![false, false, false, true]);
        assert_eq!(binarize(&all, Scenario::UlVsCs).0, vec![false, false, true, true]);
        assert_eq!(binarize(&all, Scenario::UVsLcs).0, vec![false, true, true, true]);
        for s in Scenario::ALL {
            assert!(binarize(&[Unclassified; 3], s).0.iter().all(|&l| !l));
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
        }
        assert!("U_vs_X".parse::<Scenario>().is_err());
    }

    #[test]
    fn kfold_examples() {
        let labels: Vec<bool> = [vec![true; 6], vec![false; 3]].concat();
        let f = stratified_kfold(&labels, 3, 1).unwrap();
        for fold in 0..3 {
            let pos = (0..9).filter(|&i| f[i] == fold && labels[i]).count();
            let neg = (0..9).filter(|&i| f[i] == fold && !labels[i]).count();
            assert_eq!((pos, neg), (2, 1));
        }
        let labels: Vec<bool> = [vec![true; 7], vec![false; 3]].concat();
        let f = stratified_kfold(&labels, 3, 1).unwrap();
        let mut pos: Vec<usize> = (0..3).map(|k| (0..10).filter(|&i| f[i] == k && labels[i]).count()).collect();
        pos.sort();
        assert_eq!(pos, vec![2, 2, 3]);
        assert!(stratified_kfold(&[true, true, false], 2, 0).is_err());
        assert!(stratified_kfold(&[true, false], 1, 0).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn curve_examples() {
        let c = curves(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap();
        assert!(c.roc.iter().any(|p| p.0 == 0.0 && p.1 == 1.0));
        let c = curves(&[0.5; 4], &[true, false, true, false]).unwrap();
        let pts: Vec<(f64, f64)> = c.roc.iter().map(|p| (p.0, p.1)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn operating_point() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let labels = [true, true, false, true, false, false];
        let op = best_recall_at_fpr(&scores, &labels, 0.34).unwrap();
        assert_eq!((op.tpr, op.threshold), (1.0, 0.6));
        let op = best_recall_at_fpr(&scores, &labels, 0.0).unwrap();
        assert_eq!((op.tpr * 3.0, op.threshold), (2.0, 0.8));
    }

    #[test]
    fn metrics_from_counts() {
        let c = Confusion { tp: 3, fp: 1, tn: 4, fn_: 2 };
        let m = Metrics::from_confusion(&c);
        assert_eq!(m.accuracy, 0.7);
        assert_eq!(m.precision[1], 0.75);
        assert_eq!(m.recall[1], 0.6);
        assert!((m.f1[1] - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
        let z = Metrics::from_confusion(&Confusion { tp: 0, fp: 0, tn: 5, fn_: 0 });
        assert_eq!(z.precision[1], 0.0);
        assert_eq!(z.f1[1], 0.0);
    }

    fn report_with(preds: Vec<ScoredDoc>) -> EvalReport {
        let c = Confusion::default();
        let m = Metrics::from_confusion(&c);
        EvalReport {
            version: 1,
            scenario: Scenario::UVsCs,
            k: 3,
            seed: 0,
            threshold: 0.5,
            n_docs: preds.len(),
            n_positive: 0,
            folds: vec![],
            mean_of_folds: MeanOfFolds {
                accuracy: 0.0,
                precision: [0.0; 2],
                recall: [0.0; 2],
                f1: [0.0; 2],
                macro_f1: 0.0,
                weighted_f1: 0.0,
                roc_auc: 0.0,
            },
            pooled: Pooled {
                confusion: c,
                metrics: m,
                roc_auc: 0.5,
                operating_point: OperatingPoint { threshold: 0.5, tpr: 0.0, fpr: 0.0 },
                member_roc_auc: BTreeMap::new(),
            },
            curves: Curves { roc: vec![], pr: vec![] },
            top_false_positives: vec![],
            top_false_negatives: vec![],
            predictions: preds,
        }
    }

    fn doc(id: &str, label: bool, score: f64) -> ScoredDoc {
        ScoredDoc { doc_id: id.into(), fold: 0, label, score, predicted: score >= 0.5 }
    }

    #[test]
    fn misclassified_ranking() {
        let r = report_with(vec![doc("a", true, 0.9), doc("b", false, 0.1)]);
        assert!(rank_misclassified(&r, Direction::FalsePos, 5).is_empty());
        let r = report_with(vec![
            doc("a", false, 0.6),
            doc("b", false, 0.99),
            doc("c", true, 0.2),
            doc("d", true, 0.05),
            doc("e", false, 0.3),
        ]);
        assert_eq!(rank_misclassified(&r, Direction::FalsePos, 5)[0], ("b".to_string(), 0.99));
        let fns: Vec<String> = rank_misclassified(&r, Direction::FalseNeg, 5).into_iter().map(|p| p.0).collect();
        assert_eq!(fns, vec!["d", "c"]);
    }

    #[test]
    fn embedded_markers() {
        let body = "S E C R E T STATE 123456\nEXDIS\nSUBJECT: EARTH STATION\n1. TEXT FOLLOWS.\nEILTS\nSECRET";
        assert_eq!(detect_embedded_marker(body), Some(Secret));
        assert_eq!(detect_embedded_marker("NO MARKERS HERE"), None);
        assert_eq!(detect_embedded_marker("CONFIDENTIAL\nTEXT\nSECRET NODIS"), Some(Secret));
        assert_eq!(detect_embedded_marker("LIMITED OFFICIAL USE\nBODY TEXT"), Some(LimitedOfficialUse));
        assert_eq!(detect_embedded_marker("C O N F I D E N T I A L SECTION 01 OF 02"), Some(Confidential));
        assert_eq!(
            detect_embedded_marker("THE MINISTER SAID THE SECRET TALKS WOULD CONTINUE NEXT WEEK IN GENEVA"),
            None
        );
        assert_eq!(detect_embedded_marker("UNCLASSIFIED"), Some(Unclassified));
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(
            pairs in prop::collection::vec((0u8..12, any::<bool>()), 2..120)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert!((a - brute_auc(&scores, &labels)).abs() <= 1e-12);
            let c = curves(&scores, &labels).unwrap();
            prop_assert!((trapezoid_area(&c.roc) - a).abs() <= 1e-12);
            prop_assert!(c.roc.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_auc(&flipped, &labels).unwrap() - (1.0 - a)).abs() <= 1e-12);
            let mono: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(roc_auc(&mono, &labels).unwrap(), a);
        }

        #[test]
        fn kfold_partitions(labels in prop::collection::vec(any::<bool>(), 6..200), k in 2usize..6, seed: u64) {
            let pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(pos >= k && labels.len() - pos >= k);
            let f = stratified_kfold(&labels, k, seed).unwrap();
            prop_assert_eq!(f.len(), labels.len());
            for class in [false, true] {
                let sizes: Vec<usize> = (0..k).map(|fold| (0..labels.len()).filter(|&i| f[i] == fold && labels[i] == class).count()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
            prop_assert!(f.iter().all(|&x| x < k));
        }

        #[test]
        fn ranking_matches_sort_oracle(rows in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 0..60), n in 0usize..10) {
            let preds: Vec<ScoredDoc> = rows.iter().enumerate().map(|(i, &(l, s))| doc(&format!("d{i:03}"), l, s)).collect();
            let r = report_with(preds.clone());
            let mut fp: Vec<&ScoredDoc> = preds.iter().filter(|p| !p.label && p.predicted).collect();
            fp.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.doc_id.cmp(&b.doc_id)));
            let want: Vec<(String, f64)> = fp.iter().take(n).map(|p| (p.doc_id.clone(), p.score)).collect();
            prop_assert_eq!(rank_misclassified(&r, Direction::FalsePos, n), want);
        }
    }
}

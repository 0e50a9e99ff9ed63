//! Linear classifiers and repeated stratified cross-validation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::AccountId;
use crate::matrix::FeatureMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    TooFewSamples { class: u8, count: usize, k: usize },
    #[error("raw score must be positive, got {0}")]
    DivisionByZero(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("account {0} has no feature row")]
    MissingFeatures(AccountId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Hinge,
}

impl ModelKind {
    /// Short name used on the command line and in reports.
    pub fn short(self) -> &'static str {
        match self {
            ModelKind::Logistic => "lr",
            ModelKind::Hinge => "svm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(ModelKind::Logistic),
            "svm" | "hinge" => Ok(ModelKind::Hinge),
            other => Err(format!("unknown model `{other}` (expected lr or svm)")),
        }
    }
}

/// Binary classification data: row `i` of `features` has label `labels[i]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: FeatureMatrix,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Vec<u8>) -> Result<Self, MlError> {
        if features.rows() != labels.len() {
            return Err(MlError::LengthMismatch {
                left: features.rows(),
                right: labels.len(),
            });
        }
        if labels.iter().any(|y| *y > 1) {
            return Err(MlError::InvalidHyper("labels must be 0 or 1".into()));
        }
        let pos = labels.iter().filter(|y| **y == 1).count();
        if pos == 0 || pos == labels.len() {
            return Err(MlError::SingleClassData);
        }
        Ok(Dataset { features, labels })
    }

    /// Rows of `feats` for the given samples, in sample order.
    pub fn from_samples(feats: &FeatureMatrix, samples: &[(AccountId, u8)]) -> Result<Self, MlError> {
        let ids: Vec<AccountId> = samples.iter().map(|(id, _)| id.clone()).collect();
        if let Some(missing) = ids.iter().find(|id| !feats.contains(id)) {
            return Err(MlError::MissingFeatures(missing.clone()));
        }
        let selected = feats.select(&ids).expect("ids checked");
        Dataset::new(selected, samples.iter().map(|(_, y)| *y).collect())
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|y| **y == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Shuffled minibatches of this size; full batch when unset.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            l2: 1e-4,
            epochs: 200,
            learning_rate: 0.1,
            batch_size: None,
            seed: 0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), MlError> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(MlError::InvalidHyper(format!("l2 = {}", self.l2)));
        }
        if self.epochs == 0 {
            return Err(MlError::InvalidHyper("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlError::InvalidHyper(format!(
                "learning_rate = {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(MlError::InvalidHyper("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub kind: ModelKind,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: LinearModel,
    /// Full-data objective before training and after each epoch.
    pub loss_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Regularized objective and its (sub)gradient over `rows`.
///
/// The data term is the mean per-sample loss; the penalty is
/// `l2 / 2 * |w|^2` and leaves the bias alone. The hinge subgradient takes
/// zero at the kink.
pub fn loss_and_gradient(
    kind: ModelKind,
    weights: &[f64],
    bias: f64,
    rows: &[&[f64]],
    labels: &[u8],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, y) in rows.iter().zip(labels) {
        let s = if *y == 1 { 1.0 } else { -1.0 };
        let z = dot(weights, x) + bias;
        let coef = match kind {
            ModelKind::Logistic => {
                loss += softplus(-s * z);
                -s * sigmoid(-s * z)
            }
            ModelKind::Hinge => {
                let margin = 1.0 - s * z;
                if margin > 0.0 {
                    loss += margin;
                    -s
                } else {
                    0.0
                }
            }
        };
        if coef != 0.0 {
            gw.iter_mut().zip(x.iter()).for_each(|(g, xi)| *g += coef * xi);
            gb += coef;
        }
    }
    loss /= n;
    gb /= n;
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * dot(weights, weights);
    (loss, gw, gb)
}

/// Gradient descent from zero weights with step `lr / sqrt(t + 1)`.
pub fn fit(ds: &Dataset, kind: ModelKind, hyper: &Hyper) -> Result<FitResult, MlError> {
    let rows: Vec<&[f64]> = (0..ds.len()).map(|i| ds.features.row(i)).collect();
    fit_rows(&rows, &ds.labels, kind, hyper)
}

fn fit_rows(
    rows: &[&[f64]],
    labels: &[u8],
    kind: ModelKind,
    hyper: &Hyper,
) -> Result<FitResult, MlError> {
    hyper.validate()?;
    if rows.is_empty() {
        return Err(MlError::Empty);
    }
    let pos = labels.iter().filter(|y| **y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(MlError::SingleClassData);
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(MlError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(hyper.epochs + 1);
    trace.push(loss_and_gradient(kind, &w, b, rows, labels, hyper.l2).0);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut step = 0usize;
    for _ in 0..hyper.epochs {
        match hyper.batch_size {
            None => {
                let (_, gw, gb) = loss_and_gradient(kind, &w, b, rows, labels, hyper.l2);
                let lr = hyper.learning_rate / ((step + 1) as f64).sqrt();
                w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= lr * g);
                b -= lr * gb;
                step += 1;
            }
            Some(bs) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(bs) {
                    let xs: Vec<&[f64]> = chunk.iter().map(|i| rows[*i]).collect();
                    let ys: Vec<u8> = chunk.iter().map(|i| labels[*i]).collect();
                    let (_, gw, gb) = loss_and_gradient(kind, &w, b, &xs, &ys, hyper.l2);
                    let lr = hyper.learning_rate / ((step + 1) as f64).sqrt();
                    w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= lr * g);
                    b -= lr * gb;
                    step += 1;
                }
            }
        }
        trace.push(loss_and_gradient(kind, &w, b, rows, labels, hyper.l2).0);
    }
    Ok(FitResult {
        model: LinearModel {
            weights: w,
            bias: b,
            kind,
        },
        loss_trace: trace,
    })
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64, MlError> {
        if x.len() != self.weights.len() {
            return Err(MlError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// 1 when the score is on the positive side; the boundary counts as positive.
    pub fn predict_one(&self, x: &[f64]) -> Result<u8, MlError> {
        let z = self.decision(x)?;
        let positive = match self.kind {
            ModelKind::Logistic => sigmoid(z) >= 0.5,
            ModelKind::Hinge => z >= 0.0,
        };
        Ok(u8::from(positive))
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<u8>, MlError> {
        (0..x.rows()).map(|i| self.predict_one(x.row(i))).collect()
    }
}

/// Micro-averaged F1 over both classes.
pub fn micro_f1(pred: &[u8], truth: &[u8]) -> Result<f64, MlError> {
    if pred.len() != truth.len() {
        return Err(MlError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MlError::Empty);
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for class in [0u8, 1] {
        for (p, t) in pred.iter().zip(truth) {
            match (*p == class, *t == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-column z-score parameters. Constant columns get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Standardizer {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            repeats: 10,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub repeat: usize,
    pub fold: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelKind,
    pub hyper: Hyper,
    pub cv: CvConfig,
    pub samples: usize,
    pub positives: usize,
    pub per_fold_scores: Vec<FoldScore>,
    pub mean: f64,
    /// Population standard deviation of the fold scores.
    pub std: f64,
}

/// Fold index of every sample for one shuffle. Each class is dealt round
/// robin, the negatives continuing where the positives stopped, so fold
/// sizes and class counts differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] != 1).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0; labels.len()];
    for (j, i) in pos.iter().chain(&neg).enumerate() {
        fold[*i] = j % k;
    }
    fold
}

fn eval_fold(
    ds: &Dataset,
    folds: &[usize],
    f: usize,
    kind: ModelKind,
    hyper: &Hyper,
    standardize: bool,
) -> Result<f64, MlError> {
    let train: Vec<usize> = (0..ds.len()).filter(|i| folds[*i] != f).collect();
    let test: Vec<usize> = (0..ds.len()).filter(|i| folds[*i] == f).collect();
    let scaler = standardize.then(|| {
        let rows: Vec<&[f64]> = train.iter().map(|i| ds.features.row(*i)).collect();
        Standardizer::fit(&rows)
    });
    let prep = |i: usize| -> Vec<f64> {
        match &scaler {
            Some(s) => s.transform(ds.features.row(i)),
            None => ds.features.row(i).to_vec(),
        }
    };
    let train_x: Vec<Vec<f64>> = train.iter().map(|i| prep(*i)).collect();
    let train_refs: Vec<&[f64]> = train_x.iter().map(|r| r.as_slice()).collect();
    let train_y: Vec<u8> = train.iter().map(|i| ds.labels[*i]).collect();
    let model = fit_rows(&train_refs, &train_y, kind, hyper)?.model;
    let pred = test
        .iter()
        .map(|i| model.predict_one(&prep(*i)))
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<u8> = test.iter().map(|i| ds.labels[*i]).collect();
    micro_f1(&pred, &truth)
}

/// Repeated stratified k-fold; repeat `r` shuffles with `cv.seed + r`.
pub fn cross_validate(
    ds: &Dataset,
    kind: ModelKind,
    hyper: &Hyper,
    cv: &CvConfig,
) -> Result<CvReport, MlError> {
    hyper.validate()?;
    if cv.k < 2 || cv.repeats == 0 {
        return Err(MlError::InvalidHyper(format!(
            "k = {}, repeats = {}",
            cv.k, cv.repeats
        )));
    }
    let positives = ds.positives();
    for (class, count) in [(1u8, positives), (0u8, ds.len() - positives)] {
        if count < cv.k {
            return Err(MlError::TooFewSamples { class, count, k: cv.k });
        }
    }
    let fold_sets: Vec<Vec<usize>> = (0..cv.repeats)
        .map(|r| stratified_folds(&ds.labels, cv.k, cv.seed.wrapping_add(r as u64)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cv.repeats)
        .flat_map(|r| (0..cv.k).map(move |f| (r, f)))
        .collect();
    let per_fold_scores = jobs
        .par_iter()
        .map(|&(repeat, fold)| {
            eval_fold(ds, &fold_sets[repeat], fold, kind, hyper, cv.standardize)
                .map(|score| FoldScore { repeat, fold, score })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = per_fold_scores.len() as f64;
    let mean = per_fold_scores.iter().map(|s| s.score).sum::<f64>() / n;
    let var = per_fold_scores
        .iter()
        .map(|s| (s.score - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(CvReport {
        model: kind,
        hyper: *hyper,
        cv: *cv,
        samples: ds.len(),
        positives,
        per_fold_scores,
        mean,
        std: var.sqrt(),
    })
}

/// Relative improvement in percent.
pub fn gain(raw: f64, aug: f64) -> Result<f64, MlError> {
    if raw.is_nan() || raw <= 0.0 {
        return Err(MlError::DivisionByZero(raw));
    }
    Ok(100.0 * (aug - raw) / raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub features: String,
    pub model: ModelKind,
    pub raw: f64,
    pub augmented: f64,
    pub gain_percent: f64,
}

pub fn compare_reports(features: &str, raw: &CvReport, aug: &CvReport) -> Result<GainRow, MlError> {
    Ok(GainRow {
        features: features.to_string(),
        model: raw.model,
        raw: raw.mean,
        augmented: aug.mean,
        gain_percent: gain(raw.mean, aug.mean)?,
    })
}

/// Plain-text table of gain rows, scores shown in percent.
pub fn render_gain_table(rows: &[GainRow]) -> String {
    let mut out = format!(
        "{:<12} {:<6} {:>9} {:>9} {:>9}\n",
        "features", "model", "raw", "hfaug", "gain"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<6} {:>9.2} {:>9.2} {:>+8.2}%\n",
            r.features,
            r.model.short(),
            100.0 * r.raw,
            100.0 * r.augmented,
            r.gain_percent
        ));
    }
    out
}

//! Evaluation: confusion counts, accuracy/precision/recall/F1/Youden's J,
//! the confidence-threshold sweep and the per-layer per-class accuracy
//! matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{LabelMode, Subset};
use crate::error::{Error, Result};
use crate::model::EagerNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    /// Class 1 is the positive (attack) class.
    pub fn from_predictions(pred: &[usize], truth: &[usize]) -> Self {
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub youden_j: f64,
    /// Metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn binary_metrics(c: &BinaryCounts) -> Result<BinaryMetrics> {
    if c.total() == 0 {
        return Err(Error::Empty("no samples to score".into()));
    }
    let mut undefined = Vec::new();
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
    let specificity = ratio(c.tn, c.tn + c.fp, "specificity", &mut undefined);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BinaryMetrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        f1,
        youden_j: recall + specificity - 1.0,
        undefined,
    })
}

/// `C × C` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn from_predictions(classes: usize, pred: &[usize], truth: &[usize]) -> Self {
        let mut m = Self::new(classes);
        for (&p, &t) in pred.iter().zip(truth) {
            m.counts[t * classes + p] += 1;
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total().max(1) as f64
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    /// Class `k` against the rest.
    pub fn one_vs_rest(&self, k: usize) -> BinaryCounts {
        let tp = self.get(k, k);
        let row = self.support(k);
        let col: u64 = (0..self.classes).map(|t| self.get(t, k)).sum();
        BinaryCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
    Weighted,
}

fn class_f1(c: &BinaryCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

pub fn f1_multiclass(m: &ConfusionMatrix, average: F1Average) -> Result<f64> {
    if m.classes() < 2 {
        return Err(Error::InvalidArgument("multiclass F1 needs at least 2 classes".into()));
    }
    let per: Vec<f64> = (0..m.classes()).map(|k| class_f1(&m.one_vs_rest(k))).collect();
    Ok(match average {
        F1Average::Macro => per.iter().sum::<f64>() / per.len() as f64,
        // micro F1 over single-label predictions is accuracy
        F1Average::Micro => m.accuracy(),
        F1Average::Weighted => {
            let total = m.total().max(1) as f64;
            per.iter()
                .enumerate()
                .map(|(k, f)| f * m.support(k) as f64 / total)
                .sum()
        }
    })
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub accuracy: f64,
    pub mean_exit_layer: f64,
    /// `exit_histogram[k]` = samples answered by head `k + 1`.
    pub exit_histogram: Vec<u64>,
    pub correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub depth: usize,
    pub samples: usize,
    pub points: Vec<SweepPoint>,
    /// SHA-256 of the model file bytes and the evaluated features.
    pub provenance: String,
}

impl SweepReport {
    /// `threshold,accuracy,mean_exit_layer,exit_hist_1..exit_hist_L`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,accuracy,mean_exit_layer");
        for k in 1..=self.depth {
            s.push_str(&format!(",exit_hist_{k}"));
        }
        s.push('\n');
        for p in &self.points {
            s.push_str(&format!("{},{},{}", p.threshold, p.accuracy, p.mean_exit_layer));
            for h in &p.exit_histogram {
                s.push_str(&format!(",{h}"));
            }
            s.push('\n');
        }
        s
    }
}

/// `points` evenly spaced thresholds from the confidence floor to 1.
pub fn default_grid(model: &EagerNet, points: usize) -> Vec<f64> {
    let lo = model.config.confidence_floor();
    match points {
        0 => Vec::new(),
        1 => vec![1.0],
        n => (0..n)
            .map(|i| {
                if i + 1 == n {
                    1.0
                } else {
                    lo + (1.0 - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

fn provenance(model: &EagerNet, subset: &Subset) -> Result<String> {
    let mut h = Sha256::new();
    h.update(model.to_bytes()?);
    for v in subset.features.as_slice() {
        h.update(v.to_le_bytes());
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Per-sample exit layer and correctness at one threshold.
pub fn eager_outcomes(model: &EagerNet, subset: &Subset, threshold: f64) -> Result<Vec<(usize, bool)>> {
    let truth = subset.targets(model.config.mode);
    (0..subset.len())
        .into_par_iter()
        .map(|i| {
            let p = model.forward_eager(subset.features.row(i), threshold)?;
            Ok((p.exit_layer, p.class == truth[i]))
        })
        .collect()
}

/// Run early-exit inference over `subset` at each threshold.
pub fn threshold_sweep(model: &EagerNet, subset: &Subset, thresholds: &[f64]) -> Result<SweepReport> {
    if subset.is_empty() {
        return Err(Error::Empty("threshold sweep over an empty test set".into()));
    }
    for w in thresholds.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument("thresholds must be strictly increasing".into()));
        }
    }
    for &t in thresholds {
        model.check_threshold(t)?;
    }
    let depth = model.depth();
    let n = subset.len();
    let mut points = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let outcomes = eager_outcomes(model, subset, threshold)?;
        let mut hist = vec![0u64; depth];
        let mut correct = 0u64;
        for &(exit, ok) in &outcomes {
            hist[exit - 1] += 1;
            correct += ok as u64;
        }
        let layer_sum: u64 = hist.iter().enumerate().map(|(k, &c)| (k as u64 + 1) * c).sum();
        points.push(SweepPoint {
            threshold,
            accuracy: correct as f64 / n as f64,
            mean_exit_layer: layer_sum as f64 / n as f64,
            exit_histogram: hist,
            correct,
        });
    }
    Ok(SweepReport {
        depth,
        samples: n,
        points,
        provenance: provenance(model, subset)?,
    })
}

/// Accuracy of every head restricted to every true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerClassMatrix {
    pub class_names: Vec<String>,
    /// `accuracy[head][class]`; `None` where the class has no samples.
    pub accuracy: Vec<Vec<Option<f64>>>,
    pub support: Vec<u64>,
}

impl LayerClassMatrix {
    /// Header `layer,<class...>`, one row per head, then a `support` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer");
        for c in &self.class_names {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (k, row) in self.accuracy.iter().enumerate() {
            s.push_str(&(k + 1).to_string());
            for a in row {
                s.push(',');
                if let Some(a) = a {
                    s.push_str(&a.to_string());
                }
            }
            s.push('\n');
        }
        s.push_str("support");
        for n in &self.support {
            s.push_str(&format!(",{n}"));
        }
        s.push('\n');
        s
    }

    /// Support-weighted mean over classes for one head.
    pub fn overall(&self, head: usize) -> f64 {
        let total: u64 = self.support.iter().sum();
        self.accuracy[head]
            .iter()
            .zip(&self.support)
            .filter_map(|(a, &n)| a.map(|a| a * n as f64))
            .sum::<f64>()
            / total.max(1) as f64
    }
}

pub fn layer_class_accuracy(model: &EagerNet, subset: &Subset) -> Result<LayerClassMatrix> {
    let classes = model.config.classes;
    let truth = subset.targets(model.config.mode);
    let mut support = vec![0u64; classes];
    for &t in &truth {
        support[t] += 1;
    }
    let preds = model.predict_all_heads(&subset.features)?;
    let accuracy = preds
        .iter()
        .map(|p| {
            let mut hits = vec![0u64; classes];
            for (&pi, &ti) in p.iter().zip(&truth) {
                hits[ti] += (pi == ti) as u64;
            }
            hits.iter()
                .zip(&support)
                .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
                .collect()
        })
        .collect();
    Ok(LayerClassMatrix {
        class_names: model.class_names.clone(),
        accuracy,
        support,
    })
}

/// Last-head evaluation summary written by `eagernet eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: LabelMode,
    pub samples: usize,
    pub class_names: Vec<String>,
    pub head_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    /// Binary: the attack class. Multiclass: one-vs-rest per class.
    pub per_class: Vec<BinaryMetrics>,
    pub binary: Option<BinaryMetrics>,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub f1_weighted: f64,
}

pub fn evaluate(model: &EagerNet, subset: &Subset) -> Result<EvalReport> {
    if subset.is_empty() {
        return Err(Error::Empty("evaluation over an empty test set".into()));
    }
    let truth = subset.targets(model.config.mode);
    let preds = model.predict_all_heads(&subset.features)?;
    let head_accuracy = preds
        .iter()
        .map(|p| p.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
        .collect();
    let last = preds.last().expect("depth >= 1");
    let cm = ConfusionMatrix::from_predictions(model.config.classes, last, &truth);
    let binary = match model.config.mode {
        LabelMode::Binary => Some(binary_metrics(&BinaryCounts::from_predictions(last, &truth))?),
        LabelMode::Multiclass => None,
    };
    let per_class = (0..cm.classes())
        .map(|k| binary_metrics(&cm.one_vs_rest(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        mode: model.config.mode,
        samples: subset.len(),
        class_names: model.class_names.clone(),
        head_accuracy,
        confusion: cm.rows(),
        per_class,
        binary,
        f1_macro: f1_multiclass(&cm, F1Average::Macro)?,
        f1_micro: f1_multiclass(&cm, F1Average::Micro)?,
        f1_weighted: f1_multiclass(&cm, F1Average::Weighted)?,
    })
}

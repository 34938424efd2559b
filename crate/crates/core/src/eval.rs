//! Consensus inference, prediction-to-ground-truth matching and per-head
//! accuracy / macro recall / macro precision.
//!
//! Recall and precision are macro averages over the classes that occur in
//! the ground truth of a head; classes absent from the ground truth are left
//! out. A present class that is never predicted has precision 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{LabelVocabulary, Vocabularies};
use crate::detect::Box3d;

pub const DEFAULT_IOU3D_MIN: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no samples to score")]
    Empty,
    #[error("head '{0}': truth and prediction lengths differ")]
    LengthMismatch(String),
    #[error("head '{head}': class {class} out of range")]
    ClassOutOfRange { head: String, class: usize },
    #[error("head '{0}' has no 'no_fracture' label")]
    NoNegativeLabel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPrediction {
    pub head: String,
    pub class: usize,
    pub probs: Vec<f64>,
    /// Index of `no_fracture` in this head's vocabulary.
    pub no_fracture: usize,
}

impl HeadPrediction {
    /// Argmax prediction from a probability vector; ties go to the lower index.
    pub fn from_probs(vocab: &LabelVocabulary, probs: Vec<f64>) -> Result<Self, EvalError> {
        let no_fracture = vocab
            .no_fracture_index()
            .ok_or_else(|| EvalError::NoNegativeLabel(vocab.head.clone()))?;
        let class = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc })
            .0;
        Ok(Self {
            head: vocab.head.clone(),
            class,
            probs,
            no_fracture,
        })
    }

    pub fn is_negative(&self) -> bool {
        self.class == self.no_fracture
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPredictions {
    pub heads: Vec<HeadPrediction>,
}

impl HeadPredictions {
    pub fn from_probs(vocab: &Vocabularies, probs: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        let heads = vocab
            .heads
            .iter()
            .zip(probs)
            .map(|(v, p)| HeadPrediction::from_probs(v, p))
            .collect::<Result<_, _>>()?;
        Ok(Self { heads })
    }

    pub fn classes(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.class).collect()
    }
}

/// If two or more heads predict `no_fracture`, force every head to it;
/// otherwise return the predictions unchanged.
pub fn consensus(p: &HeadPredictions) -> HeadPredictions {
    let negatives = p.heads.iter().filter(|h| h.is_negative()).count();
    let mut out = p.clone();
    if negatives >= 2 {
        for h in &mut out.heads {
            h.class = h.no_fracture;
        }
    }
    out
}

/// One matched (prediction, ground truth) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Greedy one-to-one matching by descending 3D IoU; ties go to the lower
/// prediction index, then the lower ground-truth index. Pairs below
/// `iou3d_min` are never matched.
pub fn match_tracks(pred: &[Box3d], gt: &[Box3d], iou3d_min: f64) -> Vec<Match> {
    let mut cands = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let iou = p.iou(g);
            if iou >= iou3d_min && iou > 0.0 {
                cands.push(Match { pred: i, gt: j, iou });
            }
        }
    }
    cands.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.pred.cmp(&b.pred)).then(a.gt.cmp(&b.gt)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut out = Vec::new();
    for m in cands {
        if !used_p[m.pred] && !used_g[m.gt] {
            used_p[m.pred] = true;
            used_g[m.gt] = true;
            out.push(m);
        }
    }
    out.sort_by_key(|m| (m.pred, m.gt));
    out
}

/// Ground truth and predictions for one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSamples {
    pub name: String,
    pub n_classes: usize,
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
}

impl HeadSamples {
    /// `confusion[truth][pred]` counts.
    pub fn confusion(&self) -> Result<Vec<Vec<u64>>, EvalError> {
        if self.truth.len() != self.pred.len() {
            return Err(EvalError::LengthMismatch(self.name.clone()));
        }
        let mut m = vec![vec![0u64; self.n_classes]; self.n_classes];
        for (&t, &p) in self.truth.iter().zip(&self.pred) {
            if t >= self.n_classes || p >= self.n_classes {
                return Err(EvalError::ClassOutOfRange {
                    head: self.name.clone(),
                    class: t.max(p),
                });
            }
            m[t][p] += 1;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub head: String,
    pub support: u64,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub heads: Vec<HeadMetrics>,
    pub average: Scores,
}

/// Accuracy, macro recall and macro precision of a square confusion matrix
/// indexed `[truth][pred]`.
pub fn scores_from_confusion(m: &[Vec<u64>]) -> Result<Scores, EvalError> {
    let total: u64 = m.iter().flatten().sum();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let k = m.len();
    let correct: u64 = (0..k).map(|i| m[i][i]).sum();
    let (mut rec, mut prec, mut present) = (0.0, 0.0, 0usize);
    for c in 0..k {
        let row: u64 = m[c].iter().sum();
        if row == 0 {
            continue;
        }
        let col: u64 = (0..k).map(|r| m[r][c]).sum();
        present += 1;
        rec += m[c][c] as f64 / row as f64;
        prec += if col == 0 { 0.0 } else { m[c][c] as f64 / col as f64 };
    }
    Ok(Scores {
        accuracy: correct as f64 / total as f64,
        recall: rec / present as f64,
        precision: prec / present as f64,
    })
}

/// Score every head and average the scores across heads.
pub fn compute_metrics(dataset: &str, heads: &[HeadSamples]) -> Result<MetricsReport, EvalError> {
    if heads.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut out = Vec::with_capacity(heads.len());
    for h in heads {
        let conf = h.confusion()?;
        out.push(HeadMetrics {
            head: h.name.clone(),
            support: h.truth.len() as u64,
            scores: scores_from_confusion(&conf)?,
        });
    }
    let n = out.len() as f64;
    let average = Scores {
        accuracy: out.iter().map(|h| h.scores.accuracy).sum::<f64>() / n,
        recall: out.iter().map(|h| h.scores.recall).sum::<f64>() / n,
        precision: out.iter().map(|h| h.scores.precision).sum::<f64>() / n,
    };
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        heads: out,
        average,
    })
}

impl MetricsReport {
    /// Aligned plain-text table: one row per head plus an `Average` row.
    pub fn to_table(&self) -> String {
        let w = self
            .heads
            .iter()
            .map(|h| h.head.len())
            .chain(["CLS Head".len(), "Average".len()])
            .max()
            .unwrap_or(8);
        let rule = format!("{}-+-{}-+-{}-+-{}\n", "-".repeat(w), "-".repeat(8), "-".repeat(8), "-".repeat(9));
        let row = |name: &str, s: &Scores| {
            format!(
                "{name:<w$} | {:>8.4} | {:>8.4} | {:>9.4}\n",
                s.accuracy, s.recall, s.precision
            )
        };
        let mut out = String::new();
        let _ = writeln!(out, "Dataset: {}", self.dataset);
        let _ = writeln!(out, "{:<w$} | {:>8} | {:>8} | {:>9}", "CLS Head", "Accuracy", "Recall", "Precision");
        out.push_str(&rule);
        for h in &self.heads {
            out.push_str(&row(&h.head, &h.scores));
        }
        out.push_str(&rule);
        out.push_str(&row("Average", &self.average));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(classes: &[usize]) -> HeadPredictions {
        HeadPredictions {
            heads: classes
                .iter()
                .enumerate()
                .map(|(i, &c)| HeadPrediction {
                    head: format!("h{i}"),
                    class: c,
                    probs: vec![0.25; 4],
                    no_fracture: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn consensus_cases() {
        assert_eq!(consensus(&preds(&[0, 0, 1, 3])).classes(), vec![0, 0, 0, 0]);
        assert_eq!(consensus(&preds(&[0, 2, 3, 1])).classes(), vec![0, 2, 3, 1]);
        assert_eq!(consensus(&preds(&[0, 0, 0, 0])).classes(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn from_probs_uses_vocab_negative() {
        let v = Vocabularies::default();
        let p = HeadPrediction::from_probs(&v.heads[0], vec![0.1, 0.2, 0.6, 0.1]).unwrap();
        assert_eq!((p.class, p.no_fracture), (2, 0));
        let bad = LabelVocabulary::new("x", &["a"]);
        assert!(HeadPrediction::from_probs(&bad, vec![1.0]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let s = scores_from_confusion(&[vec![2, 0], vec![0, 2]]).unwrap();
        assert_eq!((s.accuracy, s.recall, s.precision), (1.0, 1.0, 1.0));
        let s = scores_from_confusion(&[vec![1, 1], vec![0, 2]]).unwrap();
        assert_eq!(s.accuracy, 0.75);
        assert_eq!(s.recall, 0.75);
        assert!((s.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(scores_from_confusion(&[vec![0, 0], vec![0, 0]]), Err(EvalError::Empty));
    }

    #[test]
    fn absent_classes_are_excluded() {
        // Class 2 never occurs in the ground truth but is predicted once.
        let s = scores_from_confusion(&[vec![1, 0, 1], vec![0, 2, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(s.recall, (0.5 + 1.0) / 2.0);
        assert_eq!(s.precision, (1.0 + 1.0) / 2.0);
    }

    #[test]
    fn metrics_errors() {
        let h = HeadSamples { name: "a".into(), n_classes: 2, truth: vec![0], pred: vec![] };
        assert!(matches!(compute_metrics("d", &[h]), Err(EvalError::LengthMismatch(_))));
        let h = HeadSamples { name: "a".into(), n_classes: 2, truth: vec![2], pred: vec![0] };
        assert!(matches!(compute_metrics("d", &[h]), Err(EvalError::ClassOutOfRange { .. })));
        assert_eq!(compute_metrics("d", &[]), Err(EvalError::Empty));
    }

    fn b(x: f64, z: i64) -> Box3d {
        Box3d { x_min: x, y_min: 0.0, z_min: z, x_max: x + 10.0, y_max: 10.0, z_max: z + 4 }
    }

    #[test]
    fn matching_basics() {
        let boxes = vec![b(0.0, 0), b(50.0, 10), b(100.0, 20)];
        let m = match_tracks(&boxes, &boxes, DEFAULT_IOU3D_MIN);
        assert_eq!(m.iter().map(|m| (m.pred, m.gt)).collect::<Vec<_>>(), vec![(0, 0), (1, 1), (2, 2)]);
        let far = vec![b(500.0, 0)];
        assert!(match_tracks(&boxes, &far, DEFAULT_IOU3D_MIN).is_empty());
        let shifted = vec![b(8.0, 0)];
        assert!(match_tracks(&boxes[..1], &shifted, DEFAULT_IOU3D_MIN).is_empty());
        assert_eq!(match_tracks(&boxes[..1], &shifted, 0.1).len(), 1);
    }
}

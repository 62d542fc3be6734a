//! Biometric evaluation: confusion counts, scalar rates, ROC, EER, AUC,
//! threshold selection and per-imposter-category breakdowns.
//!
//! A sample is accepted when `score >= threshold`.

mod report;

use serde::{Deserialize, Serialize};

use crate::dataset::ImposterCategory;

pub use report::{
    category_report, CategoryReport, CategoryRow, EvalReport, OperatingPoint, RateKind,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no scored samples")]
    Empty,
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("{0} is undefined: zero denominator")]
    Undefined(&'static str),
    #[error("ROC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score {0} is not a finite value in [0, 1]")]
    BadScore(f64),
    #[error("label {label} contradicts category {category}")]
    LabelMismatch { label: u8, category: ImposterCategory },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
    pub category: ImposterCategory,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8, category: ImposterCategory) -> Result<Self, MetricError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(MetricError::BadScore(score));
        }
        if label != category.label() {
            return Err(MetricError::LabelMismatch { label, category });
        }
        Ok(Self { score, label, category })
    }

    /// Sample whose category is implied by the label alone.
    pub fn binary(score: f64, label: bool) -> Result<Self, MetricError> {
        let category = if label {
            ImposterCategory::Genuine
        } else {
            ImposterCategory::DifferentPersonWrongWord
        };
        Self::new(score, u8::from(label), category)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Counts decisions at any threshold, including ROC sentinels outside `[0, 1]`.
    pub fn count(samples: &[ScoredSample], threshold: f64) -> Self {
        let mut c = Self::default();
        for s in samples {
            match (s.score >= threshold, s.label == 1) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

pub fn confusion(samples: &[ScoredSample], threshold: f64) -> Result<ConfusionCounts, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricError::ThresholdOutOfRange(threshold));
    }
    Ok(ConfusionCounts::count(samples, threshold))
}

fn ratio(num: usize, den: usize, name: &'static str) -> Result<f64, MetricError> {
    if den == 0 {
        Err(MetricError::Undefined(name))
    } else {
        Ok(num as f64 / den as f64)
    }
}

/// `TP / (TP + FN)`
pub fn sensitivity(c: &ConfusionCounts) -> Result<f64, MetricError> {
    ratio(c.tp, c.positives(), "sensitivity")
}

/// `TN / (TN + FP)`
pub fn specificity(c: &ConfusionCounts) -> Result<f64, MetricError> {
    ratio(c.tn, c.negatives(), "specificity")
}

/// `(TP + TN) / total`
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricError> {
    ratio(c.tp + c.tn, c.total(), "accuracy")
}

/// False acceptances over the whole population, `FP / total`. Not the
/// conventional false positive rate used by the ROC.
pub fn far_paper(c: &ConfusionCounts) -> Result<f64, MetricError> {
    ratio(c.fp, c.total(), "far_paper")
}

/// False rejections over the whole population, `FN / total`.
pub fn frr_paper(c: &ConfusionCounts) -> Result<f64, MetricError> {
    ratio(c.fn_, c.total(), "frr_paper")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

/// ROC points ordered by decreasing threshold, from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub positives: usize,
    pub negatives: usize,
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Tab-separated `threshold fpr tpr` lines under a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("threshold\tfpr\ttpr\n");
        for p in &self.points {
            out.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }
}

/// Sweeps thresholds over every distinct score (descending) plus one
/// sentinel above the maximum and one below the minimum.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve, MetricError> {
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let point = |threshold: f64, tp: usize, fp: usize| RocPoint {
        threshold,
        fpr: fp as f64 / negatives as f64,
        tpr: tp as f64 / positives as f64,
        tp,
        fp,
    };
    let max = sorted[0].score;
    let min = sorted[sorted.len() - 1].score;
    let mut points = vec![point(max.next_up(), 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(point(score, tp, fp));
    }
    points.push(point(min.next_down(), tp, fp));
    Ok(RocCurve { positives, negatives, points })
}

/// Equal-error operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub rate: f64,
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Intersects the curve with `FPR = 1 - TPR`, interpolating linearly
/// between the two points that bracket the sign change.
pub fn eer(curve: &RocCurve) -> EerPoint {
    let gap = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    let pts = &curve.points;
    for (k, p) in pts.iter().enumerate() {
        let here = gap(p);
        if here == 0.0 {
            return EerPoint { rate: p.fpr, threshold: p.threshold, fpr: p.fpr, tpr: p.tpr };
        }
        if here > 0.0 {
            // The first point has gap -1, so k > 0 here.
            let prev = &pts[k - 1];
            let before = gap(prev);
            let alpha = -before / (here - before);
            let lerp = |a: f64, b: f64| a + alpha * (b - a);
            let fpr = lerp(prev.fpr, p.fpr);
            let tpr = lerp(prev.tpr, p.tpr);
            return EerPoint { rate: fpr, threshold: lerp(prev.threshold, p.threshold), fpr, tpr };
        }
    }
    unreachable!("ROC curves end at (1, 1), where the gap is +1")
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Threshold maximizing `TPR - FPR`; ties go to lower FPR, then to the
/// higher threshold.
pub fn choose_threshold(curve: &RocCurve) -> f64 {
    let (p, n) = (curve.positives as i128, curve.negatives as i128);
    // TPR - FPR compared exactly as tp * N - fp * P.
    let j = |pt: &RocPoint| pt.tp as i128 * n - pt.fp as i128 * p;
    let best = curve
        .points
        .iter()
        .max_by(|a, b| {
            j(a).cmp(&j(b))
                .then(b.fp.cmp(&a.fp))
                .then(a.threshold.total_cmp(&b.threshold))
        })
        .expect("curves always hold their endpoints");
    best.threshold
}

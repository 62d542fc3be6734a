use serde::{Deserialize, Serialize};

use super::{
    accuracy, auc, eer, far_paper, frr_paper, roc_curve, sensitivity, specificity, ConfusionCounts,
    MetricError, RocCurve, ScoredSample,
};
use crate::dataset::ImposterCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Sensitivity,
    Specificity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: ImposterCategory,
    pub count: usize,
    /// Genuine rows report sensitivity, imposter rows specificity.
    pub kind: RateKind,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub rows: Vec<CategoryRow>,
    /// Categories with no samples; reported as absent rather than as a rate.
    pub missing: Vec<ImposterCategory>,
}

pub fn category_report(samples: &[ScoredSample], threshold: f64) -> CategoryReport {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for category in ImposterCategory::ALL {
        let members: Vec<&ScoredSample> = samples.iter().filter(|s| s.category == category).collect();
        if members.is_empty() {
            missing.push(category);
            continue;
        }
        let accepted = members.iter().filter(|s| s.score >= threshold).count();
        let (kind, correct) = if category == ImposterCategory::Genuine {
            (RateKind::Sensitivity, accepted)
        } else {
            (RateKind::Specificity, members.len() - accepted)
        };
        rows.push(CategoryRow {
            category,
            count: members.len(),
            kind,
            rate: correct as f64 / members.len() as f64,
        });
    }
    CategoryReport { rows, missing }
}

/// Every threshold-dependent figure at one decision threshold. Metrics whose
/// denominator is zero are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub confusion: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub far_paper: Option<f64>,
    pub frr_paper: Option<f64>,
    pub categories: CategoryReport,
}

impl OperatingPoint {
    pub fn at(samples: &[ScoredSample], threshold: f64) -> Self {
        let c = ConfusionCounts::count(samples, threshold);
        Self {
            threshold,
            confusion: c,
            sensitivity: sensitivity(&c).ok(),
            specificity: specificity(&c).ok(),
            accuracy: accuracy(&c).ok(),
            far_paper: far_paper(&c).ok(),
            frr_paper: frr_paper(&c).ok(),
            categories: category_report(samples, threshold),
        }
    }

    pub fn undefined(&self) -> Vec<&'static str> {
        [
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("accuracy", self.accuracy),
            ("far_paper", self.far_paper),
            ("frr_paper", self.frr_paper),
        ]
        .into_iter()
        .filter(|(_, v)| v.is_none())
        .map(|(name, _)| name)
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub positives: usize,
    pub negatives: usize,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    /// Metrics at the externally calibrated threshold.
    pub calibrated: OperatingPoint,
    /// Metrics at the fixed 0.5 threshold.
    pub at_half: OperatingPoint,
}

impl EvalReport {
    /// Scores `samples` at `threshold` and at 0.5. ROC-derived figures are
    /// `None` when only one class is present. Also returns the ROC curve.
    pub fn build(
        samples: &[ScoredSample],
        threshold: f64,
    ) -> Result<(Self, Option<RocCurve>), MetricError> {
        if samples.is_empty() {
            return Err(MetricError::Empty);
        }
        let curve = match roc_curve(samples) {
            Ok(c) => Some(c),
            Err(MetricError::SingleClass { .. }) => None,
            Err(e) => return Err(e),
        };
        let equal = curve.as_ref().map(eer);
        let positives = samples.iter().filter(|s| s.label == 1).count();
        let report = Self {
            samples: samples.len(),
            positives,
            negatives: samples.len() - positives,
            auc: curve.as_ref().map(auc),
            eer: equal.map(|e| e.rate),
            eer_threshold: equal.map(|e| e.threshold),
            calibrated: OperatingPoint::at(samples, threshold),
            at_half: OperatingPoint::at(samples, 0.5),
        };
        Ok((report, curve))
    }

    /// Names of metrics that could not be computed.
    pub fn undefined(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.auc.is_none() {
            out.push("auc".to_string());
            out.push("eer".to_string());
        }
        out.extend(self.calibrated.undefined().into_iter().map(|m| format!("calibrated.{m}")));
        out.extend(self.at_half.undefined().into_iter().map(|m| format!("at_half.{m}")));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(score: f64, category: ImposterCategory) -> ScoredSample {
        ScoredSample::new(score, category.label(), category).unwrap()
    }

    #[test]
    fn category_rates_are_recounted_per_category() {
        use ImposterCategory::*;
        let samples = vec![
            s(0.9, Genuine),
            s(0.3, Genuine),
            s(0.1, SamePersonWrongWord),
            s(0.7, SamePersonWrongWord),
            s(0.2, SamePersonWrongWord),
            s(0.05, DifferentPersonSameWord),
        ];
        let r = category_report(&samples, 0.5);
        assert_eq!(r.missing, vec![DifferentPersonWrongWord]);
        let rate = |c| r.rows.iter().find(|row| row.category == c).unwrap().rate;
        assert_eq!(rate(Genuine), 0.5);
        assert!((rate(SamePersonWrongWord) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rate(DifferentPersonSameWord), 1.0);
        assert_eq!(r.rows[0].kind, RateKind::Sensitivity);
    }

    #[test]
    fn single_class_report_flags_undefined_metrics() {
        let samples = vec![s(0.2, ImposterCategory::SamePersonWrongWord)];
        let (report, curve) = EvalReport::build(&samples, 0.5).unwrap();
        assert!(curve.is_none());
        let undefined = report.undefined();
        assert!(undefined.contains(&"auc".to_string()));
        assert!(undefined.contains(&"calibrated.sensitivity".to_string()));
        assert_eq!(report.calibrated.specificity, Some(1.0));
    }
}

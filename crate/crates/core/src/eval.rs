//! Confusion matrices, TSS / HSS2 skill scores and cross-trial aggregation.
//!
//! ```text
//! TSS  = TP/(TP+FN) - FP/(FP+TN)
//! HSS2 = 2(TP·TN - FN·FP) / (P(FN+TN) + N(TP+FP)),  P = TP+FN, N = FP+TN
//! ```
//!
//! Undefined scores are errors rather than NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvts::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Actual positives.
    pub fn p(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Actual negatives.
    pub fn n(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn total(&self) -> u64 {
        self.p() + self.n()
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self::new(self.tp * k, self.fp * k, self.fn_ * k, self.tn * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillScores {
    pub tss: f64,
    pub hss2: f64,
}

impl SkillScores {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            tss: tss(cm)?,
            hss2: hss2(cm)?,
        })
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p, t) {
            (Label::Positive, Label::Positive) => cm.tp += 1,
            (Label::Positive, Label::Negative) => cm.fp += 1,
            (Label::Negative, Label::Positive) => cm.fn_ += 1,
            (Label::Negative, Label::Negative) => cm.tn += 1,
        }
    }
    Ok(cm)
}

pub fn tss(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.p() == 0 {
        return Err(Error::UndefinedSkill("TSS needs at least one actual positive"));
    }
    if cm.n() == 0 {
        return Err(Error::UndefinedSkill("TSS needs at least one actual negative"));
    }
    // (TP N - FP P) / (P N) in exact integers, rounded once
    let (p, n) = (cm.p() as i128, cm.n() as i128);
    Ok((cm.tp as i128 * n - cm.fp as i128 * p) as f64 / (p * n) as f64)
}

pub fn hss2(cm: &ConfusionMatrix) -> Result<f64> {
    // exact integer arithmetic before the final division
    let (tp, fp, fn_, tn) = (cm.tp as i128, cm.fp as i128, cm.fn_ as i128, cm.tn as i128);
    let (p, n) = (tp + fn_, fp + tn);
    let num = 2 * (tp * tn - fn_ * fp);
    let den = p * (fn_ + tn) + n * (tp + fp);
    if den == 0 {
        return Err(Error::UndefinedSkill("HSS2 denominator is zero"));
    }
    Ok(num as f64 / den as f64)
}

/// Mean, sample variance and raw values of one metric across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: f64,
    pub variance: f64,
    pub trials: Vec<f64>,
}

/// Arithmetic mean and unbiased (n-1) variance; a single value has variance 0.
pub fn aggregate(values: &[f64]) -> Result<MetricAggregate> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = if values.len() == 1 {
        0.0
    } else {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    Ok(MetricAggregate {
        mean,
        variance,
        trials: values.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const POS: Label = Label::Positive;
    const NEG: Label = Label::Negative;

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[POS, NEG], &[POS, NEG]).unwrap(), ConfusionMatrix::new(1, 0, 0, 1));
        assert_eq!(confusion(&[POS; 4], &[NEG; 4]).unwrap(), ConfusionMatrix::new(0, 4, 0, 0));
        assert!(matches!(confusion(&[POS], &[POS, NEG]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(confusion(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn tss_examples() {
        assert_eq!(tss(&ConfusionMatrix::new(10, 0, 0, 10)).unwrap(), 1.0);
        assert_eq!(tss(&ConfusionMatrix::new(8, 1, 2, 9)).unwrap(), 0.7);
        assert_eq!(tss(&ConfusionMatrix::new(0, 0, 5, 5)).unwrap(), 0.0);
        assert!(tss(&ConfusionMatrix::new(0, 3, 0, 2)).is_err());
        assert!(tss(&ConfusionMatrix::new(3, 0, 2, 0)).is_err());
    }

    #[test]
    fn hss2_examples() {
        assert_eq!(hss2(&ConfusionMatrix::new(10, 0, 0, 10)).unwrap(), 1.0);
        assert_eq!(hss2(&ConfusionMatrix::new(8, 1, 2, 9)).unwrap(), 0.7);
        assert_eq!(hss2(&ConfusionMatrix::new(5, 5, 5, 5)).unwrap(), 0.0);
        assert!(hss2(&ConfusionMatrix::new(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.7; 10]).unwrap();
        assert!((a.mean - 0.7).abs() < 1e-15);
        assert!(a.variance.abs() < 1e-30);
        let b = aggregate(&[0.0, 1.0]).unwrap();
        assert_eq!((b.mean, b.variance), (0.5, 0.5));
        let c = aggregate(&[0.42]).unwrap();
        assert_eq!((c.mean, c.variance), (0.42, 0.0));
        assert!(aggregate(&[]).is_err());
    }

    fn cm_strategy() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..200, 0u64..200, 0u64..200, 0u64..200)
            .prop_filter("both classes", |&(tp, fp, fn_, tn)| tp + fn_ > 0 && fp + tn > 0)
            .prop_map(|(tp, fp, fn_, tn)| ConfusionMatrix::new(tp, fp, fn_, tn))
    }

    proptest! {
        #[test]
        fn confusion_partitions_cases(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
            let to = |b: bool| if b { POS } else { NEG };
            let preds: Vec<_> = pairs.iter().map(|p| to(p.0)).collect();
            let truths: Vec<_> = pairs.iter().map(|p| to(p.1)).collect();
            prop_assert_eq!(confusion(&preds, &truths).unwrap().total(), pairs.len() as u64);
        }

        #[test]
        fn scores_in_range_and_scale_invariant(cm in cm_strategy(), k in 1u64..50) {
            let s = SkillScores::from_confusion(&cm).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s.tss));
            prop_assert!((-1.0..=1.0).contains(&s.hss2));
            let t = SkillScores::from_confusion(&cm.scaled(k)).unwrap();
            prop_assert!((s.tss - t.tss).abs() < 1e-12);
            prop_assert!((s.hss2 - t.hss2).abs() < 1e-12);
        }

        #[test]
        fn inverting_predictions_negates_tss(cm in cm_strategy()) {
            let inverted = ConfusionMatrix::new(cm.fn_, cm.tn, cm.tp, cm.fp);
            prop_assert_eq!(tss(&inverted).unwrap(), -tss(&cm).unwrap());
        }

        #[test]
        fn perfect_iff_no_errors(cm in cm_strategy()) {
            let perfect = cm.fp == 0 && cm.fn_ == 0;
            prop_assert_eq!(tss(&cm).unwrap() == 1.0, perfect);
            prop_assert_eq!(hss2(&cm).unwrap() == 1.0, perfect);
        }

        #[test]
        fn aggregate_mean_within_range(vals in prop::collection::vec(-1.0f64..1.0, 1..20)) {
            let a = aggregate(&vals).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a.variance >= 0.0);
            prop_assert!(a.mean >= lo - 1e-12 && a.mean <= hi + 1e-12);
        }
    }
}

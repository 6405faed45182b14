//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve; tied positive/negative pairs count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// A decision threshold and its rates; positives are scores >= threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl OperatingPoint {
    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.sensitivity + self.specificity)
    }

    pub fn youden_j(&self) -> f64 {
        self.sensitivity + self.specificity - 1.0
    }
}

/// Every distinct threshold in increasing order, followed by +inf.
fn sweep(scores: &[f64], labels: &[u8], pos: usize, neg: usize) -> Vec<OperatingPoint> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut out = Vec::new();
    // Counts of rows strictly below the current threshold.
    let (mut fn_, mut tn) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        out.push(OperatingPoint {
            threshold: t,
            sensitivity: (pos - fn_) as f64 / pos as f64,
            specificity: tn as f64 / neg as f64,
        });
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] == 1 {
                fn_ += 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
    }
    out.push(OperatingPoint {
        threshold: f64::INFINITY,
        sensitivity: 0.0,
        specificity: 1.0,
    });
    out
}

/// Threshold maximizing Youden's J; ties go to the lowest threshold.
pub fn youden_operating_point(scores: &[f64], labels: &[u8]) -> Result<OperatingPoint> {
    let (pos, neg) = check(scores, labels)?;
    let mut best: Option<OperatingPoint> = None;
    for op in sweep(scores, labels, pos, neg) {
        if best.is_none_or(|b| op.youden_j() > b.youden_j()) {
            best = Some(op);
        }
    }
    Ok(best.expect("sweep is never empty"))
}

/// Sensitivity at the smallest threshold whose specificity reaches `target`.
pub fn sens_at_spec(scores: &[f64], labels: &[u8], target: f64) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let op = sweep(scores, labels, pos, neg)
        .into_iter()
        .find(|op| op.specificity >= target)
        .expect("the +inf threshold has specificity 1");
    Ok(op.sensitivity)
}

/// Rates at a fixed cut, predicting positive when score > `cut`.
pub fn rates_above(scores: &[f64], labels: &[u8], cut: f64) -> Result<OperatingPoint> {
    let (pos, neg) = check(scores, labels)?;
    let tp = scores.iter().zip(labels).filter(|&(&s, &l)| l == 1 && s > cut).count();
    let tn = scores.iter().zip(labels).filter(|&(&s, &l)| l == 0 && s <= cut).count();
    Ok(OperatingPoint {
        threshold: cut,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
    })
}

/// Balanced accuracy of hard predictions at probability 0.5.
pub fn balanced_accuracy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    rates_above(probs, labels, 0.5).map(|op| op.balanced_accuracy())
}

/// The metrics reported for every model and split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auroc: f64,
    pub balanced_accuracy: f64,
    pub sens_youden: f64,
    pub spec_youden: f64,
    pub sens_at_80_spec: f64,
    pub sens_at_90_spec: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 6] = [
        "auroc",
        "balanced_accuracy",
        "sens_youden",
        "spec_youden",
        "sens_at_80_spec",
        "sens_at_90_spec",
    ];

    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let y = youden_operating_point(scores, labels)?;
        Ok(Self {
            auroc: auroc(scores, labels)?,
            balanced_accuracy: y.balanced_accuracy(),
            sens_youden: y.sensitivity,
            spec_youden: y.specificity,
            sens_at_80_spec: sens_at_spec(scores, labels, 0.8)?,
            sens_at_90_spec: sens_at_spec(scores, labels, 0.9)?,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.auroc,
            self.balanced_accuracy,
            self.sens_youden,
            self.spec_youden,
            self.sens_at_80_spec,
            self.sens_at_90_spec,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auroc(s: &[f64], l: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] == 1 && l[j] == 0 {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
        let mut r = rng::stream(1, "auroc", 0);
        let s: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
        let l: Vec<u8> = (0..10_000).map(|_| r.random_range(0..2)).collect();
        assert_abs_diff_eq!(auroc(&s, &l).unwrap(), 0.5, epsilon = 0.02);
    }

    #[test]
    fn youden_examples() {
        let op = youden_operating_point(&[0.75, 0.75, 0.25, 0.25], &[1, 1, 0, 0]).unwrap();
        assert_eq!((op.sensitivity, op.specificity), (1.0, 1.0));
        assert!(op.threshold > 0.25 && op.threshold <= 0.75);
        let anti = youden_operating_point(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap();
        assert!(anti.balanced_accuracy() >= 0.5);
        // J ties between 0.4 and +inf-like cuts resolve to the lowest threshold.
        let tie = youden_operating_point(&[0.4, 0.4], &[1, 0]).unwrap();
        assert_eq!(tie.threshold, 0.4);
    }

    #[test]
    fn sens_at_spec_examples() {
        assert_eq!(sens_at_spec(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.9).unwrap(), 1.0);
        assert_eq!(sens_at_spec(&[0.5; 6], &[0, 0, 0, 1, 1, 1], 0.8).unwrap(), 0.0);
        let mut r = rng::stream(2, "sas", 0);
        let s: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
        let l: Vec<u8> = (0..10_000).map(|i| (i % 2) as u8).collect();
        for t in [0.8, 0.9] {
            assert_abs_diff_eq!(sens_at_spec(&s, &l, t).unwrap(), 1.0 - t, epsilon = 0.03);
        }
    }

    #[test]
    fn balanced_accuracy_at_half() {
        assert_eq!(balanced_accuracy(&[0.2, 0.7, 0.6, 0.1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&[0.2, 0.7], &[0, 1]).unwrap(), 1.0);
    }

    fn dataset() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..=20).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_counting((s, l) in dataset()) {
            prop_assert!((auroc(&s, &l).unwrap() - brute_auroc(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn auroc_is_invariant_to_monotone_maps((s, l) in dataset()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
        }

        #[test]
        fn youden_matches_exhaustive_thresholds((s, l) in dataset()) {
            let op = youden_operating_point(&s, &l).unwrap();
            let mut cuts: Vec<f64> = s.clone();
            cuts.push(f64::INFINITY);
            let mut best = f64::NEG_INFINITY;
            for &c in &cuts {
                let p = l.iter().filter(|&&v| v == 1).count() as f64;
                let n = l.len() as f64 - p;
                let tp = s.iter().zip(&l).filter(|&(&x, &y)| y == 1 && x >= c).count() as f64;
                let tn = s.iter().zip(&l).filter(|&(&x, &y)| y == 0 && x < c).count() as f64;
                best = best.max(tp / p + tn / n - 1.0);
            }
            prop_assert!((op.youden_j() - best).abs() < 1e-12);
            prop_assert!((op.balanced_accuracy() - 0.5 * (op.sensitivity + op.specificity)).abs() < 1e-15);
        }
    }
}

//! Vote-based prediction confidence and its calibration.

use serde::{Deserialize, Serialize};

use super::pooling::welch_test;
use crate::error::{Error, Result};

/// Class votes of the posterior draws for one subject.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub class0: usize,
    pub class1: usize,
}

impl Votes {
    pub fn new(class0: usize, class1: usize) -> Self {
        Self { class0, class1 }
    }

    /// Counts draws on each side of the 0.5 boundary; exactly 0.5 votes 0.
    pub fn from_probs(probs: impl IntoIterator<Item = f64>) -> Self {
        let mut v = Self::default();
        for p in probs {
            if p > 0.5 {
                v.class1 += 1;
            } else {
                v.class0 += 1;
            }
        }
        v
    }

    pub fn total(&self) -> usize {
        self.class0 + self.class1
    }
}

/// Majority class and its vote fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub class: u8,
    pub confidence: f64,
    /// Equal votes; the class defaults to 0.
    pub tie: bool,
}

pub fn prediction_confidence(votes: Votes) -> Result<Confidence> {
    let s = votes.total();
    if s == 0 {
        return Err(Error::Argument("no draws to vote".into()));
    }
    let (class, top) = if votes.class1 > votes.class0 {
        (1, votes.class1)
    } else {
        (0, votes.class0)
    };
    Ok(Confidence {
        class,
        confidence: top as f64 / s as f64,
        tie: votes.class0 == votes.class1,
    })
}

/// Sums one subject's votes over folds and applies the vote rule.
pub fn pool_unseen_confidence(per_fold: &[Votes]) -> Result<Confidence> {
    let first = per_fold
        .first()
        .ok_or_else(|| Error::Argument("no folds to pool".into()))?;
    if per_fold.iter().any(|v| v.total() != first.total()) {
        return Err(Error::Argument("folds have different draw counts".into()));
    }
    let sum = per_fold.iter().fold(Votes::default(), |acc, v| Votes {
        class0: acc.class0 + v.class0,
        class1: acc.class1 + v.class1,
    });
    prediction_confidence(sum)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    SeenTest,
    UnseenTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::SeenTest, Split::UnseenTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::SeenTest => "seen-test",
            Split::UnseenTest => "unseen-test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub subject: usize,
    pub predicted: u8,
    pub confidence: f64,
    pub correct: bool,
    pub tie: bool,
    pub split: Split,
}

impl ConfidenceRecord {
    pub fn new(subject: usize, c: Confidence, label: u8, split: Split) -> Self {
        Self {
            subject,
            predicted: c.class,
            confidence: c.confidence,
            correct: c.class == label,
            tie: c.tie,
            split,
        }
    }
}

/// Confidence of correct against incorrect predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub mean_correct: Option<f64>,
    pub mean_incorrect: Option<f64>,
    /// mean_correct - mean_incorrect.
    pub difference: Option<f64>,
    /// Welch two-sided p; `None` when either group is too small.
    pub p: Option<f64>,
    pub mean_confidence: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn calibration_compare(records: &[ConfidenceRecord]) -> Result<CalibrationSummary> {
    let correct: Vec<f64> = records.iter().filter(|r| r.correct).map(|r| r.confidence).collect();
    let incorrect: Vec<f64> = records.iter().filter(|r| !r.correct).map(|r| r.confidence).collect();
    let all: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    let (mc, mi) = (mean(&correct), mean(&incorrect));
    let test = welch_test(&correct, &incorrect)?;
    Ok(CalibrationSummary {
        n_correct: correct.len(),
        n_incorrect: incorrect.len(),
        mean_correct: mc,
        mean_incorrect: mi,
        difference: mc.zip(mi).map(|(a, b)| a - b),
        p: test.map(|(_, p)| p),
        mean_confidence: mean(&all),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn vote_examples() {
        let c = prediction_confidence(Votes::new(3, 27)).unwrap();
        assert_eq!((c.class, c.confidence, c.tie), (1, 0.9, false));
        let c = prediction_confidence(Votes::new(30, 0)).unwrap();
        assert_eq!((c.class, c.confidence), (0, 1.0));
        let c = prediction_confidence(Votes::new(15, 15)).unwrap();
        assert_eq!((c.class, c.confidence, c.tie), (0, 0.5, true));
        assert!(prediction_confidence(Votes::default()).is_err());
    }

    #[test]
    fn pooling_examples() {
        let c = pool_unseen_confidence(&[Votes::new(3, 27); 10]).unwrap();
        assert_eq!((c.class, c.confidence), (1, 0.9));
        let mut split = vec![Votes::new(30, 0); 5];
        split.extend(vec![Votes::new(0, 30); 5]);
        let c = pool_unseen_confidence(&split).unwrap();
        assert_eq!((c.confidence, c.tie), (0.5, true));
        let mut one = vec![Votes::new(29, 1)];
        one.extend(vec![Votes::new(0, 30); 9]);
        let c = pool_unseen_confidence(&one).unwrap();
        assert_eq!(c.class, 1);
        assert_eq!(c.confidence, 271.0 / 300.0);
        assert!(pool_unseen_confidence(&[Votes::new(1, 2), Votes::new(1, 1)]).is_err());
    }

    #[test]
    fn votes_from_probabilities() {
        assert_eq!(Votes::from_probs([0.2, 0.5, 0.51, 0.9]), Votes::new(2, 2));
    }

    fn records(conf: &[(f64, bool)]) -> Vec<ConfidenceRecord> {
        conf.iter()
            .enumerate()
            .map(|(i, &(c, ok))| ConfidenceRecord {
                subject: i,
                predicted: 1,
                confidence: c,
                correct: ok,
                tie: false,
                split: Split::SeenTest,
            })
            .collect()
    }

    #[test]
    fn separated_groups_are_significant() {
        let mut r = rng::stream(1, "calib", 0);
        let mut v = Vec::new();
        for _ in 0..50 {
            v.push((0.95 + r.random_range(-1e-3..1e-3), true));
            v.push((0.55 + r.random_range(-1e-3..1e-3), false));
        }
        let s = calibration_compare(&records(&v)).unwrap();
        assert_abs_diff_eq!(s.difference.unwrap(), 0.40, epsilon = 1e-3);
        assert!(s.p.unwrap() < 1e-10);
        let swapped: Vec<_> = v.iter().map(|&(c, ok)| (c, !ok)).collect();
        let t = calibration_compare(&records(&swapped)).unwrap();
        assert_abs_diff_eq!(t.difference.unwrap(), -s.difference.unwrap(), epsilon = 1e-15);
        assert_eq!(t.p, s.p);
    }

    #[test]
    fn empty_group_is_not_applicable() {
        let s = calibration_compare(&records(&[(0.9, true), (0.8, true)])).unwrap();
        assert_eq!(s.p, None);
        assert_eq!(s.difference, None);
        assert_abs_diff_eq!(s.mean_correct.unwrap(), 0.85, epsilon = 1e-15);
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("confusion matrix is empty")]
    Empty,
    #[error("label {0:?} is not in the matrix")]
    UnknownLabel(String),
}

/// Gold-by-predicted tallies over a fixed, ordered label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// `counts[gold][pred]`
    counts: Vec<Vec<u64>>,
    parse_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels: labels.iter().map(|l| l.as_ref().to_string()).collect(),
            counts: vec![vec![0; n]; n],
            parse_failures: 0,
        }
    }

    pub fn from_counts<S: AsRef<str>>(labels: &[S], counts: Vec<Vec<u64>>) -> Self {
        assert!(counts.len() == labels.len() && counts.iter().all(|r| r.len() == labels.len()));
        let mut cm = ConfusionMatrix::new(labels);
        cm.counts = counts;
        cm
    }

    pub fn from_pairs<S: AsRef<str>>(
        labels: &[S],
        gold: &[&str],
        pred: &[&str],
    ) -> Result<Self, MetricError> {
        let mut cm = ConfusionMatrix::new(labels);
        for (g, p) in gold.iter().zip(pred) {
            cm.record(g, p)?;
        }
        Ok(cm)
    }

    fn index(&self, label: &str) -> Result<usize, MetricError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| MetricError::UnknownLabel(label.into()))
    }

    pub fn record(&mut self, gold: &str, pred: &str) -> Result<(), MetricError> {
        let (g, p) = (self.index(gold)?, self.index(pred)?);
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn record_parse_failure(&mut self) {
        self.parse_failures += 1;
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn parse_failures(&self) -> u64 {
        self.parse_failures
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn predicted(&self, i: usize) -> u64 {
        self.counts.iter().map(|r| r[i]).sum()
    }

    pub fn accuracy(&self) -> Result<f64, MetricError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricError::Empty);
        }
        let trace: u64 = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        Ok(trace as f64 / total as f64)
    }

    /// Per-class precision, recall and F1 in label order. Undefined ratios
    /// are taken as 0.
    pub fn per_class(&self) -> Vec<ClassStats> {
        (0..self.labels.len())
            .map(|i| {
                let tp = self.counts[i][i];
                let precision = ratio(tp, self.predicted(i));
                let recall = ratio(tp, self.support(i));
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassStats {
                    label: self.labels[i].clone(),
                    precision,
                    recall,
                    f1,
                    support: self.support(i),
                }
            })
            .collect()
    }

    /// Mean per-class F1 over classes occurring in gold or predictions.
    pub fn macro_f1(&self) -> Result<f64, MetricError> {
        let present: Vec<f64> = self
            .per_class()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| self.support(*i) + self.predicted(*i) > 0)
            .map(|(_, c)| c.f1)
            .collect();
        if present.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Per-class F1 weighted by gold support.
    pub fn weighted_f1(&self) -> Result<f64, MetricError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricError::Empty);
        }
        Ok(self
            .per_class()
            .iter()
            .map(|c| c.support as f64 / total as f64 * c.f1)
            .sum())
    }

    /// Equal to accuracy for single-label classification.
    pub fn micro_f1(&self) -> Result<f64, MetricError> {
        self.accuracy()
    }

    pub fn metrics(&self) -> Result<Metrics, MetricError> {
        Ok(Metrics {
            acc: self.accuracy()?,
            m_f1: self.macro_f1()?,
            w_f1: self.weighted_f1()?,
            micro_f1: self.micro_f1()?,
        })
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricError> {
        if other.labels != self.labels {
            return Err(MetricError::UnknownLabel(other.labels.join(",")));
        }
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, v) in r.iter_mut().zip(o) {
                *c += v;
            }
        }
        self.parse_failures += other.parse_failures;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub m_f1: f64,
    pub w_f1: f64,
    pub micro_f1: f64,
}

impl Metrics {
    pub fn mean(runs: &[Metrics]) -> Option<Metrics> {
        if runs.is_empty() {
            return None;
        }
        let n = runs.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Some(Metrics {
            acc: avg(|m| m.acc),
            m_f1: avg(|m| m.m_f1),
            w_f1: avg(|m| m.w_f1),
            micro_f1: avg(|m| m.micro_f1),
        })
    }
}

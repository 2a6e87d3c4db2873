use serde::{Deserialize, Serialize};

use super::{NumericsError, Result};

/// Probability clip applied before taking logs.
pub const NE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    RelativeL2,
    MaxAbs,
    Cosine,
}

/// Distance between a reference tensor and a candidate, accumulated in f64.
pub fn layer_error(reference: &[f32], candidate: &[f32], metric: ErrorMetric) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(NumericsError::Shape(format!(
            "reference has {} elements, candidate {}",
            reference.len(),
            candidate.len()
        )));
    }
    let pairs = reference.iter().zip(candidate).map(|(&r, &c)| (f64::from(r), f64::from(c)));
    Ok(match metric {
        ErrorMetric::RelativeL2 => {
            let (mut diff, mut norm) = (0.0, 0.0);
            for (r, c) in pairs {
                diff += (r - c) * (r - c);
                norm += r * r;
            }
            match (norm > 0.0, diff > 0.0) {
                (true, _) => (diff / norm).sqrt(),
                (false, false) => 0.0,
                (false, true) => f64::INFINITY,
            }
        }
        ErrorMetric::MaxAbs => pairs.map(|(r, c)| (r - c).abs()).fold(0.0, f64::max),
        ErrorMetric::Cosine => {
            let (mut dot, mut rr, mut cc) = (0.0, 0.0, 0.0);
            for (r, c) in pairs {
                dot += r * c;
                rr += r * r;
                cc += c * c;
            }
            match (rr > 0.0, cc > 0.0) {
                (true, true) => dot / (rr.sqrt() * cc.sqrt()),
                (false, false) => 1.0,
                _ => 0.0,
            }
        }
    })
}

fn mean_log_loss(preds: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(NE_EPSILON, 1.0 - NE_EPSILON);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / preds.len() as f64
}

/// Normalized cross entropy: the predictions' mean log loss divided by that
/// of a constant predictor at the empirical positive rate. Both losses go
/// through the same code, so a base-rate predictor scores exactly 1.
pub fn ne_metric(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(NumericsError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(&p) = predictions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(NumericsError::Probability(p));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(NumericsError::Label(y));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(NumericsError::DegenerateLabels);
    }
    let rate = positives as f64 / labels.len() as f64;
    let base = vec![rate; labels.len()];
    Ok(mean_log_loss(predictions, labels) / mean_log_loss(&base, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMetric {
    NeDegradation,
    CosineSimilarity,
    Top1Drop,
    BleuDrop,
}

impl BudgetMetric {
    pub fn name(self) -> &'static str {
        match self {
            BudgetMetric::NeDegradation => "ne_degradation",
            BudgetMetric::CosineSimilarity => "cosine_similarity",
            BudgetMetric::Top1Drop => "top1_drop",
            BudgetMetric::BleuDrop => "bleu_drop",
        }
    }

    /// True when larger metric values are better.
    pub fn higher_is_better(self) -> bool {
        self == BudgetMetric::CosineSimilarity
    }

    pub fn default_threshold(self) -> f64 {
        match self {
            BudgetMetric::NeDegradation => 0.0005,
            BudgetMetric::CosineSimilarity => 0.98,
            BudgetMetric::Top1Drop => 0.01,
            BudgetMetric::BleuDrop => 0.001,
        }
    }
}

/// An accuracy constraint a precision assignment must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBudget {
    pub metric: BudgetMetric,
    pub threshold: f64,
}

impl AccuracyBudget {
    pub fn new(metric: BudgetMetric, threshold: f64) -> Result<Self> {
        // every metric is a fraction; 1.0 is the loosest meaningful value
        if !(0.0..=1.0).contains(&threshold) {
            return Err(NumericsError::Budget {
                metric: metric.name(),
                threshold,
            });
        }
        Ok(Self { metric, threshold })
    }

    pub fn default_for(metric: BudgetMetric) -> Self {
        Self {
            metric,
            threshold: metric.default_threshold(),
        }
    }

    pub fn is_met(&self, value: f64) -> bool {
        if self.metric.higher_is_better() {
            value >= self.threshold
        } else {
            value <= self.threshold
        }
    }
}

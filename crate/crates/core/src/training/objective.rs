use std::fmt;
use std::str::FromStr;

use super::dataset::Targets;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax over the logits, then cross-entropy against one-hot targets.
    CategoricalCe,
    /// Cross-entropy on logits via log-softmax.
    SparseCe,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    Mae,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CategoricalCe => "categorical_ce",
            LossKind::SparseCe => "sparse_ce",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical_ce" => Ok(LossKind::CategoricalCe),
            "sparse_ce" => Ok(LossKind::SparseCe),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Config(format!(
                "unknown loss {s:?} (expected categorical_ce, sparse_ce or mse)"
            ))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mae => "mae",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "mae" => Ok(MetricKind::Mae),
            _ => Err(Error::Config(format!("unknown metric {s:?} (expected accuracy or mae)"))),
        }
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} element {i} is {}", t.data()[i])));
    }
    Ok(())
}

/// Batch-mean loss of model outputs `[B, V]` or `[B, D]`.
pub fn loss(outputs: &Tensor, targets: &Targets, kind: LossKind) -> Result<Tensor> {
    check_finite(outputs, "model output")?;
    match (kind, targets) {
        (LossKind::SparseCe, Targets::Ids(ids)) => outputs.sparse_ce(ids),
        (LossKind::CategoricalCe, Targets::Ids(ids)) => {
            let v = outputs.last_dim();
            let mut onehot = vec![0.0; ids.len() * v];
            for (b, &t) in ids.iter().enumerate() {
                if t >= v {
                    return Err(Error::Index(format!("target {t} outside {v} classes")));
                }
                onehot[b * v + t] = 1.0;
            }
            outputs.softmax_rows()?.categorical_ce(&Tensor::new(&[ids.len(), v], onehot)?)
        }
        (LossKind::Mse, Targets::Frames(t)) => {
            check_finite(t, "target")?;
            outputs.mse(t)
        }
        (kind, _) => Err(Error::Config(format!("loss {kind} does not fit these targets"))),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `scores` whose argmax equals the target.
pub fn accuracy(scores: &Tensor, targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Contract("accuracy of an empty batch".into()));
    }
    let v = scores.last_dim();
    if scores.numel() != targets.len() * v {
        return Err(Error::Dimension(format!(
            "{} targets for scores of shape {:?}",
            targets.len(),
            scores.shape()
        )));
    }
    let hits = scores
        .data()
        .chunks(v)
        .zip(targets)
        .filter(|(row, &t)| argmax(row) == t)
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Contract("MAE of an empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!("MAE of {} vs {} values", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn metric(outputs: &Tensor, targets: &Targets, kind: MetricKind) -> Result<f64> {
    match (kind, targets) {
        (MetricKind::Accuracy, Targets::Ids(ids)) => accuracy(outputs, ids),
        (MetricKind::Mae, Targets::Frames(t)) => mae(outputs.data(), t.data()),
        (kind, _) => Err(Error::Config(format!("metric {kind} does not fit these targets"))),
    }
}

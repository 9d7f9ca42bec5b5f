use super::adam::AdamConfig;
use super::objective::{LossKind, MetricKind};
use crate::codec::KeyValues;
use crate::error::{Error, Result};
use crate::models::ModelKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossKind,
    pub metric: MetricKind,
    pub shuffle: bool,
    /// Fraction of windows held out for evaluation; 0 trains on everything.
    pub holdout: f64,
}

impl TrainConfig {
    /// Loss, metric and epoch count of the kind's reference run, batch 64.
    pub fn defaults(kind: ModelKind) -> Self {
        let (loss, metric) = match kind {
            ModelKind::PianoTransformer => (LossKind::SparseCe, MetricKind::Accuracy),
            ModelKind::TablaBiLstm | ModelKind::TablaTransformer => (LossKind::Mse, MetricKind::Mae),
            _ => (LossKind::CategoricalCe, MetricKind::Accuracy),
        };
        let epochs = reference_runs()
            .iter()
            .rev()
            .find(|r| r.kind == kind)
            .map_or(40, |r| r.epochs);
        Self {
            epochs,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            loss,
            metric,
            shuffle: true,
            holdout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", a.learning_rate)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config(format!("holdout {} outside [0, 1)", self.holdout)));
        }
        Ok(())
    }

    pub fn write_keys(&self, kv: &mut KeyValues) {
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.adam.learning_rate);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("seed", self.seed);
        kv.set("loss", self.loss);
        kv.set("metric", self.metric);
        kv.set("shuffle", self.shuffle);
        kv.set("holdout", self.holdout);
    }

    /// Absent keys take the defaults of `kind`.
    pub fn from_keys(kv: &KeyValues, kind: ModelKind) -> Result<Self> {
        let d = Self::defaults(kind);
        let cfg = Self {
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            adam: AdamConfig {
                learning_rate: kv.get_or("learning_rate", d.adam.learning_rate)?,
                beta1: kv.get_or("beta1", d.adam.beta1)?,
                beta2: kv.get_or("beta2", d.adam.beta2)?,
                eps: kv.get_or("adam_eps", d.adam.eps)?,
            },
            seed: kv.get_or("seed", d.seed)?,
            loss: kv.get("loss").map_or(Ok(d.loss), str::parse)?,
            metric: kv.get("metric").map_or(Ok(d.metric), str::parse)?,
            shuffle: kv.get_or("shuffle", d.shuffle)?,
            holdout: kv.get_or("holdout", d.holdout)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One reported training run, kept as documentation of the full-scale
/// results. Not a test target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRun {
    pub label: &'static str,
    pub kind: ModelKind,
    pub epochs: usize,
    pub final_loss: f64,
    /// Accuracy for piano models, MAE for tabla models.
    pub final_metric: f64,
}

pub fn reference_runs() -> [ReferenceRun; 10] {
    let row = |label, kind, epochs, final_loss, final_metric| ReferenceRun { label, kind, epochs, final_loss, final_metric };
    [
        row("Single LSTM", ModelKind::Lstm, 40, 1.9621, 0.5148),
        row("LSTM + Attention", ModelKind::LstmAttn, 40, 1.7975, 0.4947),
        row("LSTM + Attention + LSTM", ModelKind::LstmAttnLstm, 40, 1.9526, 0.4953),
        row("3 x (LSTM + Attention)", ModelKind::LstmAttnX3, 40, 2.3159, 0.3768),
        row("Bi-LSTM + Attention + LSTM (subset)", ModelKind::BiLstmAttnLstm, 40, 1.2032, 0.6665),
        row("3 x (Bi-LSTM + Attention)", ModelKind::BiLstmAttnX3, 40, 2.1492, 0.4148),
        row("Bi-LSTM + Attention + LSTM (full)", ModelKind::BiLstmAttnLstm, 200, 0.6226, 0.8624),
        row("Transformer (piano)", ModelKind::PianoTransformer, 600, 0.0920, 0.9886),
        row("Modified Bi-LSTM + Attention + LSTM (tabla)", ModelKind::TablaBiLstm, 300, 4.0427, 1.0814),
        row("Transformer (tabla)", ModelKind::TablaTransformer, 180, 55.9278, 3.5173),
    ]
}

use std::fmt::Write as _;
use std::path::Path;

use super::adam::Adam;
use super::config::TrainConfig;
use super::dataset::WindowDataset;
use super::objective::{loss, metric};
use crate::error::{write_file, Error, Result};
use crate::models::Model;
use crate::rng::SeededRng;

/// Stream for dropout masks, kept apart from initialisation and shuffling.
const DROPOUT_STREAM: u64 = 0x6472_6f70;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Window-weighted mean of the batch losses.
    pub loss: f64,
    pub metric: f64,
    /// Inference-mode loss and metric on the holdout split, if any.
    pub holdout: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,loss,metric` with six decimals; holdout columns are appended
    /// only when a holdout split was used.
    pub fn to_csv(&self) -> String {
        let holdout = self.epochs.iter().any(|r| r.holdout.is_some());
        let mut out = String::from("epoch,loss,metric");
        if holdout {
            out.push_str(",holdout_loss,holdout_metric");
        }
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{},{:.6},{:.6}", r.epoch, r.loss, r.metric);
            if let Some((l, m)) = r.holdout {
                let _ = write!(out, ",{l:.6},{m:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }
}

/// Inference-mode loss and metric over a whole dataset.
pub fn evaluate(model: &Model, data: &WindowDataset, cfg: &TrainConfig) -> Result<(f64, f64)> {
    check_compatible(model, data)?;
    let mut rng = SeededRng::new(0);
    let (mut l_sum, mut m_sum) = (0.0, 0.0);
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(cfg.batch_size) {
        let batch = data.batch(chunk)?;
        let out = model.forward(&batch.input, false, &mut rng)?;
        l_sum += loss(&out, &batch.targets, cfg.loss)?.item()? * chunk.len() as f64;
        m_sum += metric(&out, &batch.targets, cfg.metric)? * chunk.len() as f64;
    }
    let n = data.len() as f64;
    Ok((l_sum / n, m_sum / n))
}

fn check_compatible(model: &Model, data: &WindowDataset) -> Result<()> {
    let spec = &model.spec;
    if data.is_empty() {
        return Err(Error::Data("the dataset has no windows".into()));
    }
    if spec.kind.is_symbolic() != data.is_symbolic() {
        return Err(Error::Spec(format!("{} cannot train on this corpus type", spec.kind)));
    }
    if data.seq_len() != spec.seq_len {
        return Err(Error::Spec(format!(
            "dataset windows of {} but the model expects {}",
            data.seq_len(),
            spec.seq_len
        )));
    }
    if data.is_symbolic() && data.id_bound() > spec.vocab_size {
        return Err(Error::Spec(format!(
            "corpus ids reach {} but the vocabulary has {}",
            data.id_bound() - 1,
            spec.vocab_size
        )));
    }
    if !data.is_symbolic() && data.feature_dim() != spec.feature_dim {
        return Err(Error::Spec(format!(
            "corpus frames have {} features but the model expects {}",
            data.feature_dim(),
            spec.feature_dim
        )));
    }
    Ok(())
}

/// Trains `model` in place. Each epoch shuffles the windows with
/// `seed + epoch`, then runs forward, loss, backward and one Adam step per
/// batch. `on_epoch` sees every record as it is produced.
pub fn fit(
    model: &mut Model,
    data: &WindowDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    check_compatible(model, data)?;
    let (train, held) = if cfg.holdout > 0.0 {
        let (t, h) = data.split_holdout(cfg.holdout, &mut SeededRng::new(cfg.seed))?;
        (t, Some(h))
    } else {
        (data.clone(), None)
    };

    let mut opt = Adam::new(cfg.adam);
    let mut dropout_rng = SeededRng::new(cfg.seed ^ DROPOUT_STREAM);
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            SeededRng::new(cfg.seed.wrapping_add(epoch as u64)).shuffle(&mut order);
        }
        let (mut l_sum, mut m_sum) = (0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.batch(chunk)?;
            let abort = |value: f64| Error::NumericAbort { epoch, batch: b + 1, loss: value };
            let step = model
                .forward(&batch.input, true, &mut dropout_rng)
                .and_then(|out| Ok((loss(&out, &batch.targets, cfg.loss)?, out)));
            let (l, out) = match step {
                Ok(v) => v,
                Err(Error::Numeric(_)) => return Err(abort(f64::NAN)),
                Err(e) => return Err(e),
            };
            let value = l.item()?;
            if !value.is_finite() {
                return Err(abort(value));
            }
            l_sum += value * chunk.len() as f64;
            m_sum += metric(&out, &batch.targets, cfg.metric)? * chunk.len() as f64;
            l.backward()?;
            opt.step(&mut model.params)?;
        }
        let n = train.len() as f64;
        let holdout = held.as_ref().map(|h| evaluate(model, h, cfg)).transpose()?;
        let record = EpochRecord { epoch, loss: l_sum / n, metric: m_sum / n, holdout };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}

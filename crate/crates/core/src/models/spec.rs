use std::fmt;
use std::str::FromStr;

use crate::codec::KeyValues;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lstm,
    LstmAttn,
    LstmAttnLstm,
    LstmAttnX3,
    BiLstmAttnLstm,
    BiLstmAttnX3,
    PianoTransformer,
    TablaBiLstm,
    TablaTransformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    /// Logits over the token vocabulary.
    SoftmaxVocab,
    /// One real vector of `feature_dim` values (a mel frame).
    Linear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Lstm,
        ModelKind::LstmAttn,
        ModelKind::LstmAttnLstm,
        ModelKind::LstmAttnX3,
        ModelKind::BiLstmAttnLstm,
        ModelKind::BiLstmAttnX3,
        ModelKind::PianoTransformer,
        ModelKind::TablaBiLstm,
        ModelKind::TablaTransformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::LstmAttn => "lstm_attn",
            ModelKind::LstmAttnLstm => "lstm_attn_lstm",
            ModelKind::LstmAttnX3 => "lstm_attn_x3",
            ModelKind::BiLstmAttnLstm => "bilstm_attn_lstm",
            ModelKind::BiLstmAttnX3 => "bilstm_attn_x3",
            ModelKind::PianoTransformer => "piano_transformer",
            ModelKind::TablaBiLstm => "tabla_bilstm",
            ModelKind::TablaTransformer => "tabla_transformer",
        }
    }

    pub fn is_symbolic(self) -> bool {
        !matches!(self, ModelKind::TablaBiLstm | ModelKind::TablaTransformer)
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, ModelKind::PianoTransformer | ModelKind::TablaTransformer)
    }

    pub fn output_kind(self) -> OutputKind {
        if self.is_symbolic() {
            OutputKind::SoftmaxVocab
        } else {
            OutputKind::Linear
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::Spec(format!("unknown model kind {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

/// Architecture hyperparameters.
///
/// For the piano transformer `embed_dim` is the model width and `hidden` the
/// feed-forward width. For the tabla transformer `hidden` is the model width.
/// For recurrent models `hidden` is the per-direction LSTM width.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub seq_len: usize,
    /// Symbolic models only; fixed by the corpus vocabulary.
    pub vocab_size: usize,
    /// Audio models only.
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub batch_size: usize,
}

impl ModelSpec {
    pub fn defaults(kind: ModelKind) -> Self {
        let base = ModelSpec {
            kind,
            seq_len: 100,
            vocab_size: 0,
            feature_dim: 128,
            embed_dim: 64,
            hidden: 256,
            n_layers: 1,
            n_heads: 0,
            dropout: 0.3,
            batch_size: 64,
        };
        match kind {
            ModelKind::PianoTransformer => ModelSpec {
                seq_len: 128,
                embed_dim: 256,
                hidden: 256,
                n_layers: 4,
                n_heads: 8,
                dropout: 0.0,
                ..base
            },
            ModelKind::TablaBiLstm => ModelSpec {
                seq_len: 60,
                hidden: 128,
                embed_dim: 0,
                dropout: 0.0,
                ..base
            },
            ModelKind::TablaTransformer => ModelSpec {
                seq_len: 60,
                hidden: 128,
                embed_dim: 0,
                n_layers: 6,
                n_heads: 8,
                dropout: 0.1,
                ..base
            },
            _ => base,
        }
    }

    /// Width of the residual stream of a transformer.
    pub fn model_dim(&self) -> usize {
        match self.kind {
            ModelKind::PianoTransformer => self.embed_dim,
            _ => self.hidden,
        }
    }

    /// Size of one output row.
    pub fn output_dim(&self) -> usize {
        match self.kind.output_kind() {
            OutputKind::SoftmaxVocab => self.vocab_size,
            OutputKind::Linear => self.feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(format!("{}: {m}", self.kind)));
        if self.seq_len == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("seq_len, hidden and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.kind.is_symbolic() {
            if self.vocab_size == 0 {
                return bad("vocab_size must be positive".into());
            }
            if self.embed_dim == 0 {
                return bad("embed_dim must be positive".into());
            }
        } else if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.kind.is_transformer() {
            let d = self.model_dim();
            if self.n_layers == 0 || self.n_heads == 0 {
                return bad("transformers need at least one layer and one head".into());
            }
            if d % self.n_heads != 0 {
                return Err(Error::Parameter(format!(
                    "model width {d} is not divisible by {} heads",
                    self.n_heads
                )));
            }
        }
        Ok(())
    }

    pub fn write_keys(&self, kv: &mut KeyValues) {
        kv.set("model", self.kind);
        kv.set("seq_len", self.seq_len);
        kv.set("vocab_size", self.vocab_size);
        kv.set("feature_dim", self.feature_dim);
        kv.set("embed_dim", self.embed_dim);
        kv.set("hidden", self.hidden);
        kv.set("n_layers", self.n_layers);
        kv.set("n_heads", self.n_heads);
        kv.set("dropout", self.dropout);
        kv.set("batch_size", self.batch_size);
    }

    /// Reads a spec; keys that are absent take the defaults of the kind.
    pub fn from_keys(kv: &KeyValues) -> Result<Self> {
        let kind: ModelKind = kv.require::<String>("model")?.parse()?;
        let d = Self::defaults(kind);
        Ok(Self {
            kind,
            seq_len: kv.get_or("seq_len", d.seq_len)?,
            vocab_size: kv.get_or("vocab_size", d.vocab_size)?,
            feature_dim: kv.get_or("feature_dim", d.feature_dim)?,
            embed_dim: kv.get_or("embed_dim", d.embed_dim)?,
            hidden: kv.get_or("hidden", d.hidden)?,
            n_layers: kv.get_or("n_layers", d.n_layers)?,
            n_heads: kv.get_or("n_heads", d.n_heads)?,
            dropout: kv.get_or("dropout", d.dropout)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
        })
    }
}

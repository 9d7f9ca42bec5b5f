//! The nine architectures and their parameter layouts.

use super::layers::{
    attention_layer, bilstm_forward, lstm_forward, multi_head_attention, AttentionParams, Dense, LayerNorm,
    LstmParams, MhaParams,
};
use super::spec::{ModelKind, ModelSpec, OutputKind};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{ParameterSet, Tensor};

const EMBED_INIT: f64 = 0.05;

/// Model input for one batch.
#[derive(Clone, Debug)]
pub enum ModelInput {
    /// Token windows, all of one length.
    Tokens(Vec<Vec<usize>>),
    /// Feature windows `[B, T, feature_dim]`.
    Frames(Tensor),
}

impl ModelInput {
    pub fn batch_size(&self) -> usize {
        match self {
            ModelInput::Tokens(w) => w.len(),
            ModelInput::Frames(t) => t.shape()[0],
        }
    }
}

/// A spec with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParameterSet,
}

impl Model {
    pub fn build(spec: ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        let params = build_params(&spec, rng)?;
        Ok(Self { spec, params })
    }

    pub fn forward(&self, input: &ModelInput, training: bool, rng: &mut SeededRng) -> Result<Tensor> {
        forward(&self.spec, &self.params, input, training, rng)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }
}

fn embedding(params: &mut ParameterSet, name: &str, rows: usize, d: usize, rng: &mut SeededRng) -> Result<()> {
    let data = (0..rows * d).map(|_| rng.uniform_range(-EMBED_INIT, EMBED_INIT)).collect();
    params.insert(name, Tensor::param(&[rows, d], data)?)
}

fn bilstm_init(params: &mut ParameterSet, prefix: &str, d_in: usize, h: usize, rng: &mut SeededRng) -> Result<()> {
    LstmParams::init(params, &format!("{prefix}.fwd"), d_in, h, rng)?;
    LstmParams::init(params, &format!("{prefix}.bwd"), d_in, h, rng)
}

fn self_attention_init(params: &mut ParameterSet, prefix: &str, d: usize, rng: &mut SeededRng) -> Result<()> {
    AttentionParams::init(params, prefix, d, d, d, rng)
}

/// Glorot-uniform weights, zero biases (forget gates 1), uniform ±0.05
/// embeddings, unit layer-norm gains; deterministic in `rng`.
pub fn build_params(spec: &ModelSpec, rng: &mut SeededRng) -> Result<ParameterSet> {
    spec.validate()?;
    let mut p = ParameterSet::new();
    let (e, h, v) = (spec.embed_dim, spec.hidden, spec.vocab_size);
    match spec.kind {
        ModelKind::Lstm => {
            embedding(&mut p, "embed", v, e, rng)?;
            LstmParams::init(&mut p, "lstm0", e, h, rng)?;
        }
        ModelKind::LstmAttn => {
            embedding(&mut p, "embed", v, e, rng)?;
            LstmParams::init(&mut p, "lstm0", e, h, rng)?;
            self_attention_init(&mut p, "attn0", h, rng)?;
        }
        ModelKind::LstmAttnLstm => {
            embedding(&mut p, "embed", v, e, rng)?;
            LstmParams::init(&mut p, "lstm0", e, h, rng)?;
            self_attention_init(&mut p, "attn0", h, rng)?;
            LstmParams::init(&mut p, "lstm1", h, h, rng)?;
        }
        ModelKind::LstmAttnX3 => {
            embedding(&mut p, "embed", v, e, rng)?;
            for i in 0..3 {
                LstmParams::init(&mut p, &format!("lstm{i}"), if i == 0 { e } else { h }, h, rng)?;
                self_attention_init(&mut p, &format!("attn{i}"), h, rng)?;
            }
        }
        ModelKind::BiLstmAttnLstm => {
            embedding(&mut p, "embed", v, e, rng)?;
            bilstm_init(&mut p, "bilstm0", e, h, rng)?;
            self_attention_init(&mut p, "attn0", 2 * h, rng)?;
            LstmParams::init(&mut p, "lstm0", 2 * h, h, rng)?;
        }
        ModelKind::BiLstmAttnX3 => {
            embedding(&mut p, "embed", v, e, rng)?;
            for i in 0..3 {
                bilstm_init(&mut p, &format!("bilstm{i}"), if i == 0 { e } else { 2 * h }, h, rng)?;
                self_attention_init(&mut p, &format!("attn{i}"), 2 * h, rng)?;
            }
        }
        ModelKind::PianoTransformer => {
            embedding(&mut p, "embed", v, e, rng)?;
            embedding(&mut p, "pos", spec.seq_len, e, rng)?;
            for l in 0..spec.n_layers {
                MhaParams::init(&mut p, &format!("block{l}.mha"), e, rng)?;
                LayerNorm::init(&mut p, &format!("block{l}.ln1"), e)?;
                Dense::init(&mut p, &format!("block{l}.ff1"), e, h, rng)?;
                Dense::init(&mut p, &format!("block{l}.ff2"), h, e, rng)?;
                LayerNorm::init(&mut p, &format!("block{l}.ln2"), e)?;
            }
        }
        ModelKind::TablaBiLstm => {
            let f = spec.feature_dim;
            bilstm_init(&mut p, "bilstm0", f, h, rng)?;
            bilstm_init(&mut p, "bilstm1", 2 * h, h, rng)?;
            self_attention_init(&mut p, "attn0", 2 * h, rng)?;
            LstmParams::init(&mut p, "lstm0", 2 * h, h, rng)?;
            LstmParams::init(&mut p, "lstm1", h, h, rng)?;
        }
        ModelKind::TablaTransformer => {
            Dense::init(&mut p, "input", spec.feature_dim, h, rng)?;
            for l in 0..spec.n_layers {
                MhaParams::init(&mut p, &format!("block{l}.mha"), h, rng)?;
                Dense::init(&mut p, &format!("block{l}.dense1"), h, h, rng)?;
                LayerNorm::init(&mut p, &format!("block{l}.ln1"), h)?;
                Dense::init(&mut p, &format!("block{l}.dense2"), h, h, rng)?;
                LayerNorm::init(&mut p, &format!("block{l}.ln2"), h)?;
            }
        }
    }
    let head_in = match spec.kind {
        ModelKind::PianoTransformer => e,
        ModelKind::BiLstmAttnX3 => 2 * h,
        _ => h,
    };
    Dense::init(&mut p, "out", head_in, spec.output_dim(), rng)?;
    Ok(p)
}

fn embed_tokens(spec: &ModelSpec, params: &ParameterSet, windows: &[Vec<usize>]) -> Result<Tensor> {
    let b = windows.len();
    let t = windows.first().map_or(0, Vec::len);
    if b == 0 || t == 0 {
        return Err(Error::Contract("empty token batch".into()));
    }
    if windows.iter().any(|w| w.len() != t) {
        return Err(Error::Dimension("token windows differ in length".into()));
    }
    if t > spec.seq_len {
        return Err(Error::Contract(format!("window of {t} tokens exceeds seq_len {}", spec.seq_len)));
    }
    let flat: Vec<usize> = windows.iter().flatten().copied().collect();
    params.get("embed")?.embedding_lookup(&flat)?.reshape(&[b, t, spec.embed_dim])
}

fn frames_input(spec: &ModelSpec, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 || x.last_dim() != spec.feature_dim || x.shape()[0] == 0 || x.shape()[1] == 0 {
        return Err(Error::Dimension(format!(
            "feature batch {:?} needs [B, T, {}] with B, T ≥ 1",
            x.shape(),
            spec.feature_dim
        )));
    }
    if x.shape()[1] > spec.seq_len {
        return Err(Error::Contract(format!("window of {} frames exceeds seq_len {}", x.shape()[1], spec.seq_len)));
    }
    Ok(x.clone())
}

fn last_step(x: &Tensor) -> Result<Tensor> {
    x.time_step(x.shape()[1] - 1)
}

fn bilstm(params: &ParameterSet, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let fwd = LstmParams::load(params, &format!("{prefix}.fwd"))?;
    let bwd = LstmParams::load(params, &format!("{prefix}.bwd"))?;
    bilstm_forward(x, &fwd, &bwd)
}

fn lstm(params: &ParameterSet, prefix: &str, x: &Tensor, return_sequence: bool) -> Result<Tensor> {
    lstm_forward(x, &LstmParams::load(params, prefix)?, return_sequence)
}

fn attend(params: &ParameterSet, prefix: &str, x: &Tensor) -> Result<Tensor> {
    attention_layer(x, &AttentionParams::load(params, prefix)?)
}

/// Per-position logits `[B, T, V]` of the causal piano transformer.
pub fn piano_transformer_logits(
    spec: &ModelSpec,
    params: &ParameterSet,
    windows: &[Vec<usize>],
    training: bool,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    if spec.kind != ModelKind::PianoTransformer {
        return Err(Error::Spec(format!("{} is not the piano transformer", spec.kind)));
    }
    let tokens = embed_tokens(spec, params, windows)?;
    let (b, t) = (windows.len(), windows[0].len());
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
    let pos = params.get("pos")?.embedding_lookup(&positions)?.reshape(&[b, t, spec.embed_dim])?;
    let mut x = tokens.add(&pos)?;
    for l in 0..spec.n_layers {
        let mha = MhaParams::load(params, &format!("block{l}.mha"))?;
        let a = multi_head_attention(&x, spec.n_heads, &mha, true)?.dropout(spec.dropout, training, rng)?;
        x = LayerNorm::load(params, &format!("block{l}.ln1"))?.apply(&x.add(&a)?)?;
        let ff = Dense::load(params, &format!("block{l}.ff1"))?.apply(&x)?.relu();
        let ff = Dense::load(params, &format!("block{l}.ff2"))?
            .apply(&ff)?
            .dropout(spec.dropout, training, rng)?;
        x = LayerNorm::load(params, &format!("block{l}.ln2"))?.apply(&x.add(&ff)?)?;
    }
    Dense::load(params, "out")?.apply(&x)
}

/// Output for the last position of each window: vocabulary logits `[B, V]`
/// for symbolic models, a predicted frame `[B, feature_dim]` for audio ones.
pub fn forward(
    spec: &ModelSpec,
    params: &ParameterSet,
    input: &ModelInput,
    training: bool,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    let x = match (input, spec.kind.output_kind()) {
        (ModelInput::Tokens(w), OutputKind::SoftmaxVocab) => {
            if spec.kind == ModelKind::PianoTransformer {
                return last_step(&piano_transformer_logits(spec, params, w, training, rng)?);
            }
            embed_tokens(spec, params, w)?
        }
        (ModelInput::Frames(f), OutputKind::Linear) => frames_input(spec, f)?,
        _ => {
            return Err(Error::Spec(format!("{} cannot take this kind of input", spec.kind)));
        }
    };
    let rate = spec.dropout;
    let drop = |t: Tensor, rng: &mut SeededRng| t.dropout(rate, training, rng);
    let features = match spec.kind {
        ModelKind::Lstm => drop(lstm(params, "lstm0", &x, false)?, rng)?,
        ModelKind::LstmAttn => {
            let s = drop(lstm(params, "lstm0", &x, true)?, rng)?;
            last_step(&drop(attend(params, "attn0", &s)?, rng)?)?
        }
        ModelKind::LstmAttnLstm => {
            let s = drop(lstm(params, "lstm0", &x, true)?, rng)?;
            let s = drop(attend(params, "attn0", &s)?, rng)?;
            drop(lstm(params, "lstm1", &s, false)?, rng)?
        }
        ModelKind::LstmAttnX3 => {
            let mut s = x;
            for i in 0..3 {
                s = drop(lstm(params, &format!("lstm{i}"), &s, true)?, rng)?;
                s = drop(attend(params, &format!("attn{i}"), &s)?, rng)?;
            }
            last_step(&s)?
        }
        ModelKind::BiLstmAttnLstm => {
            let s = drop(bilstm(params, "bilstm0", &x)?, rng)?;
            let s = drop(attend(params, "attn0", &s)?, rng)?;
            drop(lstm(params, "lstm0", &s, false)?, rng)?
        }
        ModelKind::BiLstmAttnX3 => {
            let mut s = x;
            for i in 0..3 {
                s = drop(bilstm(params, &format!("bilstm{i}"), &s)?, rng)?;
                s = drop(attend(params, &format!("attn{i}"), &s)?, rng)?;
            }
            last_step(&s)?
        }
        ModelKind::TablaBiLstm => {
            let s = drop(bilstm(params, "bilstm0", &x)?, rng)?;
            let s = drop(bilstm(params, "bilstm1", &s)?, rng)?;
            let s = drop(attend(params, "attn0", &s)?, rng)?;
            let s = drop(lstm(params, "lstm0", &s, true)?, rng)?;
            drop(lstm(params, "lstm1", &s, false)?, rng)?
        }
        ModelKind::TablaTransformer => {
            let mut s = Dense::load(params, "input")?.apply(&x)?;
            for l in 0..spec.n_layers {
                let mha = MhaParams::load(params, &format!("block{l}.mha"))?;
                let a = drop(multi_head_attention(&s, spec.n_heads, &mha, false)?, rng)?;
                let a = Dense::load(params, &format!("block{l}.dense1"))?.apply(&a)?;
                s = LayerNorm::load(params, &format!("block{l}.ln1"))?.apply(&s.add(&a)?)?;
                let f = Dense::load(params, &format!("block{l}.dense2"))?.apply(&s)?.relu();
                let f = drop(f, rng)?;
                s = LayerNorm::load(params, &format!("block{l}.ln2"))?.apply(&s.add(&f)?)?;
            }
            last_step(&s)?
        }
        ModelKind::PianoTransformer => unreachable!("handled above"),
    };
    Dense::load(params, "out")?.apply(&features)
}

//! Finite-difference verification of every layer and model at micro sizes.

use super::arch::{build_params, forward, ModelInput};
use super::layers::{
    additive_attention, attention_layer, bilstm_forward, lstm_cell, lstm_forward, multi_head_attention,
    scaled_dot_attention, AttentionParams, LayerNorm, LstmParams, MhaParams,
};
use super::spec::{ModelKind, ModelSpec};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{grad_check, GradCheckReport, ParameterSet, Tensor};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

/// One named check of the suite.
#[derive(Clone, Debug)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

fn random_param(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

fn random_const(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

/// Scalar read-out `Σ x ⊙ r` with fixed random weights `r`, so every output
/// element contributes a distinct gradient.
fn readout(x: &Tensor, seed: u64) -> Result<Tensor> {
    let r = random_const(x.shape(), &mut SeededRng::new(seed))?;
    Ok(x.mul(&r)?.sum())
}

fn check<F>(name: &str, params: &ParameterSet, f: F) -> Result<NamedReport>
where
    F: Fn(&ParameterSet) -> Result<Tensor>,
{
    Ok(NamedReport {
        name: name.to_string(),
        report: grad_check(f, params, STEP, GRADCHECK_TOLERANCE)?,
    })
}

fn lstm_set(prefix: &str, d_in: usize, h: usize, rng: &mut SeededRng, params: &mut ParameterSet) -> Result<()> {
    LstmParams::init(params, prefix, d_in, h, rng)?;
    // Random biases exercise every gate, not just the forget offset.
    params.replace(&format!("{prefix}.b"), random_param(&[4 * h], rng)?)
}

fn micro_spec(kind: ModelKind) -> ModelSpec {
    let mut s = ModelSpec::defaults(kind);
    s.seq_len = 4;
    s.vocab_size = 7;
    s.feature_dim = 6;
    s.embed_dim = 4;
    s.hidden = 3;
    s.n_layers = 1;
    s.dropout = 0.25;
    match kind {
        ModelKind::PianoTransformer => {
            s.vocab_size = 12;
            s.embed_dim = 8;
            s.hidden = 8;
            s.n_heads = 2;
            s.n_layers = 2;
        }
        ModelKind::TablaTransformer => {
            s.seq_len = 5;
            s.hidden = 4;
            s.n_heads = 2;
            s.n_layers = 2;
        }
        _ => {}
    }
    s
}

fn model_check(kind: ModelKind, seed: u64) -> Result<NamedReport> {
    let spec = micro_spec(kind);
    let mut rng = SeededRng::new(seed);
    let params = build_params(&spec, &mut rng)?;
    let batch = 2;
    let name = format!("model/{kind}");
    if kind.is_symbolic() {
        let windows: Vec<Vec<usize>> = (0..batch)
            .map(|_| (0..spec.seq_len).map(|_| rng.below(spec.vocab_size)).collect())
            .collect();
        let targets: Vec<usize> = (0..batch).map(|_| rng.below(spec.vocab_size)).collect();
        let mut onehot = vec![0.0; batch * spec.vocab_size];
        for (b, &t) in targets.iter().enumerate() {
            onehot[b * spec.vocab_size + t] = 1.0;
        }
        let onehot = Tensor::new(&[batch, spec.vocab_size], onehot)?;
        let input = ModelInput::Tokens(windows.clone());
        check(&name, &params, |ps| {
            let mut drng = SeededRng::new(seed ^ 0xD0);
            let logits = forward(&spec, ps, &input, true, &mut drng)?;
            if kind == ModelKind::PianoTransformer {
                return logits.sparse_ce(&targets);
            }
            logits.softmax_rows()?.categorical_ce(&onehot)
        })
    } else {
        let x = random_const(&[batch, spec.seq_len, spec.feature_dim], &mut rng)?;
        let target = random_const(&[batch, spec.feature_dim], &mut rng)?;
        let input = ModelInput::Frames(x);
        check(&name, &params, |ps| {
            let mut drng = SeededRng::new(seed ^ 0xD0);
            forward(&spec, ps, &input, true, &mut drng)?.mse(&target)
        })
    }
}

/// Every layer, then every architecture at micro size. Dropout is active
/// with a fixed mask so its backward pass is covered too.
pub fn gradcheck_suite() -> Result<Vec<NamedReport>> {
    let mut rng = SeededRng::new(2024);
    let mut out = Vec::new();

    {
        let mut p = ParameterSet::new();
        lstm_set("cell", 3, 4, &mut rng, &mut p)?;
        p.insert("x", random_param(&[2, 3], &mut rng)?)?;
        p.insert("h0", random_param(&[2, 4], &mut rng)?)?;
        p.insert("c0", random_param(&[2, 4], &mut rng)?)?;
        out.push(check("lstm_cell", &p, |ps| {
            let lp = LstmParams::load(ps, "cell")?;
            let (h, c) = lstm_cell(ps.get("x")?, ps.get("h0")?, ps.get("c0")?, &lp)?;
            Ok(readout(&h, 1)?.add(&readout(&c, 2)?)?)
        })?);
    }
    {
        let mut p = ParameterSet::new();
        lstm_set("lstm", 3, 3, &mut rng, &mut p)?;
        p.insert("xs", random_param(&[2, 5, 3], &mut rng)?)?;
        out.push(check("lstm_layer", &p, |ps| {
            readout(&lstm_forward(ps.get("xs")?, &LstmParams::load(ps, "lstm")?, true)?, 3)
        })?);
    }
    {
        let mut p = ParameterSet::new();
        lstm_set("fwd", 3, 3, &mut rng, &mut p)?;
        lstm_set("bwd", 3, 3, &mut rng, &mut p)?;
        p.insert("xs", random_param(&[1, 4, 3], &mut rng)?)?;
        out.push(check("bilstm", &p, |ps| {
            let y = bilstm_forward(ps.get("xs")?, &LstmParams::load(ps, "fwd")?, &LstmParams::load(ps, "bwd")?)?;
            readout(&y, 4)
        })?);
    }
    {
        let mut p = ParameterSet::new();
        AttentionParams::init(&mut p, "attn", 3, 4, 4, &mut rng)?;
        p.insert("hs", random_param(&[2, 4, 4], &mut rng)?)?;
        p.insert("s", random_param(&[2, 3], &mut rng)?)?;
        out.push(check("additive_attention", &p, |ps| {
            let trace = additive_attention(ps.get("hs")?, ps.get("s")?, &AttentionParams::load(ps, "attn")?)?;
            readout(&trace.context, 5)
        })?);
    }
    {
        let mut p = ParameterSet::new();
        AttentionParams::init(&mut p, "attn", 4, 4, 4, &mut rng)?;
        p.insert("hs", random_param(&[2, 4, 4], &mut rng)?)?;
        out.push(check("attention_layer", &p, |ps| {
            readout(&attention_layer(ps.get("hs")?, &AttentionParams::load(ps, "attn")?)?, 6)
        })?);
    }
    for causal in [false, true] {
        let mut p = ParameterSet::new();
        for n in ["q", "k", "v"] {
            p.insert(n, random_param(&[2, 4, 3], &mut rng)?)?;
        }
        let name = if causal { "scaled_dot_attention_causal" } else { "scaled_dot_attention" };
        out.push(check(name, &p, |ps| {
            readout(&scaled_dot_attention(ps.get("q")?, ps.get("k")?, ps.get("v")?, causal)?, 7)
        })?);
    }
    {
        let mut p = ParameterSet::new();
        MhaParams::init(&mut p, "mha", 4, &mut rng)?;
        for part in ["q", "k", "v", "o"] {
            p.replace(&format!("mha.{part}.b"), random_param(&[4], &mut rng)?)?;
        }
        p.insert("x", random_param(&[2, 3, 4], &mut rng)?)?;
        out.push(check("multi_head_attention", &p, |ps| {
            readout(&multi_head_attention(ps.get("x")?, 2, &MhaParams::load(ps, "mha")?, true)?, 8)
        })?);
    }
    {
        let mut p = ParameterSet::new();
        p.insert("ln.gain", random_param(&[5], &mut rng)?)?;
        p.insert("ln.bias", random_param(&[5], &mut rng)?)?;
        p.insert("x", random_param(&[3, 5], &mut rng)?)?;
        out.push(check("layer_norm", &p, |ps| readout(&LayerNorm::load(ps, "ln")?.apply(ps.get("x")?)?, 9))?);
    }
    for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
        out.push(model_check(kind, 100 + i as u64)?);
    }
    Ok(out)
}

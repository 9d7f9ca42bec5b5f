//! Recurrent and attention layers over `[B, T, d]` batches.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{ParameterSet, Tensor};

const LN_EPS: f64 = 1e-5;

/// Glorot/Xavier uniform values for a `fan_in × fan_out` weight.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.uniform_range(-limit, limit)).collect())
}

fn matrix(params: &mut ParameterSet, name: String, rows: usize, cols: usize, rng: &mut SeededRng) -> Result<()> {
    params.insert(name, glorot_uniform(&[rows, cols], rows, cols, rng)?)
}

fn constant(params: &mut ParameterSet, name: String, n: usize, value: f64) -> Result<()> {
    params.insert(name, Tensor::param(&[n], vec![value; n])?)
}

fn fetch(params: &ParameterSet, prefix: &str, name: &str) -> Result<Tensor> {
    params.get(&format!("{prefix}.{name}")).cloned()
}

/// Affine map `x·w + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn init(params: &mut ParameterSet, prefix: &str, d_in: usize, d_out: usize, rng: &mut SeededRng) -> Result<()> {
        matrix(params, format!("{prefix}.w"), d_in, d_out, rng)?;
        constant(params, format!("{prefix}.b"), d_out, 0.0)
    }

    pub fn load(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self { w: fetch(params, prefix, "w")?, b: fetch(params, prefix, "b")? })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add(&self.b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn init(params: &mut ParameterSet, prefix: &str, d: usize) -> Result<()> {
        constant(params, format!("{prefix}.gain"), d, 1.0)?;
        constant(params, format!("{prefix}.bias"), d, 0.0)
    }

    pub fn load(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self { gain: fetch(params, prefix, "gain")?, bias: fetch(params, prefix, "bias")? })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, LN_EPS)
    }
}

/// LSTM weights with the four gates side by side in the order input, forget,
/// output, candidate: `w: [d_in, 4h]`, `u: [h, 4h]`, `b: [4h]`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    pub fn init(params: &mut ParameterSet, prefix: &str, d_in: usize, h: usize, rng: &mut SeededRng) -> Result<()> {
        matrix(params, format!("{prefix}.w"), d_in, 4 * h, rng)?;
        matrix(params, format!("{prefix}.u"), h, 4 * h, rng)?;
        let bias: Vec<f64> = (0..4 * h).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect();
        params.insert(format!("{prefix}.b"), Tensor::param(&[4 * h], bias)?)
    }

    pub fn load(params: &ParameterSet, prefix: &str) -> Result<Self> {
        let p = Self {
            w: fetch(params, prefix, "w")?,
            u: fetch(params, prefix, "u")?,
            b: fetch(params, prefix, "b")?,
        };
        let h = p.hidden();
        if p.w.rank() != 2 || p.w.shape()[1] != 4 * h || p.u.shape() != [h, 4 * h] || p.b.shape() != [4 * h] {
            return Err(Error::Dimension(format!(
                "{prefix}: inconsistent LSTM shapes w {:?}, u {:?}, b {:?}",
                p.w.shape(),
                p.u.shape(),
                p.b.shape()
            )));
        }
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }
}

/// Gate nonlinearities and state update from pre-activations `z: [B, 4h]`.
fn lstm_update(z: &Tensor, c_prev: Option<&Tensor>, h: usize) -> Result<(Tensor, Tensor)> {
    let sig = z.slice_last(0, 3 * h)?.sigmoid();
    let i = sig.slice_last(0, h)?;
    let f = sig.slice_last(h, h)?;
    let o = sig.slice_last(2 * h, h)?;
    let g = z.slice_last(3 * h, h)?.tanh();
    let ig = i.mul(&g)?;
    let c = match c_prev {
        Some(c_prev) => f.mul(c_prev)?.add(&ig)?,
        None => ig,
    };
    let h_new = o.mul(&c.tanh())?;
    Ok((h_new, c))
}

/// One step: `x: [B, d_in]`, states `[B, h]`.
pub fn lstm_cell(x: &Tensor, h_prev: &Tensor, c_prev: &Tensor, p: &LstmParams) -> Result<(Tensor, Tensor)> {
    let h = p.hidden();
    if x.rank() != 2 || x.last_dim() != p.input_dim() || h_prev.shape() != [x.shape()[0], h] || c_prev.shape() != h_prev.shape() {
        return Err(Error::Dimension(format!(
            "lstm_cell with x {:?}, h {:?}, c {:?} for d_in {}, h {h}",
            x.shape(),
            h_prev.shape(),
            c_prev.shape(),
            p.input_dim()
        )));
    }
    let z = x.matmul(&p.w)?.add(&h_prev.matmul(&p.u)?)?.add(&p.b)?;
    lstm_update(&z, Some(c_prev), h)
}

fn check_sequence(xs: &Tensor, d_in: usize, what: &str) -> Result<()> {
    if xs.rank() != 3 || xs.last_dim() != d_in {
        return Err(Error::Dimension(format!("{what}: input {:?} needs [B, T, {d_in}]", xs.shape())));
    }
    if xs.shape()[1] == 0 {
        return Err(Error::Contract(format!("{what}: empty sequence")));
    }
    Ok(())
}

/// Unrolls from a zero state; `reverse` walks the time axis backwards but
/// still returns states in input order.
fn lstm_scan(xs: &Tensor, p: &LstmParams, reverse: bool) -> Result<Vec<Tensor>> {
    check_sequence(xs, p.input_dim(), "lstm")?;
    let t_len = xs.shape()[1];
    let h = p.hidden();
    let xw = xs.matmul(&p.w)?.add(&p.b)?;
    let mut states: Vec<Option<Tensor>> = vec![None; t_len];
    let mut carry: Option<(Tensor, Tensor)> = None;
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let zx = xw.time_step(t)?;
        let (h_new, c_new) = match &carry {
            None => lstm_update(&zx, None, h)?,
            Some((h_prev, c_prev)) => lstm_update(&zx.add(&h_prev.matmul(&p.u)?)?, Some(c_prev), h)?,
        };
        states[t] = Some(h_new.clone());
        carry = Some((h_new, c_new));
    }
    Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
}

/// `[B, T, d_in]` to `[B, T, h]`, or to the last state `[B, h]`.
pub fn lstm_forward(xs: &Tensor, p: &LstmParams, return_sequence: bool) -> Result<Tensor> {
    let mut states = lstm_scan(xs, p, false)?;
    if return_sequence {
        Tensor::stack_time(&states)
    } else {
        Ok(states.pop().expect("non-empty"))
    }
}

/// Forward and backward passes concatenated per step: `[B, T, 2h]`.
pub fn bilstm_forward(xs: &Tensor, fwd: &LstmParams, bwd: &LstmParams) -> Result<Tensor> {
    if fwd.input_dim() != bwd.input_dim() || fwd.hidden() != bwd.hidden() {
        return Err(Error::Dimension("bidirectional halves differ in shape".into()));
    }
    let f = Tensor::stack_time(&lstm_scan(xs, fwd, false)?)?;
    let b = Tensor::stack_time(&lstm_scan(xs, bwd, true)?)?;
    Tensor::concat_last(&[f, b])
}

/// Alignment network `a(s, h) = vᵀ tanh(W_q s + W_k h)`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub v: Tensor,
}

impl AttentionParams {
    pub fn init(params: &mut ParameterSet, prefix: &str, d_q: usize, d_h: usize, d_a: usize, rng: &mut SeededRng) -> Result<()> {
        matrix(params, format!("{prefix}.wq"), d_q, d_a, rng)?;
        matrix(params, format!("{prefix}.wk"), d_h, d_a, rng)?;
        params.insert(format!("{prefix}.v"), glorot_uniform(&[d_a], d_a, 1, rng)?)
    }

    pub fn load(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_query: fetch(params, prefix, "wq")?,
            w_key: fetch(params, prefix, "wk")?,
            v: fetch(params, prefix, "v")?,
        })
    }
}

/// Scores, weights and context of one additive-attention read.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    /// `[B, T]` alignment scores e.
    pub scores: Tensor,
    /// `[B, T]` softmax of the scores.
    pub weights: Tensor,
    /// `[B, d_h]` weighted sum of the hidden states.
    pub context: Tensor,
}

/// Attends from query `s: [B, d_q]` over hidden states `hs: [B, T, d_h]`.
pub fn additive_attention(hs: &Tensor, s: &Tensor, p: &AttentionParams) -> Result<AttentionTrace> {
    check_sequence(hs, p.w_key.shape()[0], "additive_attention")?;
    let (b, t_len) = (hs.shape()[0], hs.shape()[1]);
    if s.shape() != [b, p.w_query.shape()[0]] {
        return Err(Error::Dimension(format!("query {:?} for batch of {b}", s.shape())));
    }
    let d_a = p.v.numel();
    let q = s.matmul(&p.w_query)?.reshape(&[b, 1, d_a])?;
    let k = hs.matmul(&p.w_key)?;
    let e = Tensor::additive_scores(&q, &k, &p.v)?;
    let alpha = e.softmax_rows()?;
    let context = alpha.batch_matmul(hs, false)?.reshape(&[b, hs.last_dim()])?;
    Ok(AttentionTrace {
        scores: e.reshape(&[b, t_len])?,
        weights: alpha.reshape(&[b, t_len])?,
        context,
    })
}

/// Sequence-preserving self-attention: position t queries with `h_t` over all
/// positions and outputs its context vector.
pub fn attention_layer(hs: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    check_sequence(hs, p.w_key.shape()[0], "attention_layer")?;
    let q = hs.matmul(&p.w_query)?;
    let k = hs.matmul(&p.w_key)?;
    let alpha = Tensor::additive_scores(&q, &k, &p.v)?.softmax_rows()?;
    alpha.batch_matmul(hs, false)
}

/// `softmax(Q Kᵀ / √d_k + mask) V` over `[B, T, d_k]` blocks.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> Result<Tensor> {
    let d_k = q.last_dim();
    if d_k == 0 {
        return Err(Error::Contract("scaled_dot_attention with d_k = 0".into()));
    }
    let scores = q.batch_matmul(k, true)?.scale(1.0 / (d_k as f64).sqrt());
    let alpha = if causal { scores.softmax_rows_causal()? } else { scores.softmax_rows()? };
    alpha.batch_matmul(v, false)
}

#[derive(Clone, Debug)]
pub struct MhaParams {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
}

impl MhaParams {
    pub fn init(params: &mut ParameterSet, prefix: &str, d: usize, rng: &mut SeededRng) -> Result<()> {
        for part in ["q", "k", "v", "o"] {
            Dense::init(params, &format!("{prefix}.{part}"), d, d, rng)?;
        }
        Ok(())
    }

    pub fn load(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            q: Dense::load(params, &format!("{prefix}.q"))?,
            k: Dense::load(params, &format!("{prefix}.k"))?,
            v: Dense::load(params, &format!("{prefix}.v"))?,
            o: Dense::load(params, &format!("{prefix}.o"))?,
        })
    }
}

/// Per-head projections, attention, concatenation and output projection.
pub fn multi_head_attention(x: &Tensor, heads: usize, p: &MhaParams, causal: bool) -> Result<Tensor> {
    let d = x.last_dim();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Parameter(format!("model width {d} is not divisible by {heads} heads")));
    }
    if x.rank() != 3 {
        return Err(Error::Dimension(format!("multi_head_attention input {:?}", x.shape())));
    }
    let q = p.q.apply(x)?.split_heads(heads)?;
    let k = p.k.apply(x)?.split_heads(heads)?;
    let v = p.v.apply(x)?.split_heads(heads)?;
    let attended = scaled_dot_attention(&q, &k, &v, causal)?.merge_heads(heads)?;
    p.o.apply(&attended)
}

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{tanh_fault, GradAccumulator, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Exp,
    Log1p,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Floor applied to probabilities inside the categorical cross-entropy log.
const PROB_FLOOR: f64 = 1e-12;

pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Tensor,
        b: Tensor,
    },
    BatchMatMul {
        a: Tensor,
        b: Tensor,
        trans_b: bool,
    },
    Unary {
        x: Tensor,
        kind: UnaryOp,
    },
    Binary {
        a: Tensor,
        b: Tensor,
        kind: BinaryOp,
        broadcast: bool,
    },
    Scale {
        x: Tensor,
        factor: f64,
    },
    Softmax {
        x: Tensor,
    },
    Concat {
        parts: Vec<Tensor>,
    },
    Slice {
        x: Tensor,
        start: usize,
        len: usize,
    },
    LayerNorm {
        x: Tensor,
        gain: Tensor,
        bias: Tensor,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Tensor,
        mask: Vec<f64>,
    },
    Embedding {
        table: Tensor,
        ids: Vec<usize>,
    },
    Reshape {
        x: Tensor,
    },
    TimeStep {
        x: Tensor,
        t: usize,
    },
    StackTime {
        steps: Vec<Tensor>,
    },
    Heads {
        x: Tensor,
        heads: usize,
        split: bool,
    },
    AdditiveScores {
        q: Tensor,
        k: Tensor,
        v: Tensor,
    },
    SparseCe {
        logits: Tensor,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    CategoricalCe {
        probs: Tensor,
        targets: Vec<f64>,
    },
    Mse {
        pred: Tensor,
        target: Vec<f64>,
    },
    Sum {
        x: Tensor,
    },
    Mean {
        x: Tensor,
    },
}

fn dim_err(msg: String) -> Error {
    Error::Dimension(msg)
}

/// Number of rows when everything but the last axis is flattened.
fn rows_of(t: &Tensor) -> usize {
    let d = t.last_dim();
    if d == 0 {
        t.shape()[..t.rank() - 1].iter().product()
    } else {
        t.numel() / d
    }
}

impl Tensor {
    /// `a[..., k] · b[k, n] → [..., n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        if self.rank() < 2 || b.rank() != 2 || self.last_dim() != b.shape()[0] {
            return Err(dim_err(format!(
                "matmul of {:?} and {:?}",
                self.shape(),
                b.shape()
            )));
        }
        let (m, k, n) = (rows_of(self), b.shape()[0], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.data(), b.data(), &mut out);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::MatMul {
                a: self.clone(),
                b: b.clone(),
            },
        ))
    }

    /// Batched product of `[B, m, k]` with `[B, k, n]` (or `[B, n, k]` when
    /// `trans_b`), giving `[B, m, n]`.
    pub fn batch_matmul(&self, b: &Tensor, trans_b: bool) -> Result<Tensor> {
        let bad = || dim_err(format!("batch_matmul of {:?} and {:?}", self.shape(), b.shape()));
        if self.rank() != 3 || b.rank() != 3 || self.shape()[0] != b.shape()[0] {
            return Err(bad());
        }
        let (batch, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (bk, n) = if trans_b {
            (b.shape()[2], b.shape()[1])
        } else {
            (b.shape()[1], b.shape()[2])
        };
        if bk != k {
            return Err(bad());
        }
        let mut out = vec![0.0; batch * m * n];
        for s in 0..batch {
            let a_s = &self.data()[s * m * k..(s + 1) * m * k];
            let b_s = &b.data()[s * k * n..(s + 1) * k * n];
            let c_s = &mut out[s * m * n..(s + 1) * m * n];
            if trans_b {
                gemm_nt(m, k, n, a_s, b_s, c_s);
            } else {
                gemm_nn(m, k, n, a_s, b_s, c_s);
            }
        }
        Ok(Tensor::from_op(
            vec![batch, m, n],
            out,
            Op::BatchMatMul {
                a: self.clone(),
                b: b.clone(),
                trans_b,
            },
        ))
    }

    pub fn map_unary(&self, kind: UnaryOp) -> Result<Tensor> {
        let f: fn(f64) -> f64 = match kind {
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Log1p => {
                if let Some(bad) = self.data().iter().find(|&&v| v <= -1.0 || v.is_nan()) {
                    return Err(Error::NumericDomain(format!("log1p of {bad}")));
                }
                f64::ln_1p
            }
            UnaryOp::Relu => |v: f64| if v > 0.0 { v } else { 0.0 },
        };
        let out = self.data().iter().map(|&v| f(v)).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Unary {
                x: self.clone(),
                kind,
            },
        ))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map_unary(UnaryOp::Sigmoid).expect("sigmoid is total")
    }

    pub fn tanh(&self) -> Tensor {
        self.map_unary(UnaryOp::Tanh).expect("tanh is total")
    }

    pub fn relu(&self) -> Tensor {
        self.map_unary(UnaryOp::Relu).expect("relu is total")
    }

    /// Elementwise `a ∘ b`. `b` may also be a row vector (`[n]` or `[1, n]`)
    /// broadcast over the last axis of `a`.
    pub fn map_binary(&self, b: &Tensor, kind: BinaryOp) -> Result<Tensor> {
        let broadcast = if self.shape() == b.shape() {
            false
        } else if (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1))
            && b.last_dim() == self.last_dim()
        {
            true
        } else {
            return Err(dim_err(format!(
                "cannot combine {:?} with {:?}",
                self.shape(),
                b.shape()
            )));
        };
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let out: Vec<f64> = if broadcast {
            let n = b.numel();
            self.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data()[i % n]))
                .collect()
        } else {
            self.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Binary {
                a: self.clone(),
                b: b.clone(),
                kind,
                broadcast,
            },
        ))
    }

    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        self.map_binary(b, BinaryOp::Add)
    }

    pub fn sub(&self, b: &Tensor) -> Result<Tensor> {
        self.map_binary(b, BinaryOp::Sub)
    }

    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        self.map_binary(b, BinaryOp::Mul)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Scale {
                x: self.clone(),
                factor,
            },
        )
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.softmax_impl(false)
    }

    /// Softmax over the last axis of square `[..., T, T]` score blocks where
    /// row `i` may only see columns `0..=i`. Masked entries come out as exact
    /// zeros and never read their inputs.
    pub fn softmax_rows_causal(&self) -> Result<Tensor> {
        if self.rank() < 2 || self.shape()[self.rank() - 2] != self.last_dim() {
            return Err(dim_err(format!(
                "causal softmax needs square trailing axes, got {:?}",
                self.shape()
            )));
        }
        self.softmax_impl(true)
    }

    fn softmax_impl(&self, causal: bool) -> Result<Tensor> {
        let n = self.last_dim();
        let rows = rows_of(self);
        let mut out = vec![0.0; self.numel()];
        for r in 0..rows {
            let visible = if causal { r % n + 1 } else { n };
            let x = &self.data()[r * n..r * n + visible];
            if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("softmax input {bad}")));
            }
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = &mut out[r * n..r * n + visible];
            let mut total = 0.0;
            for (yv, &xv) in y.iter_mut().zip(x) {
                *yv = (xv - max).exp();
                total += *yv;
            }
            y.iter_mut().for_each(|v| *v /= total);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Softmax { x: self.clone() },
        ))
    }

    /// Concatenates along the last axis; all other axes must agree.
    pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat of zero tensors".into()))?;
        let lead = &first.shape()[..first.rank() - 1];
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
                return Err(dim_err(format!(
                    "concat of {:?} with {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        let rows = rows_of(first);
        let total: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let d = p.last_dim();
                out.extend_from_slice(&p.data()[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let d = self.last_dim();
        if start + len > d {
            return Err(dim_err(format!(
                "slice {start}..{} of last axis {d}",
                start + len
            )));
        }
        let rows = rows_of(self);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&self.data()[r * d + start..r * d + start + len]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Slice {
                x: self.clone(),
                start,
                len,
            },
        ))
    }

    /// Normalises each last-axis vector to zero mean and unit population
    /// variance, then applies `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = self.last_dim();
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(dim_err(format!(
                "layer_norm over {:?} with gain {:?} and bias {:?}",
                self.shape(),
                gain.shape(),
                bias.shape()
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps {eps} must be > 0")));
        }
        let rows = rows_of(self);
        let mut xhat = vec![0.0; self.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        for r in 0..rows {
            let x = &self.data()[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..d {
                let h = (x[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = gain.data()[j] * h + bias.data()[j];
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                xhat,
                rstd,
            },
        ))
    }

    /// Inverted dropout. With `training == false` (or `rate == 0`) this returns
    /// the input tensor itself.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut SeededRng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Dropout {
                x: self.clone(),
                mask,
            },
        ))
    }

    /// Gathers rows of a `[V, d]` table, giving `[ids.len(), d]`.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(dim_err(format!(
                "embedding table must be [V, d], got {:?}",
                self.shape()
            )));
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("id {id} outside vocabulary of {v}")));
            }
            out.extend_from_slice(&self.data()[id * d..(id + 1) * d]);
        }
        Ok(Tensor::from_op(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.is_empty() || shape.iter().product::<usize>() != self.numel() {
            return Err(dim_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape { x: self.clone() },
        ))
    }

    /// Step `t` of a `[B, T, d]` sequence batch, as `[B, d]`.
    pub fn time_step(&self, t: usize) -> Result<Tensor> {
        if self.rank() != 3 || t >= self.shape()[1] {
            return Err(dim_err(format!(
                "time step {t} of {:?}",
                self.shape()
            )));
        }
        let (b, steps, d) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let mut out = Vec::with_capacity(b * d);
        for s in 0..b {
            let off = (s * steps + t) * d;
            out.extend_from_slice(&self.data()[off..off + d]);
        }
        Ok(Tensor::from_op(
            vec![b, d],
            out,
            Op::TimeStep {
                x: self.clone(),
                t,
            },
        ))
    }

    /// Stacks `T` tensors of shape `[B, d]` into `[B, T, d]`.
    pub fn stack_time(steps: &[Tensor]) -> Result<Tensor> {
        let first = steps
            .first()
            .ok_or_else(|| dim_err("stack of zero steps".into()))?;
        if first.rank() != 2 || steps.iter().any(|s| s.shape() != first.shape()) {
            return Err(dim_err(format!(
                "stack_time needs equal [B, d] steps, first is {:?}",
                first.shape()
            )));
        }
        let (b, d, t) = (first.shape()[0], first.shape()[1], steps.len());
        let mut out = vec![0.0; b * t * d];
        for (ti, step) in steps.iter().enumerate() {
            for s in 0..b {
                let dst = (s * t + ti) * d;
                out[dst..dst + d].copy_from_slice(&step.data()[s * d..(s + 1) * d]);
            }
        }
        Ok(Tensor::from_op(
            vec![b, t, d],
            out,
            Op::StackTime {
                steps: steps.to_vec(),
            },
        ))
    }

    /// `[B, T, h·k] → [B·h, T, k]`.
    pub fn split_heads(&self, heads: usize) -> Result<Tensor> {
        if self.rank() != 3 || heads == 0 || self.shape()[2] % heads != 0 {
            return Err(Error::Parameter(format!(
                "cannot split {:?} into {heads} heads",
                self.shape()
            )));
        }
        let (b, t, d) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let out = permute_heads(self.data(), b, t, d, heads, true);
        Ok(Tensor::from_op(
            vec![b * heads, t, d / heads],
            out,
            Op::Heads {
                x: self.clone(),
                heads,
                split: true,
            },
        ))
    }

    /// `[B·h, T, k] → [B, T, h·k]`.
    pub fn merge_heads(&self, heads: usize) -> Result<Tensor> {
        if self.rank() != 3 || heads == 0 || self.shape()[0] % heads != 0 {
            return Err(Error::Parameter(format!(
                "cannot merge {:?} from {heads} heads",
                self.shape()
            )));
        }
        let (bh, t, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let b = bh / heads;
        let out = permute_heads(self.data(), b, t, k * heads, heads, false);
        Ok(Tensor::from_op(
            vec![b, t, k * heads],
            out,
            Op::Heads {
                x: self.clone(),
                heads,
                split: false,
            },
        ))
    }

    /// Additive alignment scores `e[b,i,j] = Σ_a v_a · tanh(q[b,i,a] + k[b,j,a])`
    /// for queries `[B, Tq, A]`, keys `[B, Tk, A]` and `v: [A]`.
    pub fn additive_scores(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
        if q.rank() != 3
            || k.rank() != 3
            || q.shape()[0] != k.shape()[0]
            || q.shape()[2] != k.shape()[2]
            || v.shape() != [q.shape()[2]]
        {
            return Err(dim_err(format!(
                "additive scores with q {:?}, k {:?}, v {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        let (b, tq, a) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let tk = k.shape()[1];
        let mut out = vec![0.0; b * tq * tk];
        for s in 0..b {
            for i in 0..tq {
                let qi = &q.data()[(s * tq + i) * a..(s * tq + i + 1) * a];
                for j in 0..tk {
                    let kj = &k.data()[(s * tk + j) * a..(s * tk + j + 1) * a];
                    let mut e = 0.0;
                    for ((&qv, &kv), &vv) in qi.iter().zip(kj).zip(v.data()) {
                        e += vv * (qv + kv).tanh();
                    }
                    out[(s * tq + i) * tk + j] = e;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, tq, tk],
            out,
            Op::AdditiveScores {
                q: q.clone(),
                k: k.clone(),
                v: v.clone(),
            },
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, via a stable log-sum-exp.
    pub fn sparse_ce(&self, targets: &[usize]) -> Result<Tensor> {
        let v = self.last_dim();
        let rows = rows_of(self);
        if targets.len() != rows || rows == 0 {
            return Err(dim_err(format!(
                "{} targets for logits {:?}",
                targets.len(),
                self.shape()
            )));
        }
        check_finite(self.data(), "sparse_ce logits")?;
        let mut probs = vec![0.0; self.numel()];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::Index(format!("target {t} outside {v} classes")));
            }
            let x = &self.data()[r * v..(r + 1) * v];
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - x[t];
            for j in 0..v {
                probs[r * v + j] = (x[j] - lse).exp();
            }
        }
        Ok(Tensor::from_op(
            vec![1],
            vec![loss / rows as f64],
            Op::SparseCe {
                logits: self.clone(),
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean over rows of `-Σ_j y_j log p_j` for probability rows `p`.
    pub fn categorical_ce(&self, targets: &Tensor) -> Result<Tensor> {
        if self.shape() != targets.shape() {
            return Err(dim_err(format!(
                "categorical_ce of {:?} against {:?}",
                self.shape(),
                targets.shape()
            )));
        }
        check_finite(self.data(), "categorical_ce probabilities")?;
        check_finite(targets.data(), "categorical_ce targets")?;
        if let Some(bad) = self.data().iter().find(|&&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(Error::Numeric(format!("probability {bad} outside [0, 1]")));
        }
        let rows = rows_of(self);
        if rows == 0 {
            return Err(Error::Contract("categorical_ce of an empty batch".into()));
        }
        let loss: f64 = self
            .data()
            .iter()
            .zip(targets.data())
            .filter(|(_, &y)| y != 0.0)
            .map(|(&p, &y)| -y * p.max(PROB_FLOOR).ln())
            .sum();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss / rows as f64],
            Op::CategoricalCe {
                probs: self.clone(),
                targets: targets.data().to_vec(),
            },
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() || self.numel() == 0 {
            return Err(dim_err(format!(
                "mse of {:?} against {:?}",
                self.shape(),
                target.shape()
            )));
        }
        check_finite(self.data(), "mse prediction")?;
        check_finite(target.data(), "mse target")?;
        let n = self.numel() as f64;
        let loss = self
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            Op::Mse {
                pred: self.clone(),
                target: target.data().to_vec(),
            },
        ))
    }

    pub fn sum(&self) -> Tensor {
        Tensor::from_op(
            vec![1],
            vec![self.data().iter().sum()],
            Op::Sum { x: self.clone() },
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        Tensor::from_op(
            vec![1],
            vec![self.data().iter().sum::<f64>() / n],
            Op::Mean { x: self.clone() },
        )
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    match xs.iter().find(|v| !v.is_finite()) {
        Some(bad) => Err(Error::Numeric(format!("{what} contains {bad}"))),
        None => Ok(()),
    }
}

/// Moves data between `[B, T, h·k]` and `[B·h, T, k]` layouts.
fn permute_heads(src: &[f64], b: usize, t: usize, d: usize, heads: usize, split: bool) -> Vec<f64> {
    let k = d / heads;
    let mut out = vec![0.0; src.len()];
    for s in 0..b {
        for ti in 0..t {
            for h in 0..heads {
                let merged = (s * t + ti) * d + h * k;
                let splitted = ((s * heads + h) * t + ti) * k;
                if split {
                    out[splitted..splitted + k].copy_from_slice(&src[merged..merged + k]);
                } else {
                    out[merged..merged + k].copy_from_slice(&src[splitted..splitted + k]);
                }
            }
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::BatchMatMul { a, b, .. } | Op::Binary { a, b, .. } => {
                vec![a, b]
            }
            Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::Softmax { x }
            | Op::Slice { x, .. }
            | Op::Dropout { x, .. }
            | Op::Reshape { x }
            | Op::TimeStep { x, .. }
            | Op::Heads { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![x],
            Op::Concat { parts } => parts.iter().collect(),
            Op::StackTime { steps } => steps.iter().collect(),
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Embedding { table, .. } => vec![table],
            Op::AdditiveScores { q, k, v } => vec![q, k, v],
            Op::SparseCe { logits, .. } => vec![logits],
            Op::CategoricalCe { probs, .. } => vec![probs],
            Op::Mse { pred, .. } => vec![pred],
        }
    }

    pub(crate) fn into_inputs(self) -> Vec<Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::BatchMatMul { a, b, .. } | Op::Binary { a, b, .. } => {
                vec![a, b]
            }
            Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::Softmax { x }
            | Op::Slice { x, .. }
            | Op::Dropout { x, .. }
            | Op::Reshape { x }
            | Op::TimeStep { x, .. }
            | Op::Heads { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![x],
            Op::Concat { parts } => parts,
            Op::StackTime { steps } => steps,
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Embedding { table, .. } => vec![table],
            Op::AdditiveScores { q, k, v } => vec![q, k, v],
            Op::SparseCe { logits, .. } => vec![logits],
            Op::CategoricalCe { probs, .. } => vec![probs],
            Op::Mse { pred, .. } => vec![pred],
        }
    }

    /// Pushes the upstream gradient `g` of `out` into the inputs' buffers.
    pub(crate) fn backward(&self, out: &Tensor, g: &[f64], acc: &mut GradAccumulator) {
        match self {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k, n) = (rows_of(a), b.shape()[0], b.shape()[1]);
                if let Some(ga) = acc.slot(a) {
                    gemm_nt(m, n, k, g, b.data(), ga);
                }
                if let Some(gb) = acc.slot(b) {
                    gemm_tn(k, m, n, a.data(), g, gb);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let n = out.shape()[2];
                if let Some(ga) = acc.slot(a) {
                    for s in 0..batch {
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let bs = &b.data()[s * k * n..(s + 1) * k * n];
                        let dst = &mut ga[s * m * k..(s + 1) * m * k];
                        if *trans_b {
                            // C = A·Bᵀ with B [n×k]: dA = dC·B
                            gemm_nn(m, n, k, gs, bs, dst);
                        } else {
                            gemm_nt(m, n, k, gs, bs, dst);
                        }
                    }
                }
                if let Some(gb) = acc.slot(b) {
                    for s in 0..batch {
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let as_ = &a.data()[s * m * k..(s + 1) * m * k];
                        let dst = &mut gb[s * k * n..(s + 1) * k * n];
                        if *trans_b {
                            // dB [n×k] = dCᵀ·A
                            gemm_tn(n, m, k, gs, as_, dst);
                        } else {
                            gemm_tn(k, m, n, as_, gs, dst);
                        }
                    }
                }
            }
            Op::Unary { x, kind } => {
                if let Some(gx) = acc.slot(x) {
                    let y = out.data();
                    let xd = x.data();
                    for i in 0..gx.len() {
                        let d = match kind {
                            UnaryOp::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryOp::Tanh => {
                                let d = 1.0 - y[i] * y[i];
                                if tanh_fault() {
                                    -d
                                } else {
                                    d
                                }
                            }
                            UnaryOp::Exp => y[i],
                            UnaryOp::Log1p => 1.0 / (1.0 + xd[i]),
                            UnaryOp::Relu => {
                                if xd[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        gx[i] += g[i] * d;
                    }
                }
            }
            Op::Binary {
                a,
                b,
                kind,
                broadcast,
            } => {
                if let Some(ga) = acc.slot(a) {
                    match kind {
                        BinaryOp::Add | BinaryOp::Sub => add_into(ga, g),
                        BinaryOp::Mul => {
                            let n = b.numel();
                            for i in 0..ga.len() {
                                ga[i] += g[i] * b.data()[if *broadcast { i % n } else { i }];
                            }
                        }
                    }
                }
                if let Some(gb) = acc.slot(b) {
                    let n = gb.len();
                    let sign = if *kind == BinaryOp::Sub { -1.0 } else { 1.0 };
                    for i in 0..g.len() {
                        let j = if *broadcast { i % n } else { i };
                        let local = match kind {
                            BinaryOp::Add | BinaryOp::Sub => sign,
                            BinaryOp::Mul => a.data()[i],
                        };
                        gb[j] += g[i] * local;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(gx) = acc.slot(x) {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += s * factor;
                    }
                }
            }
            Op::Softmax { x } => {
                if let Some(gx) = acc.slot(x) {
                    let n = out.last_dim();
                    let y = out.data();
                    for r in 0..y.len() / n.max(1) {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let total = out.last_dim();
                let rows = rows_of(out);
                let mut offset = 0;
                for p in parts {
                    let d = p.last_dim();
                    if let Some(gp) = acc.slot(p) {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * d..(r + 1) * d],
                                &g[r * total + offset..r * total + offset + d],
                            );
                        }
                    }
                    offset += d;
                }
            }
            Op::Slice { x, start, len } => {
                if let Some(gx) = acc.slot(x) {
                    let d = x.last_dim();
                    for r in 0..rows_of(x) {
                        add_into(
                            &mut gx[r * d + start..r * d + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = x.last_dim();
                let rows = rows_of(x);
                if let Some(gg) = acc.slot(gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = acc.slot(bias) {
                    for r in 0..rows {
                        add_into(gb, &g[r * d..(r + 1) * d]);
                    }
                }
                if let Some(gx) = acc.slot(x) {
                    let w = gain.data();
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let h = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * w[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(h).map(|(a, b)| a * b).sum();
                        let scale = rstd[r] / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += scale * (d as f64 * dxhat[j] - s1 - h[j] * s2);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = acc.slot(x) {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = acc.slot(table) {
                    let d = table.shape()[1];
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = acc.slot(x) {
                    add_into(gx, g);
                }
            }
            Op::TimeStep { x, t } => {
                if let Some(gx) = acc.slot(x) {
                    let (b, steps, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    for s in 0..b {
                        let off = (s * steps + t) * d;
                        add_into(&mut gx[off..off + d], &g[s * d..(s + 1) * d]);
                    }
                }
            }
            Op::StackTime { steps } => {
                let (b, t, d) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                for (ti, step) in steps.iter().enumerate() {
                    if let Some(gs) = acc.slot(step) {
                        for s in 0..b {
                            let src = (s * t + ti) * d;
                            add_into(&mut gs[s * d..(s + 1) * d], &g[src..src + d]);
                        }
                    }
                }
            }
            Op::Heads { x, heads, split } => {
                if let Some(gx) = acc.slot(x) {
                    // The gradient travels through the inverse permutation.
                    let back = if *split {
                        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                        permute_heads(g, b, t, d, *heads, false)
                    } else {
                        let (b, t, d) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                        permute_heads(g, b, t, d, *heads, true)
                    };
                    add_into(gx, &back);
                }
            }
            Op::AdditiveScores { q, k, v } => {
                let (b, tq, a) = (q.shape()[0], q.shape()[1], q.shape()[2]);
                let tk = k.shape()[1];
                let mut gq = vec![0.0; q.numel()];
                let mut gk = vec![0.0; k.numel()];
                let mut gv = vec![0.0; a];
                for s in 0..b {
                    for i in 0..tq {
                        let qo = (s * tq + i) * a;
                        for j in 0..tk {
                            let up = g[(s * tq + i) * tk + j];
                            if up == 0.0 {
                                continue;
                            }
                            let ko = (s * tk + j) * a;
                            for c in 0..a {
                                let th = (q.data()[qo + c] + k.data()[ko + c]).tanh();
                                gv[c] += up * th;
                                let dpre = up * v.data()[c] * (1.0 - th * th);
                                gq[qo + c] += dpre;
                                gk[ko + c] += dpre;
                            }
                        }
                    }
                }
                if let Some(slot) = acc.slot(q) {
                    add_into(slot, &gq);
                }
                if let Some(slot) = acc.slot(k) {
                    add_into(slot, &gk);
                }
                if let Some(slot) = acc.slot(v) {
                    add_into(slot, &gv);
                }
            }
            Op::SparseCe {
                logits,
                targets,
                probs,
            } => {
                if let Some(gl) = acc.slot(logits) {
                    let v = logits.last_dim();
                    let scale = g[0] / targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            let y = if j == t { 1.0 } else { 0.0 };
                            gl[r * v + j] += scale * (probs[r * v + j] - y);
                        }
                    }
                }
            }
            Op::CategoricalCe { probs, targets } => {
                if let Some(gp) = acc.slot(probs) {
                    let scale = g[0] / rows_of(probs) as f64;
                    for (i, (&p, &y)) in probs.data().iter().zip(targets).enumerate() {
                        if y != 0.0 && p > PROB_FLOOR {
                            gp[i] -= scale * y / p;
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                if let Some(gp) = acc.slot(pred) {
                    let scale = 2.0 * g[0] / pred.numel() as f64;
                    for (i, (&p, &t)) in pred.data().iter().zip(target).enumerate() {
                        gp[i] += scale * (p - t);
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = acc.slot(x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean { x } => {
                if let Some(gx) = acc.slot(x) {
                    let s = g[0] / x.numel().max(1) as f64;
                    gx.iter_mut().for_each(|v| *v += s);
                }
            }
        }
    }
}

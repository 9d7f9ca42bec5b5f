use std::fmt;

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`
/// so that gradients which are both essentially zero compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{} {:.3e} {}",
                e.name,
                e.max_rel_err,
                if e.pass { "pass" } else { "fail" }
            )?;
        }
        Ok(())
    }
}

pub(crate) fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`, one report line per parameter.
pub fn grad_check<F>(f: F, params: &ParameterSet, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step {h} must be > 0")));
    }
    let eval = |ps: &ParameterSet| -> Result<f64> { f(ps)?.item() };

    params.zero_grad();
    let loss = f(params)?;
    let first = loss.item()?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {first} then {second}"
        )));
    }
    if loss.requires_grad() {
        loss.backward()?;
    }

    let mut entries = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        let analytic = tensor.grad().unwrap_or_else(|| vec![0.0; tensor.numel()]);
        let mut worst: f64 = 0.0;
        for i in 0..tensor.numel() {
            let probe = |delta: f64| -> Result<f64> {
                let mut data = tensor.data().to_vec();
                data[i] += delta;
                let mut ps = params.clone();
                ps.replace(name, Tensor::param(tensor.shape(), data)?)?;
                eval(&ps)
            };
            let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
        entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_err: worst,
            pass: worst <= tol,
        });
    }
    params.zero_grad();
    Ok(GradCheckReport {
        entries,
        tolerance: tol,
    })
}

use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// In-place bias-corrected update of `x` at step `t` (1-based).
pub fn adam_update(x: &mut [f64], g: &[f64], state: &mut Moments, t: u64, cfg: &AdamConfig) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("Adam steps are numbered from 1".into()));
    }
    if state.m.is_empty() && state.v.is_empty() {
        state.m = vec![0.0; x.len()];
        state.v = vec![0.0; x.len()];
    }
    if g.len() != x.len() || state.m.len() != x.len() || state.v.len() != x.len() {
        return Err(Error::Contract(format!(
            "Adam shape drift: {} values, {} gradients, {} moments",
            x.len(),
            g.len(),
            state.m.len()
        )));
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..x.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        x[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a whole parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(String, Moments)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies the gradients currently held by `params`, replacing every
    /// tensor with its updated value. Missing gradients count as zero.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params.names().map(|n| (n.to_string(), Moments::default())).collect();
        }
        if self.moments.len() != params.len() || self.moments.iter().zip(params.names()).any(|((a, _), b)| a != b) {
            return Err(Error::Contract("parameter set changed between Adam steps".into()));
        }
        self.step += 1;
        let mut updated = Vec::with_capacity(params.len());
        for ((name, state), (_, p)) in self.moments.iter_mut().zip(params.iter()) {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut x = p.data().to_vec();
            adam_update(&mut x, &g, state, self.step, &self.config)?;
            updated.push((name.clone(), Tensor::param(p.shape(), x)?));
        }
        for (name, t) in updated {
            params.replace(&name, t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_run(steps: usize) -> Vec<f64> {
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut x = [1.0];
        let mut st = Moments::default();
        let mut path = vec![x[0]];
        for t in 1..=steps {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut st, t as u64, &cfg).unwrap();
            path.push(x[0]);
        }
        path
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        // m̂ = g and v̂ = g², so the step is lr·g/(|g|+eps).
        let x1 = quadratic_run(1)[1];
        let expect = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((x1 - expect).abs() < 1e-15);
        assert!((x1 - 0.9).abs() < 1e-8);
    }

    #[test]
    fn five_hundred_steps_reach_the_minimum() {
        let path = quadratic_run(500);
        assert!(path[500].abs() < 1e-3, "{}", path[500]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut x = vec![0.3, -2.0, 7.5];
        let before = x.clone();
        let mut st = Moments::default();
        for t in 1..=10 {
            adam_update(&mut x, &[0.0; 3], &mut st, t, &AdamConfig::default()).unwrap();
        }
        assert_eq!(x, before);
    }

    #[test]
    fn shape_drift_is_rejected() {
        let mut st = Moments::default();
        let cfg = AdamConfig::default();
        adam_update(&mut [0.0, 1.0], &[1.0, 1.0], &mut st, 1, &cfg).unwrap();
        let err = adam_update(&mut [0.0, 1.0, 2.0], &[1.0; 3], &mut st, 2, &cfg);
        assert!(matches!(err, Err(Error::Contract(_))));
        assert!(adam_update(&mut [0.0], &[1.0], &mut Moments::default(), 0, &cfg).is_err());
    }

    #[test]
    fn set_step_matches_the_scalar_rule() {
        let mut ps = ParameterSet::new();
        ps.insert("a", Tensor::param(&[2], vec![1.0, -1.0]).unwrap()).unwrap();
        ps.insert("b", Tensor::param(&[1], vec![0.5]).unwrap()).unwrap();
        let loss = ps.get("a").unwrap().mul(ps.get("a").unwrap()).unwrap().sum();
        loss.backward().unwrap();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() });
        opt.step(&mut ps).unwrap();
        let a = ps.get("a").unwrap().data().to_vec();
        assert!((a[0] - 0.9).abs() < 1e-8 && (a[1] + 0.9).abs() < 1e-8);
        assert_eq!(ps.get("b").unwrap().data(), &[0.5]);
        assert!(ps.get("a").unwrap().grad().is_none());
        assert_eq!(opt.steps_taken(), 1);

        let mut other = ParameterSet::new();
        other.insert("c", Tensor::param(&[1], vec![0.0]).unwrap()).unwrap();
        assert!(matches!(opt.step(&mut other), Err(Error::Contract(_))));
    }
}

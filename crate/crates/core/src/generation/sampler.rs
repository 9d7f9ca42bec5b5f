use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const DEFAULT_TOP_P: f64 = 0.7;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampler {
    Greedy,
    TopP(f64),
}

fn validate(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Numeric("empty distribution".into()));
    }
    if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Numeric(format!("probability {bad} is not a finite nonnegative value")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Numeric(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Smallest prefix of the ids sorted by descending probability (ties by
/// lower id) whose mass reaches `p`, with renormalised probabilities.
pub fn nucleus(probs: &[f64], p: f64) -> Result<Vec<(usize, f64)>> {
    validate(probs)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!("top-p {p} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for id in order {
        kept.push(id);
        mass += probs[id];
        if mass >= p {
            break;
        }
    }
    Ok(kept.into_iter().map(|id| (id, probs[id] / mass)).collect())
}

pub fn top_p_sample(probs: &[f64], p: f64, rng: &mut SeededRng) -> Result<usize> {
    let core = nucleus(probs, p)?;
    let u = rng.uniform();
    let mut acc = 0.0;
    for &(id, q) in &core {
        acc += q;
        if u < acc {
            return Ok(id);
        }
    }
    Ok(core.last().expect("nucleus is never empty").0)
}

pub fn sample(probs: &[f64], sampler: Sampler, rng: &mut SeededRng) -> Result<usize> {
    match sampler {
        Sampler::Greedy => Ok(nucleus(probs, f64::MIN_POSITIVE)?[0].0),
        Sampler::TopP(p) => top_p_sample(probs, p, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROBS: [f64; 4] = [0.5, 0.3, 0.15, 0.05];

    #[test]
    fn nucleus_of_the_worked_example() {
        let core = nucleus(&PROBS, 0.7).unwrap();
        assert_eq!(core.iter().map(|c| c.0).collect::<Vec<_>>(), [0, 1]);
        assert!((core[0].1 - 0.625).abs() < 1e-12 && (core[1].1 - 0.375).abs() < 1e-12);
        assert_eq!(nucleus(&PROBS, 1.0).unwrap().len(), 4);
        assert_eq!(nucleus(&PROBS, 0.5).unwrap(), vec![(0, 1.0)]);
    }

    #[test]
    fn ties_go_to_the_lower_id() {
        let probs = [0.2, 0.4, 0.4];
        assert_eq!(nucleus(&probs, 0.3).unwrap(), vec![(1, 1.0)]);
        assert_eq!(sample(&probs, Sampler::Greedy, &mut SeededRng::new(0)).unwrap(), 1);
    }

    #[test]
    fn tiny_p_is_greedy() {
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            assert_eq!(top_p_sample(&[0.1, 0.2, 0.6, 0.1], 1e-12, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn nucleus_grows_with_p() {
        let mut rng = SeededRng::new(8);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..1 + rng.below(12)).map(|_| rng.uniform()).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let (a, b) = (rng.uniform().max(1e-9), rng.uniform().max(1e-9));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small: Vec<usize> = nucleus(&probs, lo).unwrap().iter().map(|c| c.0).collect();
            let large: Vec<usize> = nucleus(&probs, hi).unwrap().iter().map(|c| c.0).collect();
            assert!(small.iter().all(|id| large.contains(id)));
            let mass: f64 = small.iter().map(|&i| probs[i]).sum();
            assert!(mass >= lo - 1e-12);
        }
    }

    #[test]
    fn never_leaves_the_nucleus() {
        // Sweep the uniform draw over a fine grid instead of enumerating RNG
        // states: every u in [0,1) must map inside the nucleus.
        let mut rng = SeededRng::new(21);
        for _ in 0..50 {
            let v = 2 + rng.below(15);
            let raw: Vec<f64> = (0..v).map(|_| rng.uniform()).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let p = rng.uniform().max(1e-6);
            let core: Vec<usize> = nucleus(&probs, p).unwrap().iter().map(|c| c.0).collect();
            for _ in 0..500 {
                let id = top_p_sample(&probs, p, &mut rng).unwrap();
                assert!(core.contains(&id));
            }
        }
    }

    #[test]
    fn invalid_distributions_are_numeric_errors() {
        let mut rng = SeededRng::new(0);
        for bad in [vec![0.5, 0.6], vec![1.2, -0.2], vec![f64::NAN, 1.0], vec![]] {
            assert!(matches!(top_p_sample(&bad, 0.7, &mut rng), Err(Error::Numeric(_))), "{bad:?}");
        }
        assert!(top_p_sample(&[0.5, 0.5 + 5e-7], 0.7, &mut rng).is_ok());
        for p in [0.0, 1.5, f64::NAN] {
            assert!(matches!(nucleus(&PROBS, p), Err(Error::Parameter(_))));
        }
    }
}

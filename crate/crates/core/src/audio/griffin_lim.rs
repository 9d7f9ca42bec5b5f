use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use super::stft::FrameTransform;
use super::wav::AudioClip;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SeededRng;

pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;

#[derive(Clone, Debug)]
pub struct GriffinLimOutput {
    pub clip: AudioClip,
    /// `‖|STFT(x_i)| − mag‖ / ‖mag‖` after each iteration.
    pub spectral_convergence: Vec<f64>,
}

impl GriffinLimOutput {
    pub fn final_error(&self) -> f64 {
        self.spectral_convergence.last().copied().unwrap_or(0.0)
    }
}

/// Phase retrieval for a magnitude spectrogram laid out like [`super::stft`]
/// output (centred frames, `n_fft/2 + 1` bins).
///
/// Each round synthesises the least-squares signal for the current complex
/// estimate and keeps only its phase. Errors are measured over the full
/// two-sided spectrum, the norm in which every round is a projection, so the
/// sequence never increases.
pub fn griffin_lim(
    mag: &Matrix,
    n_fft: usize,
    hop: usize,
    n_iter: usize,
    sample_rate: u32,
    rng: &mut SeededRng,
) -> Result<GriffinLimOutput> {
    if n_iter == 0 {
        return Err(Error::Parameter("griffin_lim needs at least one iteration".into()));
    }
    let mut tf = FrameTransform::new(n_fft, hop)?;
    let bins = tf.bins();
    if mag.cols != bins {
        return Err(Error::Dimension(format!(
            "magnitude has {} bins, n_fft {n_fft} gives {bins}",
            mag.cols
        )));
    }
    if let Some(bad) = mag.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Numeric(format!("magnitude entry {bad} is not a finite nonnegative value")));
    }
    let frames = mag.rows;
    let out_len = hop * frames.saturating_sub(1);
    let weight = |k: usize| if k == 0 || 2 * k == n_fft { 1.0 } else { 2.0 };
    let target_norm = mag
        .data
        .iter()
        .enumerate()
        .map(|(i, m)| weight(i % bins) * m * m)
        .sum::<f64>()
        .sqrt();
    if target_norm == 0.0 || frames == 0 {
        return Ok(GriffinLimOutput {
            clip: AudioClip::new(vec![0.0; out_len], sample_rate)?,
            spectral_convergence: vec![0.0; n_iter],
        });
    }

    let mut estimate: Vec<Complex<f64>> = mag
        .data
        .iter()
        .map(|&m| Complex::from_polar(m, rng.uniform_range(-PI, PI)))
        .collect();
    let mut history = Vec::with_capacity(n_iter);
    let mut signal = Vec::new();
    for _ in 0..n_iter {
        signal = tf.synthesize(&estimate, frames).0;
        let spectra = tf.analyze(&signal, frames);
        let mut err = 0.0;
        for (i, (s, &m)) in spectra.iter().zip(&mag.data).enumerate() {
            let a = s.norm();
            err += weight(i % bins) * (a - m) * (a - m);
            estimate[i] = if a > 0.0 { s * (m / a) } else { Complex::new(m, 0.0) };
        }
        history.push(err.sqrt() / target_norm);
    }
    let pad = n_fft / 2;
    let mut samples: Vec<f64> = signal.iter().skip(pad).take(out_len).copied().collect();
    samples.resize(out_len, 0.0);
    Ok(GriffinLimOutput {
        clip: AudioClip::new(samples, sample_rate)?,
        spectral_convergence: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::stft::stft;

    fn sine_mag(n_fft: usize, hop: usize) -> Matrix {
        let samples = (0..8000)
            .map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / 8000.0).sin())
            .collect();
        stft(&AudioClip::new(samples, 8000).unwrap(), n_fft, hop)
            .unwrap()
            .magnitude
    }

    #[test]
    fn sine_reconstruction_converges() {
        let mag = sine_mag(512, 128);
        let out = griffin_lim(&mag, 512, 128, 60, 8000, &mut SeededRng::new(1)).unwrap();
        assert_eq!(out.spectral_convergence.len(), 60);
        assert!(out.final_error() < 0.15, "error {}", out.final_error());
        for w in out.spectral_convergence.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} then {}", w[0], w[1]);
        }
        assert_eq!(out.clip.samples.len(), 128 * (mag.rows - 1));
    }

    #[test]
    fn more_iterations_never_hurt() {
        let mut rng = SeededRng::new(4);
        let noise: Vec<f64> = (0..4000).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
        let mag = stft(&AudioClip::new(noise, 8000).unwrap(), 256, 64).unwrap().magnitude;
        let one = griffin_lim(&mag, 256, 64, 1, 8000, &mut SeededRng::new(2)).unwrap();
        let sixty = griffin_lim(&mag, 256, 64, 60, 8000, &mut SeededRng::new(2)).unwrap();
        assert_eq!(one.spectral_convergence[0], sixty.spectral_convergence[0]);
        assert!(sixty.final_error() <= one.final_error());
        for w in sixty.spectral_convergence.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn zero_magnitude_is_silence() {
        let out = griffin_lim(&Matrix::zeros(9, 129), 256, 64, 5, 8000, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.clip.samples.len(), 8 * 64);
        assert!(out.clip.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = SeededRng::new(0);
        assert!(griffin_lim(&Matrix::zeros(3, 100), 256, 64, 5, 8000, &mut rng).is_err());
        assert!(griffin_lim(&Matrix::zeros(3, 129), 256, 64, 0, 8000, &mut rng).is_err());
        let neg = Matrix::new(1, 129, vec![-1.0; 129]).unwrap();
        assert!(griffin_lim(&neg, 256, 64, 1, 8000, &mut rng).is_err());
    }
}

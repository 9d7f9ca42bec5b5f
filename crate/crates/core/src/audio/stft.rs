use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::wav::AudioClip;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Magnitude and phase of centred, Hann-windowed frames.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    /// frames × (n_fft/2 + 1)
    pub magnitude: Matrix,
    pub phase: Matrix,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitude.rows
    }

    pub fn bins(&self) -> usize {
        self.magnitude.cols
    }
}

/// `w[n] = 0.5 (1 - cos(2πn/N))` for `n` in `0..N`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

pub(crate) fn check_params(n_fft: usize, hop: usize) -> Result<()> {
    if n_fft < 2 || !n_fft.is_power_of_two() {
        return Err(Error::Parameter(format!("n_fft {n_fft} must be a power of two ≥ 2")));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::Parameter(format!("hop {hop} must be in 1..={n_fft}")));
    }
    Ok(())
}

/// Index into `0..len` under whole-sample symmetric reflection (`x[-k] = x[k]`).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Pads by `n_fft/2` on both sides with reflection, so frame `m` is centred on
/// sample `m·hop`.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; 2 * pad];
    }
    (-(pad as isize)..(x.len() + pad) as isize)
        .map(|i| x[reflect_index(i, x.len())])
        .collect()
}

/// Frame analysis and weighted overlap-add on an unpadded frame grid: frame `m`
/// covers samples `m·hop .. m·hop + n_fft`.
pub(crate) struct FrameTransform {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl FrameTransform {
    pub(crate) fn new(n_fft: usize, hop: usize) -> Result<Self> {
        check_params(n_fft, hop)?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_fft);
        let inverse = planner.plan_fft_inverse(n_fft);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            n_fft,
            hop,
            window: hann_periodic(n_fft),
            forward,
            inverse,
            scratch: vec![Complex::default(); scratch_len],
        })
    }

    pub(crate) fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Signal length covered by `frames` frames.
    pub(crate) fn span(&self, frames: usize) -> usize {
        self.n_fft + self.hop * frames.saturating_sub(1)
    }

    /// Complex spectra of `frames` windowed frames of `signal`, row-major.
    pub(crate) fn analyze(&mut self, signal: &[f64], frames: usize) -> Vec<Complex<f64>> {
        let (n, bins) = (self.n_fft, self.bins());
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::default(); n];
        for m in 0..frames {
            let start = m * self.hop;
            for i in 0..n {
                buf[i] = Complex::new(signal[start + i] * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut self.scratch);
            out.extend_from_slice(&buf[..bins]);
        }
        out
    }

    /// Window-sum-square weighted overlap-add: the least-squares signal whose
    /// frames best match `spectra`. Samples no frame constrains come out as 0.
    pub(crate) fn synthesize(&mut self, spectra: &[Complex<f64>], frames: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, bins) = (self.n_fft, self.bins());
        let len = self.span(frames);
        let mut signal = vec![0.0; len];
        let norm = self.window_sum_square(frames);
        let mut buf = vec![Complex::default(); n];
        for m in 0..frames {
            let row = &spectra[m * bins..(m + 1) * bins];
            buf[..bins].copy_from_slice(row);
            for k in 1..n - bins + 1 {
                buf[n - k] = row[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut self.scratch);
            let start = m * self.hop;
            for i in 0..n {
                signal[start + i] += buf[i].re / n as f64 * self.window[i];
            }
        }
        for (s, &w) in signal.iter_mut().zip(&norm) {
            *s = if w > 1e-10 { *s / w } else { 0.0 };
        }
        (signal, norm)
    }

    pub(crate) fn window_sum_square(&self, frames: usize) -> Vec<f64> {
        let mut norm = vec![0.0; self.span(frames)];
        for m in 0..frames {
            let start = m * self.hop;
            for (i, w) in self.window.iter().enumerate() {
                norm[start + i] += w * w;
            }
        }
        norm
    }
}

/// Centred STFT: the signal is reflect-padded by `n_fft/2` at both ends and
/// yields `1 + ⌊len/hop⌋` frames of `n_fft/2 + 1` bins.
pub fn stft(clip: &AudioClip, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    let mut tf = FrameTransform::new(n_fft, hop)?;
    let frames = 1 + clip.samples.len() / hop;
    let padded = reflect_pad(&clip.samples, n_fft / 2);
    let spectra = tf.analyze(&padded, frames);
    let bins = tf.bins();
    Ok(Spectrogram {
        magnitude: Matrix::new(frames, bins, spectra.iter().map(|c| c.norm()).collect())?,
        phase: Matrix::new(frames, bins, spectra.iter().map(|c| c.arg()).collect())?,
        n_fft,
        hop,
        sample_rate: clip.sample_rate,
    })
}

/// Inverse of [`stft`] by weighted overlap-add. The result has
/// `hop · (frames - 1)` samples unless `length` asks for another count.
pub fn istft(spec: &Spectrogram, length: Option<usize>) -> Result<AudioClip> {
    let mut tf = FrameTransform::new(spec.n_fft, spec.hop)?;
    if spec.magnitude.cols != tf.bins()
        || spec.phase.rows != spec.magnitude.rows
        || spec.phase.cols != spec.magnitude.cols
    {
        return Err(Error::Dimension(format!(
            "spectrogram of {}×{} bins for n_fft {}",
            spec.magnitude.rows, spec.magnitude.cols, spec.n_fft
        )));
    }
    let frames = spec.frames();
    let spectra: Vec<Complex<f64>> = spec
        .magnitude
        .data
        .iter()
        .zip(&spec.phase.data)
        .map(|(&m, &p)| Complex::from_polar(m, p))
        .collect();
    let (signal, norm) = tf.synthesize(&spectra, frames);
    let pad = spec.n_fft / 2;
    let len = length.unwrap_or(spec.hop * frames.saturating_sub(1));
    let end = (pad + len).min(signal.len());
    let peak = norm.iter().copied().fold(0.0, f64::max);
    if let Some(i) = (pad..end).find(|&i| norm[i] < 1e-8 * peak.max(1.0)) {
        return Err(Error::Parameter(format!(
            "window/hop pair ({}, {}) is not invertible: overlap-add normaliser vanishes at sample {}",
            spec.n_fft,
            spec.hop,
            i - pad
        )));
    }
    let mut samples = signal[pad..end].to_vec();
    samples.resize(len, 0.0);
    AudioClip::new(samples, spec.sample_rate)
}

use nalgebra::DMatrix;

use super::features::{MelFeatureMatrix, MelParams};
use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Power floor of the dB compression (−100 dB).
pub const DB_FLOOR_POWER: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

pub fn power_to_db(p: f64) -> f64 {
    10.0 * p.max(DB_FLOOR_POWER).log10()
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Triangular filters with mel-uniform centres, each scaled to a peak of 1.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// n_mels × (n_fft/2 + 1)
    pub weights: Matrix,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(Error::Parameter(format!(
                "mel range must satisfy 0 ≤ fmin < fmax ≤ {nyquist}, got [{fmin}, {fmax}]"
            )));
        }
        if n_mels == 0 || n_fft < 2 {
            return Err(Error::Parameter(format!("n_mels {n_mels}, n_fft {n_fft}")));
        }
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let mut weights = Matrix::zeros(n_mels, bins);
        for m in 0..n_mels {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = weights.row_mut(m);
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let rise = (f - left) / (centre - left);
                let fall = (right - f) / (right - centre);
                *w = rise.min(fall).max(0.0);
            }
            let peak = row.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                row.iter_mut().for_each(|w| *w /= peak);
            } else {
                log::warn!("mel filter {m} ({left:.1}–{right:.1} Hz) covers no FFT bin");
            }
        }
        Ok(Self {
            weights,
            sample_rate,
            n_fft,
            fmin,
            fmax,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows
    }

    pub fn bins(&self) -> usize {
        self.weights.cols
    }

    /// `power · weightsᵀ`: frames × bins to frames × n_mels.
    pub fn project(&self, power: &Matrix) -> Result<Matrix> {
        if power.cols != self.bins() {
            return Err(Error::Dimension(format!(
                "spectrogram has {} bins, filterbank expects {}",
                power.cols,
                self.bins()
            )));
        }
        let n_mels = self.n_mels();
        let mut out = Matrix::zeros(power.rows, n_mels);
        for f in 0..power.rows {
            let p = power.row(f);
            for m in 0..n_mels {
                out.data[f * n_mels + m] = self
                    .weights
                    .row(m)
                    .iter()
                    .zip(p)
                    .filter(|(w, _)| **w != 0.0)
                    .map(|(w, v)| w * v)
                    .sum();
            }
        }
        Ok(out)
    }

    /// Moore–Penrose pseudo-inverse, bins × n_mels.
    pub fn pseudo_inverse(&self) -> Result<Matrix> {
        let (n_mels, bins) = (self.n_mels(), self.bins());
        let a = DMatrix::from_row_slice(n_mels, bins, &self.weights.data);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin < 1e-10 * smax {
            return Err(Error::Numeric(format!(
                "mel filterbank is rank deficient (singular values {smin:e}..{smax:e}); \
                 use fewer mel bands or a larger n_fft"
            )));
        }
        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let mut data = Vec::with_capacity(bins * n_mels);
        for r in 0..bins {
            for c in 0..n_mels {
                data.push(pinv[(r, c)]);
            }
        }
        Matrix::new(bins, n_mels, data)
    }
}

/// Log-mel features (dB, unnormalised) of a magnitude spectrogram.
pub fn mel_spectrogram(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelFeatureMatrix> {
    let power = Matrix {
        rows: spec.magnitude.rows,
        cols: spec.magnitude.cols,
        data: spec.magnitude.data.iter().map(|m| m * m).collect(),
    };
    let mut mel = fb.project(&power)?;
    mel.data.iter_mut().for_each(|p| *p = power_to_db(*p));
    Ok(MelFeatureMatrix {
        frames: mel,
        norm: None,
        params: MelParams {
            sample_rate: spec.sample_rate,
            n_fft: spec.n_fft,
            hop: spec.hop,
            n_mels: fb.n_mels(),
            fmin: fb.fmin,
            fmax: fb.fmax,
        },
    })
}

/// Linear magnitude from mel-band power (frames × n_mels, not dB) through the
/// pseudo-inverse; negative power estimates are clamped to zero.
pub fn mel_to_linear(mel_power: &Matrix, fb: &MelFilterbank) -> Result<Matrix> {
    if mel_power.cols != fb.n_mels() {
        return Err(Error::Dimension(format!(
            "{} mel bands given, filterbank has {}",
            mel_power.cols,
            fb.n_mels()
        )));
    }
    let pinv = fb.pseudo_inverse()?;
    let (bins, n_mels) = (pinv.rows, pinv.cols);
    let mut out = Matrix::zeros(mel_power.rows, bins);
    for f in 0..mel_power.rows {
        let m = mel_power.row(f);
        let row = out.row_mut(f);
        for (k, slot) in row.iter_mut().enumerate() {
            let p: f64 = pinv.data[k * n_mels..(k + 1) * n_mels]
                .iter()
                .zip(m)
                .map(|(a, b)| a * b)
                .sum();
            *slot = p.max(0.0).sqrt();
        }
    }
    Ok(out)
}

//! Autoregressive rollout and rendering back to MIDI or audio.

mod sampler;

pub use sampler::{nucleus, sample, top_p_sample, Sampler, DEFAULT_TOP_P};

use std::path::Path;

use crate::audio::{
    db_to_power, denormalize, griffin_lim, mel_to_linear, save_wav, AudioClip, FeatureCache, MelFeatureMatrix,
    MelParams, DEFAULT_GRIFFIN_LIM_ITERS,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::midi::{write_smf, Vocabulary};
use crate::models::{Model, ModelInput};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::training::Checkpoint;

/// Default rollout lengths when none is configured.
pub const DEFAULT_TOKEN_LENGTH: usize = 200;
pub const DEFAULT_FRAME_LENGTH: usize = 400;

/// Samples `n` ids after `seed`, sliding the window by one each step.
pub fn generate_tokens(
    model: &Model,
    seed: &[usize],
    n: usize,
    sampler: Sampler,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let spec = &model.spec;
    if !spec.kind.is_symbolic() {
        return Err(Error::Spec(format!("{} does not generate tokens", spec.kind)));
    }
    if seed.len() != spec.seq_len {
        return Err(Error::Contract(format!(
            "seed window has {} ids, the model reads {}",
            seed.len(),
            spec.seq_len
        )));
    }
    let mut window = seed.to_vec();
    let mut out = Vec::with_capacity(n);
    let mut no_dropout = SeededRng::new(0);
    for _ in 0..n {
        let logits = model.forward(&ModelInput::Tokens(vec![window.clone()]), false, &mut no_dropout)?;
        let probs = logits.softmax_rows()?;
        let id = sample(probs.data(), sampler, rng)?;
        out.push(id);
        window.remove(0);
        window.push(id);
    }
    Ok(out)
}

/// Predicts `n` frames after `seed` (seq_len × features, normalised units).
/// The checkpoint must carry normalisation statistics.
pub fn generate_frames(ck: &Checkpoint, seed: &Matrix, n: usize) -> Result<Matrix> {
    if ck.norm()?.is_none() {
        return Err(Error::checkpoint(0, "checkpoint has no normalisation statistics"));
    }
    let model = ck.model()?;
    let spec = &model.spec;
    if spec.kind.is_symbolic() {
        return Err(Error::Spec(format!("{} does not generate frames", spec.kind)));
    }
    let d = spec.feature_dim;
    if seed.rows != spec.seq_len || seed.cols != d {
        return Err(Error::Dimension(format!(
            "seed is {}x{}, the model reads {}x{d}",
            seed.rows, seed.cols, spec.seq_len
        )));
    }
    let mut window = seed.data.clone();
    let mut out = Vec::with_capacity(n * d);
    let mut no_dropout = SeededRng::new(0);
    for _ in 0..n {
        let x = Tensor::new(&[1, spec.seq_len, d], window.clone())?;
        let y = model.forward(&ModelInput::Frames(x), false, &mut no_dropout)?;
        out.extend_from_slice(y.data());
        window.drain(..d);
        window.extend_from_slice(y.data());
    }
    Matrix::new(n, d, out)
}

pub fn render_symbolic(ids: &[usize], vocab: &Vocabulary, path: &Path) -> Result<()> {
    write_smf(ids, vocab, path)
}

/// Waveform for dB mel frames: dB to power, pseudo-inverse of the
/// filterbank, then Griffin-Lim.
pub fn db_frames_to_audio(db: &Matrix, params: &MelParams, rng: &mut SeededRng) -> Result<AudioClip> {
    let power = Matrix::new(db.rows, db.cols, db.data.iter().map(|&v| db_to_power(v)).collect())?;
    let mag = mel_to_linear(&power, &params.filterbank()?)?;
    let gl = griffin_lim(&mag, params.n_fft, params.hop, DEFAULT_GRIFFIN_LIM_ITERS, params.sample_rate, rng)?;
    Ok(gl.clip)
}

/// Normalised frames to a waveform using the checkpoint's statistics and
/// feature parameters. Also returns the dB frames.
pub fn frames_to_audio(frames: &Matrix, ck: &Checkpoint, rng: &mut SeededRng) -> Result<(AudioClip, Matrix)> {
    let norm = ck
        .norm()?
        .ok_or_else(|| Error::checkpoint(0, "checkpoint has no normalisation statistics"))?;
    let params = ck
        .mel()?
        .ok_or_else(|| Error::checkpoint(0, "checkpoint has no feature parameters"))?;
    let db = denormalize(&MelFeatureMatrix { frames: frames.clone(), norm: Some(norm), params })?.frames;
    Ok((db_frames_to_audio(&db, &params, rng)?, db))
}

/// Writes the waveform for `frames` to `wav`, and the dB mel frames as a
/// feature cache to `features` when given.
pub fn render_audio(
    frames: &Matrix,
    ck: &Checkpoint,
    wav: &Path,
    features: Option<&Path>,
    rng: &mut SeededRng,
) -> Result<AudioClip> {
    let (clip, db) = frames_to_audio(frames, ck, rng)?;
    save_wav(&clip, wav)?;
    if let Some(path) = features {
        let params = ck.mel()?.expect("checked by frames_to_audio");
        FeatureCache::new(params, false, &[db])?.save(path)?;
    }
    Ok(clip)
}

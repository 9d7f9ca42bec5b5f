//! Waveform I/O, the log-mel feature pipeline and its inverse.

mod features;
mod griffin_lim;
mod mel;
mod stft;
mod wav;

pub use features::{
    denormalize, extract_features, normalize, FeatureCache, MelFeatureMatrix, MelParams,
    NormMode, NormStats, STD_FLOOR,
};
pub use griffin_lim::{griffin_lim, GriffinLimOutput, DEFAULT_GRIFFIN_LIM_ITERS};
pub use mel::{
    db_to_power, hz_to_mel, mel_spectrogram, mel_to_hz, mel_to_linear, power_to_db,
    MelFilterbank, DB_FLOOR_POWER,
};
pub use stft::{hann_periodic, istft, stft, Spectrogram};
pub use wav::{decode_wav, encode_wav, load_wav, resample_linear, save_wav, AudioClip};

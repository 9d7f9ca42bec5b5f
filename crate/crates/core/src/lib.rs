//! Music generation toolkit: MIDI and WAV preprocessing, a small reverse-mode
//! autodiff engine, recurrent/attention/transformer sequence models, training
//! and autoregressive generation back to MIDI or audio.

pub mod audio;
pub mod codec;
pub mod error;
pub mod generation;
pub mod matrix;
pub mod midi;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use codec::KeyValues;
pub use error::{read_file, write_file, Error, Result};
pub use rng::SeededRng;
pub use matrix::Matrix;
pub use tensor::{ParameterSet, Tensor};

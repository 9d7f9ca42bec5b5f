//! Recurrent, attention and transformer sequence models.

mod arch;
mod gradcheck;
mod layers;
mod spec;

pub use arch::{build_params, forward, piano_transformer_logits, Model, ModelInput};
pub use gradcheck::{gradcheck_suite, NamedReport, GRADCHECK_TOLERANCE};
pub use layers::{
    additive_attention, attention_layer, bilstm_forward, glorot_uniform, lstm_cell, lstm_forward,
    multi_head_attention, scaled_dot_attention, AttentionParams, AttentionTrace, Dense, LayerNorm, LstmParams,
    MhaParams,
};
pub use spec::{ModelKind, ModelSpec, OutputKind};

#[cfg(test)]
mod tests;

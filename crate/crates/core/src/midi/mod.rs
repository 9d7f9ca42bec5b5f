//! Standard MIDI File reading and writing, note/chord extraction and the
//! token vocabulary.

mod notes;
mod smf;
mod vocab;

use std::path::Path;

pub use notes::{flatten_notes, parse_token, tokenize, Flattened, MidiWarning, NoteEvent};
pub use smf::{decode_vlq, encode_smf, encode_vlq, parse_smf, EventKind, MidiFile, TrackEvent, WRITE_DIVISION};
pub use vocab::{
    build_vocabulary, load_token_corpus, parse_token_corpus, save_token_corpus, token_corpus_to_text, TokenSequence,
    Vocabulary,
};

use crate::error::{read_file, write_file, Result};

/// Tokens of one SMF byte stream, plus any pairing warnings.
pub fn tokens_from_smf(bytes: &[u8]) -> Result<(Vec<String>, Vec<MidiWarning>)> {
    let flat = flatten_notes(&parse_smf(bytes)?);
    Ok((tokenize(&flat.notes), flat.warnings))
}

pub fn load_midi_tokens(path: &Path) -> Result<(Vec<String>, Vec<MidiWarning>)> {
    tokens_from_smf(&read_file(path)?)
}

/// SMF bytes for a token sequence (see [`encode_smf`] for the rhythm).
pub fn smf_from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<u8>> {
    let chords = tokens
        .iter()
        .map(|t| parse_token(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    encode_smf(&chords)
}

/// Decodes `ids` and writes them as a format-0 MIDI file.
pub fn write_smf(ids: &[usize], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let tokens = vocab.decode(ids)?;
    write_file(path, &smf_from_tokens(&tokens)?)
}

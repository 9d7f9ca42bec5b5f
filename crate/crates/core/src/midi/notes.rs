use std::collections::{HashMap, VecDeque};
use std::fmt;

use super::smf::{EventKind, MidiFile};
use crate::error::{Error, Result};

/// A note or chord: every pitch that starts on the same tick.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoteEvent {
    pub onset: u64,
    /// Ascending, no duplicates, never empty.
    pub pitches: Vec<u8>,
    /// Ticks, at least 1.
    pub duration: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MidiWarning {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for MidiWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "byte {}: {}", self.offset, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Flattened {
    pub notes: Vec<NoteEvent>,
    pub warnings: Vec<MidiWarning>,
}

/// Pairs note-on/off per (channel, pitch) in FIFO order, drops every other
/// event, merges tracks and folds same-tick onsets into chords.
pub fn flatten_notes(file: &MidiFile) -> Flattened {
    let mut warnings = Vec::new();
    let mut single: Vec<(u64, u8, u64)> = Vec::new();
    for track in &file.tracks {
        let mut open: HashMap<(u8, u8), VecDeque<(u64, usize)>> = HashMap::new();
        for e in track {
            match e.kind {
                EventKind::NoteOn { channel, pitch, .. } => {
                    open.entry((channel, pitch)).or_default().push_back((e.tick, e.offset));
                }
                EventKind::NoteOff { channel, pitch } => {
                    match open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                        Some((onset, _)) => single.push((onset, pitch, (e.tick - onset).max(1))),
                        None => warnings.push(MidiWarning {
                            offset: e.offset,
                            message: format!("note-off for pitch {pitch} on channel {channel} without a note-on"),
                        }),
                    }
                }
                _ => {}
            }
        }
        let mut dangling: Vec<_> = open
            .into_iter()
            .flat_map(|((channel, pitch), q)| q.into_iter().map(move |(t, o)| (channel, pitch, t, o)))
            .collect();
        dangling.sort_by_key(|d| d.3);
        for (channel, pitch, onset, offset) in dangling {
            warnings.push(MidiWarning {
                offset,
                message: format!("note-on for pitch {pitch} on channel {channel} never released; closed after 1 tick"),
            });
            single.push((onset, pitch, 1));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    single.sort();
    let mut notes: Vec<NoteEvent> = Vec::new();
    for (onset, pitch, duration) in single {
        match notes.last_mut() {
            Some(last) if last.onset == onset => {
                if last.pitches.last() != Some(&pitch) {
                    last.pitches.push(pitch);
                }
                last.duration = last.duration.max(duration);
            }
            _ => notes.push(NoteEvent { onset, pitches: vec![pitch], duration }),
        }
    }
    Flattened { notes, warnings }
}

/// `"60"` for a single pitch, `"60.64.67"` for a chord.
pub fn tokenize(events: &[NoteEvent]) -> Vec<String> {
    events
        .iter()
        .map(|e| e.pitches.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("."))
        .collect()
}

/// Pitches of a token; they must be ascending MIDI note numbers.
pub fn parse_token(token: &str) -> Result<Vec<u8>> {
    let bad = || Error::Vocabulary(format!("token {token:?} is not a pitch or dot-joined chord"));
    let pitches: Vec<u8> = token
        .split('.')
        .map(|s| {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            s.parse::<u8>().ok().filter(|&p| p <= 127).ok_or_else(bad)
        })
        .collect::<Result<_>>()?;
    if pitches.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad());
    }
    Ok(pitches)
}

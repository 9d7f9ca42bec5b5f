use crate::error::{Error, Result};

/// Ticks per quarter note of written files.
pub const WRITE_DIVISION: u16 = 480;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
    /// Any other channel message (controllers, program change, pitch bend...).
    Channel { status: u8 },
    Meta { kind: u8 },
    SysEx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackEvent {
    /// Absolute time in ticks.
    pub tick: u64,
    /// Byte offset of the event's delta-time in the file.
    pub offset: usize,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MidiFile {
    pub format: u16,
    /// Ticks per quarter note.
    pub division: u16,
    pub tracks: Vec<Vec<TrackEvent>>,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::parse("MIDI", offset, message)
}

/// Cursor bounded by a chunk, so reads never leave the declared length.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn byte(&mut self, what: &str) -> Result<u8> {
        if self.pos >= self.end {
            return Err(err(self.pos, format!("unexpected end of chunk reading {what}")));
        }
        self.pos += 1;
        Ok(self.bytes[self.pos - 1])
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.end - self.pos < n {
            return Err(err(self.pos, format!("truncated {what}: need {n} bytes, {} left", self.end - self.pos)));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.byte("variable-length quantity")?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(err(start, "variable-length quantity longer than 4 bytes"))
    }

    fn data_byte(&mut self) -> Result<u8> {
        let at = self.pos;
        let b = self.byte("event data")?;
        if b & 0x80 != 0 {
            return Err(err(at, format!("expected a data byte, found status 0x{b:02X}")));
        }
        Ok(b)
    }
}

/// Decodes a variable-length quantity from the start of `bytes`, returning
/// the value and the number of bytes consumed.
pub fn decode_vlq(bytes: &[u8]) -> Result<(u32, usize)> {
    let mut c = Cursor { bytes, pos: 0, end: bytes.len() };
    let v = c.vlq()?;
    Ok((v, c.pos))
}

pub fn encode_vlq(value: u32) -> Result<Vec<u8>> {
    if value > 0x0FFF_FFFF {
        return Err(Error::Parameter(format!("{value} does not fit a 4-byte VLQ")));
    }
    let mut out = vec![(value & 0x7F) as u8];
    let mut v = value >> 7;
    while v > 0 {
        out.push(((v & 0x7F) as u8) | 0x80);
        v >>= 7;
    }
    out.reverse();
    Ok(out)
}

/// Parses a format 0 or 1 Standard MIDI File.
pub fn parse_smf(bytes: &[u8]) -> Result<MidiFile> {
    let mut c = Cursor { bytes, pos: 0, end: bytes.len() };
    if c.take(4, "header magic")? != b"MThd" {
        return Err(err(0, "bad magic, expected MThd"));
    }
    let header_len = c.u32("header length")? as usize;
    if header_len < 6 {
        return Err(err(4, format!("header length {header_len} is shorter than 6")));
    }
    let header_end = c
        .pos
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err(4, format!("header length {header_len} runs past end of file")))?;
    let format = c.u16("format")?;
    if format > 1 {
        return Err(err(8, format!("unsupported SMF format {format}")));
    }
    let ntracks = c.u16("track count")?;
    if format == 0 && ntracks != 1 {
        return Err(err(10, format!("format 0 file declares {ntracks} tracks")));
    }
    let division = c.u16("division")?;
    if division & 0x8000 != 0 || division == 0 {
        return Err(err(12, format!("unsupported division 0x{division:04X}")));
    }
    c.pos = header_end;

    let mut tracks = Vec::with_capacity(ntracks as usize);
    while tracks.len() < ntracks as usize {
        let chunk_at = c.pos;
        let id = c.take(4, "chunk id")?;
        let len = c.u32("chunk length")? as usize;
        let body = c.pos;
        if bytes.len() - body < len {
            return Err(err(chunk_at, format!("chunk declares {len} bytes, only {} remain", bytes.len() - body)));
        }
        if id == b"MTrk" {
            tracks.push(parse_track(bytes, body, body + len)?);
        }
        c.pos = body + len;
    }
    Ok(MidiFile { format, division, tracks })
}

fn parse_track(bytes: &[u8], start: usize, end: usize) -> Result<Vec<TrackEvent>> {
    let mut c = Cursor { bytes, pos: start, end };
    let mut events = Vec::new();
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    while c.pos < c.end {
        let offset = c.pos;
        tick += c.vlq()? as u64;
        let status_at = c.pos;
        let lead = c.byte("status")?;
        let kind = match lead {
            0xFF => {
                running = None;
                let kind = c.byte("meta type")?;
                let len = c.vlq()? as usize;
                c.take(len, "meta payload")?;
                if kind == 0x2F {
                    events.push(TrackEvent { tick, offset, kind: EventKind::Meta { kind } });
                    return Ok(events);
                }
                EventKind::Meta { kind }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = c.vlq()? as usize;
                c.take(len, "sysex payload")?;
                EventKind::SysEx
            }
            0xF1..=0xFE => return Err(err(status_at, format!("system message 0x{lead:02X} inside a track"))),
            _ => {
                let (status, first) = if lead & 0x80 != 0 {
                    running = Some(lead);
                    (lead, c.data_byte()?)
                } else {
                    let status = running.ok_or_else(|| err(status_at, "data byte without running status"))?;
                    (status, lead)
                };
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 => {
                        c.data_byte()?;
                        EventKind::NoteOff { channel, pitch: first }
                    }
                    0x90 => {
                        let velocity = c.data_byte()?;
                        if velocity == 0 {
                            EventKind::NoteOff { channel, pitch: first }
                        } else {
                            EventKind::NoteOn { channel, pitch: first, velocity }
                        }
                    }
                    0xC0 | 0xD0 => EventKind::Channel { status },
                    _ => {
                        c.data_byte()?;
                        EventKind::Channel { status }
                    }
                }
            }
        };
        events.push(TrackEvent { tick, offset, kind });
    }
    Ok(events)
}

/// Format-0 file with one chord per entry: onsets every half quarter note,
/// each chord held for half a quarter note at velocity 90.
pub fn encode_smf(chords: &[Vec<u8>]) -> Result<Vec<u8>> {
    const STEP: u32 = WRITE_DIVISION as u32 / 2;
    const VELOCITY: u8 = 90;
    let mut track = Vec::new();
    let mut last_tick = 0u32;
    let mut emit = |track: &mut Vec<u8>, tick: u32, event: &[u8]| -> Result<()> {
        track.extend(encode_vlq(tick - last_tick)?);
        track.extend_from_slice(event);
        last_tick = tick;
        Ok(())
    };
    // 120 bpm
    emit(&mut track, 0, &[0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20])?;
    for (i, chord) in chords.iter().enumerate() {
        let onset = u32::try_from(i)
            .ok()
            .and_then(|i| i.checked_mul(STEP))
            .ok_or_else(|| Error::Parameter("sequence too long for a MIDI file".into()))?;
        if let Some(prev) = i.checked_sub(1).map(|j| &chords[j]) {
            for &p in prev {
                emit(&mut track, onset, &[0x80, p, 0])?;
            }
        }
        for &p in chord {
            if p > 127 {
                return Err(Error::Parameter(format!("pitch {p} outside 0..=127")));
            }
            emit(&mut track, onset, &[0x90, p, VELOCITY])?;
        }
    }
    let end = chords.len() as u32 * STEP;
    if let Some(last) = chords.last() {
        for &p in last {
            emit(&mut track, end, &[0x80, p, 0])?;
        }
    }
    emit(&mut track, end, &[0xFF, 0x2F, 0x00])?;

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

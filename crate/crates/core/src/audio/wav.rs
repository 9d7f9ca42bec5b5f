use std::path::Path;

use crate::error::{read_file, write_file, Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample {bad}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                "WAV",
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    block_align: u16,
}

/// Parses a RIFF/WAVE byte stream (PCM16 or float32, mono or stereo) into a
/// mono clip at the file's own sample rate.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF magic")? != b"RIFF" {
        return Err(Error::parse("WAV", 0, "missing RIFF magic"));
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(Error::parse("WAV", 8, "missing WAVE tag"));
    }

    let mut format: Option<Format> = None;
    loop {
        if r.pos == bytes.len() {
            return Err(Error::parse("WAV", r.pos, "no data chunk"));
        }
        let chunk_start = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        let body_start = r.pos;
        if bytes.len() - body_start < size {
            let what = if id == b"data" { "data chunk" } else { "chunk" };
            return Err(Error::parse(
                "WAV",
                chunk_start,
                format!("truncated {what}: declares {size} bytes, {} present", bytes.len() - body_start),
            ));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => format = Some(parse_fmt(body, body_start)?),
            b"data" => {
                let fmt = format
                    .as_ref()
                    .ok_or_else(|| Error::parse("WAV", chunk_start, "data chunk before fmt chunk"))?;
                let samples = decode_samples(body, fmt, body_start)?;
                return AudioClip::new(samples, fmt.sample_rate);
            }
            _ => {}
        }
        // Chunks are word aligned.
        r.pos = body_start + size + (size & 1);
        if r.pos > bytes.len() {
            r.pos = bytes.len();
        }
    }
}

fn parse_fmt(body: &[u8], offset: usize) -> Result<Format> {
    if body.len() < 16 {
        return Err(Error::parse("WAV", offset, "fmt chunk shorter than 16 bytes"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([body[i], body[i + 1], body[i + 2], body[i + 3]]);
    let mut codec = u16_at(0);
    if codec == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(Error::parse("WAV", offset, "extensible fmt chunk too short"));
        }
        codec = u16_at(24);
    }
    let fmt = Format {
        codec,
        channels: u16_at(2),
        sample_rate: u32_at(4),
        block_align: u16_at(12),
        bits: u16_at(14),
    };
    let supported = matches!((fmt.codec, fmt.bits), (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32));
    if !supported {
        return Err(Error::parse(
            "WAV",
            offset,
            format!("unsupported codec {} with {} bits", fmt.codec, fmt.bits),
        ));
    }
    if !(1..=2).contains(&fmt.channels) {
        return Err(Error::parse(
            "WAV",
            offset + 2,
            format!("unsupported channel count {}", fmt.channels),
        ));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::parse("WAV", offset + 4, "sample rate is zero"));
    }
    if fmt.block_align as usize != fmt.channels as usize * fmt.bits as usize / 8 {
        return Err(Error::parse("WAV", offset + 12, "inconsistent block alignment"));
    }
    Ok(fmt)
}

fn decode_samples(body: &[u8], fmt: &Format, offset: usize) -> Result<Vec<f64>> {
    let frame = fmt.block_align as usize;
    if body.len() % frame != 0 {
        return Err(Error::parse(
            "WAV",
            offset + body.len() - body.len() % frame,
            "truncated data chunk: partial sample frame",
        ));
    }
    let width = fmt.bits as usize / 8;
    let channels = fmt.channels as usize;
    let mut out = Vec::with_capacity(body.len() / frame);
    for (i, f) in body.chunks_exact(frame).enumerate() {
        let mut acc = 0.0;
        for c in 0..channels {
            let b = &f[c * width..(c + 1) * width];
            let v = if fmt.codec == FORMAT_PCM {
                i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0
            } else {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                if !v.is_finite() {
                    return Err(Error::parse(
                        "WAV",
                        offset + i * frame + c * width,
                        "non-finite float sample",
                    ));
                }
                v.clamp(-1.0, 1.0)
            };
            acc += v;
        }
        out.push(acc / channels as f64);
    }
    Ok(out)
}

/// Reads a WAV file, downmixes to mono and resamples to `sample_rate`.
pub fn load_wav(path: &Path, sample_rate: u32) -> Result<AudioClip> {
    let clip = decode_wav(&read_file(path)?)?;
    if clip.sample_rate == sample_rate {
        Ok(clip)
    } else {
        resample_linear(&clip, sample_rate)
    }
}

/// Linear-interpolation resampler; output length is `⌊len · to / from⌋`.
pub fn resample_linear(clip: &AudioClip, sample_rate: u32) -> Result<AudioClip> {
    if sample_rate == 0 {
        return Err(Error::Parameter("target sample rate must be positive".into()));
    }
    let (from, to) = (clip.sample_rate as u64, sample_rate as u64);
    let n = clip.samples.len();
    let out_len = (n as u64 * to / from) as usize;
    let step = from as f64 / to as f64;
    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = (pos.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let frac = pos - i0 as f64;
            clip.samples[i0] * (1.0 - frac) + clip.samples[i1] * frac
        })
        .collect();
    AudioClip::new(out, sample_rate)
}

/// 16-bit PCM mono encoding; samples are clamped to `[-1, 1]` first.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn save_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    write_file(path, &encode_wav(clip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn pcm16_file(channels: u16, rate: u32, frames: &[Vec<i16>]) -> Vec<u8> {
        let data_len = frames.len() * channels as usize * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * channels as u32 * 2).to_le_bytes());
        out.extend_from_slice(&(channels * 2).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for f in frames {
            for s in f {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    fn dominant_frequency(samples: &[f64], rate: u32) -> f64 {
        let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let (k, _) = buf[..buf.len() / 2]
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.norm()))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        k as f64 * rate as f64 / samples.len() as f64
    }

    #[test]
    fn one_second_of_silence() {
        let bytes = pcm16_file(1, 22050, &vec![vec![0]; 22050]);
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples.len(), 22050);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn most_negative_pcm_maps_to_minus_one() {
        let clip = decode_wav(&pcm16_file(1, 8000, &[vec![-32768], vec![16384]])).unwrap();
        assert_eq!(clip.samples, vec![-1.0, 0.5]);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = decode_wav(&pcm16_file(2, 8000, &[vec![16384, 0]])).unwrap();
        assert_eq!(clip.samples, vec![0.25]);
    }

    #[test]
    fn float32_files_decode() {
        let mut bytes = pcm16_file(1, 8000, &[]);
        // rewrite as IEEE float, 4-byte samples
        bytes[20..22].copy_from_slice(&3u16.to_le_bytes());
        bytes[28..32].copy_from_slice(&32000u32.to_le_bytes());
        bytes[32..34].copy_from_slice(&4u16.to_le_bytes());
        bytes[34..36].copy_from_slice(&32u16.to_le_bytes());
        bytes[40..44].copy_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&0.25f32.to_le_bytes());
        bytes.extend_from_slice(&(-0.5f32).to_le_bytes());
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn resampling_halves_length_and_keeps_pitch() {
        let rate = 44100;
        let f0 = 441.0;
        let samples: Vec<f64> = (0..rate)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / rate as f64).sin() * 0.5)
            .collect();
        let clip = AudioClip::new(samples, rate).unwrap();
        let out = resample_linear(&clip, 22050).unwrap();
        assert!((out.samples.len() as i64 - 22050).abs() <= 1);
        let f = dominant_frequency(&out.samples, 22050);
        assert!((f - f0).abs() / f0 < 0.01, "dominant {f}");
    }

    #[test]
    fn round_trip_within_one_step() {
        let mut rng = SeededRng::new(4);
        let samples: Vec<f64> = (0..5000).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let clip = AudioClip::new(samples, 22050).unwrap();
        let back = decode_wav(&encode_wav(&clip)).unwrap();
        assert_eq!(back.samples.len(), clip.samples.len());
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn clamping_and_empty_clip() {
        let clip = AudioClip::new(vec![1.5, -3.0], 8000).unwrap();
        let bytes = encode_wav(&clip);
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32768);

        let empty = encode_wav(&AudioClip::new(vec![], 22050).unwrap());
        assert_eq!(empty.len(), 44);
        assert!(decode_wav(&empty).unwrap().samples.is_empty());
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let good = pcm16_file(1, 8000, &[vec![1], vec![2]]);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_wav(&bad), Err(Error::Parse { offset: 0, .. })));

        let truncated = &good[..good.len() - 1];
        match decode_wav(truncated) {
            Err(Error::Parse { offset, message, .. }) => {
                assert_eq!(offset, 36);
                assert!(message.contains("data chunk"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut mulaw = good.clone();
        mulaw[20] = 7;
        assert!(matches!(decode_wav(&mulaw), Err(Error::Parse { offset: 20, .. })));
    }

    #[test]
    fn fuzzed_bytes_never_panic() {
        let good = pcm16_file(2, 8000, &vec![vec![100, -100]; 64]);
        let mut rng = SeededRng::new(77);
        for _ in 0..1000 {
            let mut bytes = good.clone();
            match rng.below(3) {
                0 => bytes.truncate(rng.below(good.len())),
                1 => {
                    for _ in 0..1 + rng.below(4) {
                        let i = rng.below(bytes.len());
                        bytes[i] = rng.next_u64() as u8;
                    }
                }
                _ => {
                    let i = rng.below(bytes.len());
                    bytes[i] ^= 0xFF;
                    bytes.truncate(i + rng.below(bytes.len() - i + 1));
                }
            }
            let _ = decode_wav(&bytes);
        }
    }
}

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::mel::{mel_spectrogram, MelFilterbank};
use super::stft::stft;
use super::wav::AudioClip;
use crate::codec::{join_f64, put_f32s, put_u32, split_f64, to_u32, KeyValues, LeReader};
use crate::error::{read_file, write_file, Error, Result};
use crate::matrix::Matrix;

/// Smallest standard deviation used when z-scoring.
pub const STD_FLOOR: f64 = 1e-8;

const CACHE_MAGIC: &[u8; 4] = b"TFMF";
const CACHE_VERSION: u32 = 1;

/// Front-end settings of the log-mel pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            fmin: 0.0,
            fmax: 11025.0,
        }
    }
}

impl MelParams {
    pub fn filterbank(&self) -> Result<MelFilterbank> {
        MelFilterbank::new(self.sample_rate, self.n_fft, self.n_mels, self.fmin, self.fmax)
    }

    pub fn write_keys(&self, kv: &mut KeyValues) {
        kv.set("sample_rate", self.sample_rate);
        kv.set("n_fft", self.n_fft);
        kv.set("hop", self.hop);
        kv.set("n_mels", self.n_mels);
        kv.set("fmin", self.fmin);
        kv.set("fmax", self.fmax);
    }

    /// Absent keys take the defaults; an absent `fmax` is the Nyquist frequency.
    pub fn from_keys(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let sample_rate = kv.get_or("sample_rate", d.sample_rate)?;
        Ok(Self {
            sample_rate,
            n_fft: kv.get_or("n_fft", d.n_fft)?,
            hop: kv.get_or("hop", d.hop)?,
            n_mels: kv.get_or("n_mels", d.n_mels)?,
            fmin: kv.get_or("fmin", d.fmin)?,
            fmax: kv.get_or("fmax", sample_rate as f64 / 2.0)?,
        })
    }

    /// Frames produced for a clip of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Log-mel frames (time × n_mels), in dB or normalised units.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFeatureMatrix {
    pub frames: Matrix,
    /// Present iff `frames` are normalised; holds what [`denormalize`] needs.
    pub norm: Option<NormStats>,
    pub params: MelParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Mean,
    Zscore,
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Mean => "mean",
            NormMode::Zscore => "zscore",
        })
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(NormMode::Mean),
            "zscore" => Ok(NormMode::Zscore),
            other => Err(Error::Config(format!("unknown normalisation {other:?} (mean|zscore)"))),
        }
    }
}

/// Per-mel-bin statistics of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mode: NormMode,
    pub mean: Vec<f64>,
    /// Already floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl NormStats {
    /// Column statistics over every row of every matrix.
    pub fn fit(mode: NormMode, corpus: &[&Matrix]) -> Result<Self> {
        let cols = corpus.first().map_or(0, |m| m.cols);
        if corpus.iter().any(|m| m.cols != cols) {
            return Err(Error::Dimension("corpus matrices differ in width".into()));
        }
        let n: usize = corpus.iter().map(|m| m.rows).sum();
        if n == 0 {
            return Err(Error::Data("cannot compute statistics of an empty corpus".into()));
        }
        let mut mean = vec![0.0; cols];
        for m in corpus {
            for r in 0..m.rows {
                mean.iter_mut().zip(m.row(r)).for_each(|(a, v)| *a += v);
            }
        }
        mean.iter_mut().for_each(|a| *a /= n as f64);
        let mut var = vec![0.0; cols];
        for m in corpus {
            for r in 0..m.rows {
                for ((a, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
        }
        let std = var
            .iter()
            .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mode, mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn write_keys(&self, kv: &mut KeyValues) {
        kv.set("norm_mode", self.mode);
        kv.set("norm_mean", join_f64(&self.mean));
        kv.set("norm_std", join_f64(&self.std));
    }

    /// `None` when the block carries no statistics.
    pub fn from_keys(kv: &KeyValues) -> Result<Option<Self>> {
        let Some(mode) = kv.get("norm_mode") else {
            return Ok(None);
        };
        let mean = split_f64(kv.get("norm_mean").unwrap_or(""), "norm_mean")?;
        let std = split_f64(kv.get("norm_std").unwrap_or(""), "norm_std")?;
        if mean.len() != std.len() {
            return Err(Error::Config(format!(
                "norm_mean has {} entries but norm_std has {}",
                mean.len(),
                std.len()
            )));
        }
        Ok(Some(Self { mode: mode.parse()?, mean, std }))
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        self.write_keys(&mut kv);
        kv.to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_keys(&KeyValues::parse(text)?)?
            .ok_or_else(|| Error::Config("statistics file has no norm_mode".into()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text)
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if self.width() != cols {
            return Err(Error::Dimension(format!(
                "statistics cover {} mel bins, features have {cols}",
                self.width()
            )));
        }
        Ok(())
    }

    /// Normalises a raw dB matrix in place.
    pub fn apply(&self, m: &mut Matrix) -> Result<()> {
        self.check_width(m.cols)?;
        for r in 0..m.rows {
            for ((v, mu), sd) in m.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v -= mu;
                if self.mode == NormMode::Zscore {
                    *v /= sd;
                }
            }
        }
        Ok(())
    }

    /// Inverse of [`NormStats::apply`].
    pub fn invert(&self, m: &mut Matrix) -> Result<()> {
        self.check_width(m.cols)?;
        for r in 0..m.rows {
            for ((v, mu), sd) in m.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                if self.mode == NormMode::Zscore {
                    *v *= sd;
                }
                *v += mu;
            }
        }
        Ok(())
    }
}

/// Normalises with the given corpus statistics, or with statistics of `m`
/// itself when none are given.
pub fn normalize(m: &MelFeatureMatrix, mode: NormMode, stats: Option<&NormStats>) -> Result<MelFeatureMatrix> {
    if m.norm.is_some() {
        return Err(Error::Contract("features are already normalised".into()));
    }
    let stats = match stats {
        Some(s) => {
            if s.mode != mode {
                return Err(Error::Parameter(format!("statistics are for {} mode, {mode} requested", s.mode)));
            }
            s.clone()
        }
        None => NormStats::fit(mode, &[&m.frames])?,
    };
    let mut frames = m.frames.clone();
    stats.apply(&mut frames)?;
    Ok(MelFeatureMatrix {
        frames,
        norm: Some(stats),
        params: m.params,
    })
}

/// Back to dB using the stored statistics; unnormalised input is returned as is.
pub fn denormalize(m: &MelFeatureMatrix) -> Result<MelFeatureMatrix> {
    let mut frames = m.frames.clone();
    if let Some(stats) = &m.norm {
        stats.invert(&mut frames)?;
    }
    Ok(MelFeatureMatrix {
        frames,
        norm: None,
        params: m.params,
    })
}

/// Log-mel features of one clip, which must already be at `params.sample_rate`.
pub fn extract_features(clip: &AudioClip, params: &MelParams, fb: &MelFilterbank) -> Result<MelFeatureMatrix> {
    if clip.sample_rate != params.sample_rate {
        return Err(Error::Parameter(format!(
            "clip is at {} Hz, features expect {} Hz",
            clip.sample_rate, params.sample_rate
        )));
    }
    if fb.n_fft != params.n_fft || fb.n_mels() != params.n_mels {
        return Err(Error::Dimension("filterbank does not match the feature parameters".into()));
    }
    let spec = stft(clip, params.n_fft, params.hop)?;
    let mut out = mel_spectrogram(&spec, fb)?;
    out.params = *params;
    Ok(out)
}

/// Concatenated per-file feature rows with the file boundaries kept.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub params: MelParams,
    pub normalized: bool,
    /// Frame count of each source file, in order.
    pub segments: Vec<usize>,
    pub frames: Matrix,
}

impl FeatureCache {
    pub fn new(params: MelParams, normalized: bool, parts: &[Matrix]) -> Result<Self> {
        if parts.iter().any(|m| m.cols != params.n_mels) {
            return Err(Error::Dimension(format!("feature rows must have {} mel bins", params.n_mels)));
        }
        Ok(Self {
            params,
            normalized,
            segments: parts.iter().map(|m| m.rows).collect(),
            frames: if parts.is_empty() {
                Matrix::zeros(0, params.n_mels)
            } else {
                Matrix::vstack(parts)?
            },
        })
    }

    /// One matrix per source file.
    pub fn segment_matrices(&self) -> Vec<Matrix> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|&n| {
                let m = self.frames.slice_rows(start, start + n);
                start += n;
                m
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let mut out = Vec::with_capacity(64 + 4 * self.frames.data.len());
        out.extend_from_slice(CACHE_MAGIC);
        put_u32(&mut out, CACHE_VERSION);
        put_u32(&mut out, p.sample_rate);
        put_u32(&mut out, to_u32(p.n_fft, "n_fft")?);
        put_u32(&mut out, to_u32(p.hop, "hop")?);
        put_u32(&mut out, to_u32(p.n_mels, "n_mels")?);
        out.extend_from_slice(&p.fmin.to_le_bytes());
        out.extend_from_slice(&p.fmax.to_le_bytes());
        out.push(self.normalized as u8);
        put_u32(&mut out, to_u32(self.segments.len(), "segment count")?);
        for &s in &self.segments {
            put_u32(&mut out, to_u32(s, "segment length")?);
        }
        put_u32(&mut out, to_u32(self.frames.rows, "frame count")?);
        put_f32s(&mut out, &self.frames.data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::new(bytes, |offset, message| Error::Parse {
            format: "feature cache",
            offset,
            message,
        });
        if r.take(4, "magic")? != CACHE_MAGIC {
            return Err(Error::parse("feature cache", 0, "bad magic, expected TFMF"));
        }
        let version = r.u32("version")?;
        if version != CACHE_VERSION {
            return Err(Error::parse("feature cache", 4, format!("unsupported version {version}")));
        }
        let params = MelParams {
            sample_rate: r.u32("sample rate")?,
            n_fft: r.u32("n_fft")? as usize,
            hop: r.u32("hop")? as usize,
            n_mels: r.u32("n_mels")? as usize,
            fmin: r.f64("fmin")?,
            fmax: r.f64("fmax")?,
        };
        let normalized = match r.u8("normalised flag")? {
            0 => false,
            1 => true,
            v => return Err(r.error(format!("normalised flag must be 0 or 1, got {v}"))),
        };
        let count = r.u32("segment count")? as usize;
        if count > r.remaining() / 4 {
            return Err(r.error(format!("segment count {count} exceeds file size")));
        }
        let segments: Vec<usize> = (0..count)
            .map(|_| r.u32("segment length").map(|v| v as usize))
            .collect::<Result<_>>()?;
        let rows_at = r.pos();
        let rows = r.u32("frame count")? as usize;
        if segments.iter().sum::<usize>() != rows {
            return Err(Error::parse(
                "feature cache",
                rows_at,
                format!("segments sum to {} frames, header says {rows}", segments.iter().sum::<usize>()),
            ));
        }
        let n = rows
            .checked_mul(params.n_mels)
            .ok_or_else(|| r.error("frame block size overflows"))?;
        let data = r.f32s(n, "frame data")?;
        r.expect_end()?;
        Ok(Self {
            params,
            normalized,
            segments,
            frames: Matrix::new(rows, params.n_mels, data)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::new(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-80.0, 10.0)).collect()).unwrap()
    }

    fn features(frames: Matrix) -> MelFeatureMatrix {
        MelFeatureMatrix {
            params: MelParams { n_mels: frames.cols, ..MelParams::default() },
            frames,
            norm: None,
        }
    }

    #[test]
    fn zscore_gives_zero_mean_unit_std() {
        let m = features(random_matrix(200, 6, 1));
        let z = normalize(&m, NormMode::Zscore, None).unwrap();
        for c in 0..6 {
            let col: Vec<f64> = (0..200).map(|r| z.frames.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 200.0;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn denormalize_inverts_both_modes() {
        let m = features(random_matrix(50, 5, 2));
        for mode in [NormMode::Mean, NormMode::Zscore] {
            let back = denormalize(&normalize(&m, mode, None).unwrap()).unwrap();
            for (a, b) in back.frames.data.iter().zip(&m.frames.data) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!(back.norm.is_none());
        }
    }

    #[test]
    fn constant_bin_maps_to_zero() {
        let mut frames = random_matrix(20, 3, 3);
        for r in 0..20 {
            frames.data[r * 3 + 1] = -42.0;
        }
        let z = normalize(&features(frames), NormMode::Zscore, None).unwrap();
        assert_eq!(z.norm.as_ref().unwrap().std[1], STD_FLOOR);
        assert!((0..20).all(|r| z.frames.get(r, 1) == 0.0));
    }

    #[test]
    fn stats_width_mismatch_is_rejected() {
        let stats = NormStats::fit(NormMode::Zscore, &[&random_matrix(4, 3, 4)]).unwrap();
        let m = features(random_matrix(4, 5, 5));
        assert!(matches!(normalize(&m, NormMode::Zscore, Some(&stats)), Err(Error::Dimension(_))));
    }

    #[test]
    fn stats_text_round_trip_is_exact() {
        let stats = NormStats::fit(NormMode::Zscore, &[&random_matrix(30, 7, 6), &random_matrix(3, 7, 7)]).unwrap();
        assert_eq!(NormStats::parse(&stats.to_text()).unwrap(), stats);
    }

    #[test]
    fn extract_features_frame_count() {
        let params = MelParams { sample_rate: 8000, n_fft: 256, hop: 64, n_mels: 16, fmin: 0.0, fmax: 4000.0 };
        let fb = params.filterbank().unwrap();
        let clip = AudioClip::new((0..1000).map(|i| (i as f64 * 0.3).sin() * 0.5).collect(), 8000).unwrap();
        let f = extract_features(&clip, &params, &fb).unwrap();
        assert_eq!(f.frames.rows, params.frame_count(1000));
        assert_eq!(f.frames.cols, 16);
        let wrong_rate = AudioClip::new(vec![0.0; 10], 16000).unwrap();
        assert!(extract_features(&wrong_rate, &params, &fb).is_err());
    }

    #[test]
    fn cache_round_trip_and_segments() {
        let params = MelParams { n_mels: 4, ..MelParams::default() };
        let parts = [random_matrix(3, 4, 8), random_matrix(5, 4, 9)];
        let cache = FeatureCache::new(params, true, &parts).unwrap();
        let back = FeatureCache::from_bytes(&cache.to_bytes().unwrap()).unwrap();
        assert_eq!(back.segments, vec![3, 5]);
        assert_eq!(back.params, params);
        assert!(back.normalized);
        for (a, b) in back.frames.data.iter().zip(&cache.frames.data) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(back.segment_matrices()[1].rows, 5);
        assert_eq!(back.to_bytes().unwrap(), FeatureCache::from_bytes(&back.to_bytes().unwrap()).unwrap().to_bytes().unwrap());
    }

    #[test]
    fn cache_truncation_and_corruption_are_typed_errors() {
        let params = MelParams { n_mels: 4, ..MelParams::default() };
        let bytes = FeatureCache::new(params, false, &[random_matrix(6, 4, 10)]).unwrap().to_bytes().unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(FeatureCache::from_bytes(&bytes[..cut]), Err(Error::Parse { .. })));
        }
        let mut rng = SeededRng::new(11);
        for _ in 0..1000 {
            let mut b = bytes.clone();
            let i = rng.below(b.len());
            b[i] = rng.next_u64() as u8;
            let _ = FeatureCache::from_bytes(&b);
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        match FeatureCache::from_bytes(&bad) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }
}

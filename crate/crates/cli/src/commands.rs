use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use tablagen::audio::{
    extract_features, load_wav, normalize, save_wav, FeatureCache, MelFeatureMatrix, NormStats,
};
use tablagen::generation::{db_frames_to_audio, generate_frames, generate_tokens, render_audio, render_symbolic, Sampler};
use tablagen::midi::{build_vocabulary, load_midi_tokens, load_token_corpus, save_token_corpus, TokenSequence, Vocabulary};
use tablagen::models::{gradcheck_suite, Model, ModelKind, ModelSpec};
use tablagen::tensor::set_tanh_derivative_fault;
use tablagen::training::{evaluate, fit, Checkpoint, CheckpointMeta, Source, TrainConfig, WindowDataset};
use tablagen::{KeyValues, SeededRng};

use crate::config::{echo, CliConfig};
use crate::{CliError, CliResult, ConfigArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_config(args: &ConfigArgs) -> CliResult<CliConfig> {
    Ok(CliConfig::load(args.config.as_deref(), &args.sets)?)
}

/// Files in `dir` whose extension is one of `exts` (case-insensitive), sorted by name.
fn list_files(dir: &Path, exts: &[&str]) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| usage(format!("{}: {e}", dir.display())))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| exts.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("{} contains no {} files", dir.display(), exts.join("/"))));
    }
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn has_ext(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
}

#[derive(Args, Debug)]
pub struct PreprocessAudio {
    /// Directory of WAV files
    #[arg(long = "in")]
    input: PathBuf,
    /// Feature cache to write
    #[arg(long)]
    out: PathBuf,
    /// Statistics file to write [default: <out>.stats]
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Sample rate key
    #[arg(long)]
    sr: Option<u32>,
    /// n_fft key
    #[arg(long)]
    n_fft: Option<usize>,
    /// hop key
    #[arg(long)]
    hop: Option<usize>,
    /// n_mels key
    #[arg(long)]
    n_mels: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

impl PreprocessAudio {
    pub fn run(self) -> CliResult<()> {
        let mut cfg = load_config(&self.config)?;
        for (key, value) in [
            ("sample_rate", self.sr.map(|v| v as usize)),
            ("n_fft", self.n_fft),
            ("hop", self.hop),
            ("n_mels", self.n_mels),
        ] {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        let params = cfg.mel_params()?;
        let mode = cfg.norm_mode()?;
        let stats_path = self.stats.unwrap_or_else(|| self.out.with_extension("stats"));
        let mut shown = KeyValues::new();
        params.write_keys(&mut shown);
        shown.set("norm", mode);
        echo(&shown);

        let files = list_files(&self.input, &["wav"])?;
        let fb = params.filterbank()?;
        let mut raw = Vec::with_capacity(files.len());
        for path in &files {
            let clip = load_wav(path, params.sample_rate).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            raw.push(extract_features(&clip, &params, &fb)?);
        }
        let stats = NormStats::fit(mode, &raw.iter().map(|m| &m.frames).collect::<Vec<_>>())?;
        let normed = raw
            .iter()
            .map(|m| normalize(m, mode, Some(&stats)).map(|n| n.frames))
            .collect::<tablagen::Result<Vec<_>>>()?;
        let cache = FeatureCache::new(params, true, &normed)?;
        cache.save(&self.out)?;
        stats.save(&stats_path)?;
        println!(
            "{} files, {} frames of {} mel bins -> {}, statistics -> {}",
            files.len(),
            cache.frames.rows,
            cache.frames.cols,
            self.out.display(),
            stats_path.display()
        );
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct PreprocessMidi {
    /// Directory of MIDI files
    #[arg(long = "in")]
    input: PathBuf,
    /// Token corpus to write
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary file to write
    #[arg(long)]
    vocab: PathBuf,
}

impl PreprocessMidi {
    pub fn run(self) -> CliResult<()> {
        let files = list_files(&self.input, &["mid", "midi"])?;
        let mut parsed = Vec::new();
        for path in &files {
            match load_midi_tokens(path) {
                Ok((tokens, warnings)) => {
                    if !warnings.is_empty() {
                        eprintln!("warning: {}: {} unpaired note events", path.display(), warnings.len());
                    }
                    parsed.push((file_name(path), tokens));
                }
                Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
            }
        }
        if parsed.is_empty() {
            return Err(usage(format!("no parseable MIDI files in {}", self.input.display())));
        }
        let vocab = build_vocabulary(&parsed.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
        let seqs = parsed
            .into_iter()
            .map(|(source, tokens)| Ok(TokenSequence { ids: vocab.encode(&tokens)?, source }))
            .collect::<tablagen::Result<Vec<_>>>()?;
        save_token_corpus(&seqs, &self.out)?;
        vocab.save(&self.vocab)?;
        let total: usize = seqs.iter().map(|s| s.ids.len()).sum();
        println!(
            "{} of {} files, {total} tokens, vocabulary of {} -> {}, {}",
            seqs.len(),
            files.len(),
            vocab.len(),
            self.out.display(),
            self.vocab.display()
        );
        Ok(())
    }
}

/// Token windows from a corpus file, skipping sources too short for one window.
fn token_dataset(path: &Path, vocab_len: usize, seq_len: usize, stride: usize) -> CliResult<WindowDataset> {
    let seqs = load_token_corpus(path)?;
    let mut sources = Vec::new();
    for s in seqs {
        if let Some(bad) = s.ids.iter().find(|&&id| id >= vocab_len) {
            return Err(usage(format!("{}: id {bad} is outside the vocabulary of {vocab_len}", s.source)));
        }
        if s.ids.len() <= seq_len {
            eprintln!("warning: skipping {}: {} tokens is too short for windows of {seq_len}", s.source, s.ids.len());
            continue;
        }
        sources.push((s.source, Source::Tokens(s.ids)));
    }
    if sources.is_empty() {
        return Err(usage(format!("{}: no source is longer than {seq_len} tokens", path.display())));
    }
    Ok(WindowDataset::new(sources, seq_len, stride)?)
}

fn frame_dataset(cache: &FeatureCache, seq_len: usize, stride: usize) -> CliResult<WindowDataset> {
    let sources: Vec<_> = cache
        .segment_matrices()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.rows > seq_len)
        .map(|(i, m)| (format!("segment {i}"), Source::Frames(m)))
        .collect();
    if sources.is_empty() {
        return Err(usage(format!("no feature segment is longer than {seq_len} frames")));
    }
    Ok(WindowDataset::new(sources, seq_len, stride)?)
}

fn load_normalised_cache(path: &Path, stats: &NormStats) -> CliResult<FeatureCache> {
    let cache = FeatureCache::load(path)?;
    if !cache.normalized {
        return Err(usage(format!("{} holds dB frames; expected a normalised cache", path.display())));
    }
    if stats.width() != cache.frames.cols {
        return Err(usage(format!(
            "statistics cover {} mel bins but {} has {}",
            stats.width(),
            path.display(),
            cache.frames.cols
        )));
    }
    Ok(cache)
}

fn required_path(cfg: &CliConfig, key: &str, why: &str) -> CliResult<PathBuf> {
    cfg.path(key).ok_or_else(|| usage(format!("config key {key} is required {why}")))
}

#[derive(Args, Debug)]
pub struct Train {
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV to write [default: <out>.csv]
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// data key
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

impl Train {
    pub fn run(self) -> CliResult<()> {
        let mut cfg = load_config(&self.config)?;
        if let Some(d) = &self.data {
            cfg.set("data", d.display())?;
        }
        let kind = cfg.kind()?;
        let data_path = required_path(&cfg, "data", "for training")?;
        let mut meta = CheckpointMeta::default();
        if kind.is_symbolic() {
            let vocab = Vocabulary::load(&required_path(&cfg, "vocab", "for token corpora")?)?;
            cfg.set_default("vocab_size", vocab.len())?;
            meta.vocab = Some(vocab);
        } else {
            let stats = NormStats::load(&required_path(&cfg, "stats", "for feature caches")?)?;
            cfg.set_default("feature_dim", stats.width())?;
            meta.norm = Some(stats);
        }
        let spec = cfg.model_spec()?;
        spec.validate()?;
        let train_cfg = cfg.train_config(kind)?;
        let stride = cfg.stride()?;
        let mut shown = KeyValues::new();
        spec.write_keys(&mut shown);
        train_cfg.write_keys(&mut shown);
        for key in ["data", "vocab", "stats"] {
            if let Some(v) = cfg.get(key) {
                shown.set(key, v);
            }
        }
        shown.set("stride", stride);

        let data = if let Some(vocab) = &meta.vocab {
            token_dataset(&data_path, vocab.len(), spec.seq_len, stride)?
        } else {
            let stats = meta.norm.as_ref().expect("set above");
            let cache = load_normalised_cache(&data_path, stats)?;
            let dataset = frame_dataset(&cache, spec.seq_len, stride)?;
            meta.mel = Some(cache.params);
            cache.params.write_keys(&mut shown);
            dataset
        };
        echo(&shown);

        let mut model = Model::build(spec, &mut SeededRng::new(train_cfg.seed))?;
        println!(
            "training {} ({} parameters) on {} windows for {} epochs",
            kind,
            model.parameter_count(),
            data.len(),
            train_cfg.epochs
        );
        let metric = train_cfg.metric;
        let history = fit(&mut model, &data, &train_cfg, |r| {
            let mut line = format!("epoch {}/{} loss {:.6} {metric} {:.6}", r.epoch, train_cfg.epochs, r.loss, r.metric);
            if let Some((l, m)) = r.holdout {
                line.push_str(&format!(" holdout_loss {l:.6} holdout_{metric} {m:.6}"));
            }
            println!("{line}");
        })?;
        if let Some(last) = history.last() {
            meta.summary.set("epochs", last.epoch);
            meta.summary.set("loss", format!("{:.6}", last.loss));
            meta.summary.set(&metric.to_string(), format!("{:.6}", last.metric));
        }
        Checkpoint::new(&model, &meta)?.save(&self.out)?;
        let metrics = self.metrics.unwrap_or_else(|| self.out.with_extension("csv"));
        history.save_csv(&metrics)?;
        println!("checkpoint -> {}, metrics -> {}", self.out.display(), metrics.display());
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Evaluate {
    /// Checkpoint to evaluate
    #[arg(long)]
    model: PathBuf,
    /// Token corpus or normalised feature cache
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

impl Evaluate {
    pub fn run(self) -> CliResult<()> {
        let cfg = load_config(&self.config)?;
        let ck = Checkpoint::load(&self.model)?;
        let model = ck.model()?;
        let spec = &model.spec;
        let train_cfg = cfg.train_config(spec.kind)?;
        let stride = cfg.stride()?;
        let mut shown = KeyValues::new();
        shown.set("loss", train_cfg.loss);
        shown.set("metric", train_cfg.metric);
        shown.set("batch_size", train_cfg.batch_size);
        shown.set("stride", stride);
        echo(&shown);
        let data = if spec.kind.is_symbolic() {
            token_dataset(&self.data, spec.vocab_size, spec.seq_len, stride)?
        } else {
            let stats = ck.norm()?.ok_or_else(|| usage("checkpoint carries no normalisation statistics"))?;
            frame_dataset(&load_normalised_cache(&self.data, &stats)?, spec.seq_len, stride)?
        };
        let (loss, metric) = evaluate(&model, &data, &train_cfg)?;
        println!("{} windows loss {loss:.6} {} {metric:.6}", data.len(), train_cfg.metric);
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Generate {
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Where the seed window comes from: a token corpus or .mid file for
    /// symbolic models, a feature cache or .wav file for audio models
    #[arg(long)]
    seed_corpus: PathBuf,
    /// length key
    #[arg(long)]
    length: Option<usize>,
    /// top_p key
    #[arg(long)]
    top_p: Option<f64>,
    /// Output file: .mid for symbolic models, .wav for audio models
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Uniformly chosen window of `seq_len` items from the candidates long enough to hold one.
fn pick_window(lengths: &[usize], seq_len: usize, rng: &mut SeededRng) -> Option<(usize, usize)> {
    let fits: Vec<usize> = (0..lengths.len()).filter(|&i| lengths[i] >= seq_len).collect();
    if fits.is_empty() {
        return None;
    }
    let src = fits[rng.below(fits.len())];
    Some((src, rng.below(lengths[src] - seq_len + 1)))
}

impl Generate {
    pub fn run(self) -> CliResult<()> {
        let mut cfg = load_config(&self.config)?;
        if let Some(n) = self.length {
            cfg.set("length", n)?;
        }
        if let Some(p) = self.top_p {
            cfg.set("top_p", p)?;
        }
        let ck = Checkpoint::load(&self.model)?;
        let spec = ck.spec()?;
        let symbolic = spec.kind.is_symbolic();
        let want = if symbolic { ["mid", "midi"] } else { ["wav", "wave"] };
        if !has_ext(&self.out, &want) {
            return Err(usage(format!(
                "{} generates {} output, but {} is not a .{} file",
                spec.kind,
                if symbolic { "MIDI" } else { "audio" },
                self.out.display(),
                want[0]
            )));
        }
        let length = cfg.length(symbolic)?;
        let top_p = cfg.top_p()?;
        let seed = cfg.seed()?;
        let mut shown = KeyValues::new();
        shown.set("length", length);
        if symbolic {
            shown.set("top_p", top_p);
        }
        shown.set("seed", seed);
        echo(&shown);

        let mut rng = SeededRng::new(seed);
        if symbolic {
            let vocab = ck.vocab()?.ok_or_else(|| usage("checkpoint carries no vocabulary"))?;
            let seqs: Vec<Vec<usize>> = if has_ext(&self.seed_corpus, &["mid", "midi"]) {
                let (tokens, _) = load_midi_tokens(&self.seed_corpus)?;
                vec![vocab.encode(&tokens)?]
            } else {
                load_token_corpus(&self.seed_corpus)?.into_iter().map(|s| s.ids).collect()
            };
            let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
            let (src, start) = pick_window(&lengths, spec.seq_len, &mut rng)
                .ok_or_else(|| usage(format!("no seed sequence has {} tokens", spec.seq_len)))?;
            let model = ck.model()?;
            let window = &seqs[src][start..start + spec.seq_len];
            let ids = generate_tokens(&model, window, length, Sampler::TopP(top_p), &mut rng)?;
            render_symbolic(&ids, &vocab, &self.out)?;
            println!("{} tokens -> {}", ids.len(), self.out.display());
        } else {
            let norm = ck.norm()?.ok_or_else(|| usage("checkpoint carries no normalisation statistics"))?;
            let params = ck.mel()?.ok_or_else(|| usage("checkpoint carries no feature parameters"))?;
            let segments = if has_ext(&self.seed_corpus, &["wav", "wave"]) {
                let clip = load_wav(&self.seed_corpus, params.sample_rate)?;
                let db = extract_features(&clip, &params, &params.filterbank()?)?;
                vec![normalize(&db, norm.mode, Some(&norm))?.frames]
            } else {
                let cache = FeatureCache::load(&self.seed_corpus)?;
                let mut parts = cache.segment_matrices();
                if !cache.normalized {
                    for m in &mut parts {
                        norm.apply(m)?;
                    }
                }
                parts
            };
            if let Some(m) = segments.iter().find(|m| m.cols != spec.feature_dim) {
                return Err(usage(format!(
                    "seed frames have {} features, the model reads {}",
                    m.cols, spec.feature_dim
                )));
            }
            let lengths: Vec<usize> = segments.iter().map(|m| m.rows).collect();
            let (src, start) = pick_window(&lengths, spec.seq_len, &mut rng)
                .ok_or_else(|| usage(format!("no seed segment has {} frames", spec.seq_len)))?;
            let window = segments[src].slice_rows(start, start + spec.seq_len);
            let frames = generate_frames(&ck, &window, length)?;
            let clip = render_audio(&frames, &ck, &self.out, None, &mut rng)?;
            println!("{} frames, {:.2} s -> {}", frames.rows, clip.duration_secs(), self.out.display());
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Invert {
    /// Feature cache to invert
    #[arg(long)]
    features: PathBuf,
    /// Statistics for a normalised cache
    #[arg(long)]
    stats: Option<PathBuf>,
    /// WAV file to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

impl Invert {
    pub fn run(self) -> CliResult<()> {
        let cfg = load_config(&self.config)?;
        let seed = cfg.seed()?;
        let mut shown = KeyValues::new();
        shown.set("seed", seed);
        echo(&shown);
        let cache = FeatureCache::load(&self.features)?;
        let db = if cache.normalized {
            let path = self
                .stats
                .as_deref()
                .ok_or_else(|| usage(format!("{} is normalised; --stats is required", self.features.display())))?;
            let stats = NormStats::load(path)?;
            if stats.width() != cache.frames.cols {
                return Err(usage(format!(
                    "{} covers {} mel bins but {} has {}",
                    path.display(),
                    stats.width(),
                    self.features.display(),
                    cache.frames.cols
                )));
            }
            let m = MelFeatureMatrix { frames: cache.frames.clone(), norm: Some(stats), params: cache.params };
            tablagen::audio::denormalize(&m)?.frames
        } else {
            cache.frames.clone()
        };
        let clip = db_frames_to_audio(&db, &cache.params, &mut SeededRng::new(seed))?;
        save_wav(&clip, &self.out)?;
        println!("{} frames, {:.2} s -> {}", db.rows, clip.duration_secs(), self.out.display());
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Gradcheck {
    /// Flip the sign of the tanh derivative to confirm the check can fail
    #[arg(long, hide = true)]
    inject_tanh_fault: bool,
}

impl Gradcheck {
    pub fn run(self) -> CliResult<()> {
        set_tanh_derivative_fault(self.inject_tanh_fault);
        let start = Instant::now();
        let reports = gradcheck_suite();
        set_tanh_derivative_fault(false);
        let reports = reports?;
        let (mut total, mut failed) = (0, 0);
        for r in &reports {
            for e in &r.report.entries {
                total += 1;
                if !e.pass {
                    failed += 1;
                }
                println!("{}/{} {:.3e} {}", r.name, e.name, e.max_rel_err, if e.pass { "pass" } else { "fail" });
            }
        }
        println!(
            "{} of {total} parameters pass in {:.1} s",
            total - failed,
            start.elapsed().as_secs_f64()
        );
        if failed > 0 {
            return Err(CliError::Verification(format!("{failed} parameters exceed the tolerance")));
        }
        Ok(())
    }
}

/// Resolved configuration for the configured model kind, or for each kind
/// when none is set.
pub fn show_config(args: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let kinds: Vec<ModelKind> = match cfg.get("model") {
        Some(_) => vec![cfg.kind()?],
        None => ModelKind::ALL.to_vec(),
    };
    for kind in kinds {
        let mut with_kind = cfg.clone();
        with_kind.set("model", kind)?;
        let spec: ModelSpec = with_kind.model_spec()?;
        let train: TrainConfig = with_kind.train_config(kind)?;
        let mut kv = KeyValues::new();
        spec.write_keys(&mut kv);
        train.write_keys(&mut kv);
        with_kind.mel_params()?.write_keys(&mut kv);
        kv.set("norm", with_kind.norm_mode()?);
        kv.set("stride", with_kind.stride()?);
        kv.set("length", with_kind.length(kind.is_symbolic())?);
        kv.set("top_p", with_kind.top_p()?);
        for key in ["data", "vocab", "stats"] {
            if let Some(v) = with_kind.get(key) {
                kv.set(key, v);
            }
        }
        print!("{}", kv.to_text());
        println!();
    }
    Ok(())
}

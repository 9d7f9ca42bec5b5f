use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tablagen::audio::{MelParams, NormMode};
use tablagen::generation::{DEFAULT_FRAME_LENGTH, DEFAULT_TOKEN_LENGTH, DEFAULT_TOP_P};
use tablagen::models::{ModelKind, ModelSpec};
use tablagen::training::TrainConfig;
use tablagen::{read_file, Error, KeyValues, Result};

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "TABLAGEN_CONFIG";

#[derive(Clone, Copy, PartialEq, Eq)]
enum Group {
    Model,
    Training,
    Features,
    Data,
    Generation,
}

const SCHEMA: &[(&str, Group, &str)] = &[
    ("model", Group::Model, "model kind"),
    ("seq_len", Group::Model, "input window length"),
    ("vocab_size", Group::Model, "token vocabulary size (defaults to the corpus vocabulary)"),
    ("feature_dim", Group::Model, "frame width (defaults to the feature cache width)"),
    ("embed_dim", Group::Model, "token embedding width / transformer model width"),
    ("hidden", Group::Model, "recurrent state or feed-forward width"),
    ("n_layers", Group::Model, "stacked blocks"),
    ("n_heads", Group::Model, "attention heads"),
    ("dropout", Group::Model, "dropout rate while training"),
    ("batch_size", Group::Model, "windows per optimiser step"),
    ("epochs", Group::Training, "passes over the corpus"),
    ("learning_rate", Group::Training, "Adam step size"),
    ("beta1", Group::Training, "Adam first-moment decay"),
    ("beta2", Group::Training, "Adam second-moment decay"),
    ("adam_eps", Group::Training, "Adam denominator guard"),
    ("seed", Group::Training, "seed for initialisation, shuffling and sampling"),
    ("loss", Group::Training, "categorical_ce | sparse_ce | mse"),
    ("metric", Group::Training, "accuracy | mae"),
    ("shuffle", Group::Training, "shuffle windows every epoch"),
    ("holdout", Group::Training, "fraction of windows held out for evaluation"),
    ("sample_rate", Group::Features, "audio sample rate in Hz"),
    ("n_fft", Group::Features, "STFT frame length"),
    ("hop", Group::Features, "STFT hop"),
    ("n_mels", Group::Features, "mel bins"),
    ("fmin", Group::Features, "lowest mel frequency in Hz"),
    ("fmax", Group::Features, "highest mel frequency in Hz"),
    ("norm", Group::Features, "feature normalisation: mean | zscore"),
    ("data", Group::Data, "token corpus or feature cache to train on"),
    ("vocab", Group::Data, "vocabulary file for token corpora"),
    ("stats", Group::Data, "normalisation statistics for feature caches"),
    ("stride", Group::Data, "step between training windows"),
    ("length", Group::Generation, "tokens or frames to generate"),
    ("top_p", Group::Generation, "nucleus mass for token sampling"),
];

fn group_of(key: &str) -> Option<Group> {
    SCHEMA.iter().find(|(k, _, _)| *k == key).map(|e| e.1)
}

fn kind_defaults(kind: ModelKind) -> KeyValues {
    let mut kv = KeyValues::new();
    ModelSpec::defaults(kind).write_keys(&mut kv);
    TrainConfig::defaults(kind).write_keys(&mut kv);
    kv
}

fn default_text(key: &str) -> String {
    match key {
        "model" => "none, required for training".into(),
        "data" | "vocab" | "stats" => "none".into(),
        "stride" => "1".into(),
        "norm" => NormMode::Zscore.to_string(),
        "length" => format!("{DEFAULT_TOKEN_LENGTH} tokens, {DEFAULT_FRAME_LENGTH} frames"),
        "top_p" => DEFAULT_TOP_P.to_string(),
        "fmax" => "sample_rate / 2".into(),
        _ if group_of(key) == Some(Group::Features) => {
            let mut kv = KeyValues::new();
            MelParams::default().write_keys(&mut kv);
            kv.get(key).unwrap_or_default().to_string()
        }
        _ => {
            let mut by_value: BTreeMap<String, Vec<&str>> = BTreeMap::new();
            for kind in ModelKind::ALL {
                let value = kind_defaults(kind).get(key).unwrap_or_default().to_string();
                by_value.entry(value).or_default().push(kind.name());
            }
            if by_value.len() == 1 {
                return by_value.into_keys().next().unwrap_or_default();
            }
            by_value
                .into_iter()
                .map(|(v, kinds)| format!("{v} ({})", kinds.join(", ")))
                .collect::<Vec<_>>()
                .join("; ")
        }
    }
}

/// Key listing appended to every command's help.
pub fn keys_help() -> String {
    let mut out = format!(
        "Config keys, as key=value lines in --config (or ${CONFIG_ENV}) and overridable with --set.\n\
         Precedence: built-in defaults < config file < --set and flags.\n\
         Model kinds: {}\n",
        ModelKind::ALL.map(ModelKind::name).join(", ")
    );
    for (key, _, help) in SCHEMA {
        let _ = write!(out, "\n  {key:<14}{help}\n  {:<14}default: {}", "", default_text(key));
    }
    out
}

/// User-supplied keys from the config file and the command line.
#[derive(Clone, Debug, Default)]
pub struct CliConfig {
    kv: KeyValues,
}

impl CliConfig {
    /// Reads `file`, or the file named by [`CONFIG_ENV`], then applies the
    /// `key=value` overrides in order.
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let env_file = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let mut cfg = Self::default();
        if let Some(path) = file.map(Path::to_path_buf).or(env_file) {
            let bytes = read_file(&path)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Config(format!("{} is not UTF-8 text", path.display())))?;
            let kv = KeyValues::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            for (k, v) in kv.iter() {
                cfg.set(k, v)?;
            }
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if group_of(key).is_none() {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.kv.set(key, value);
        Ok(())
    }

    pub fn set_default(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if self.kv.get(key).is_none() {
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.kv.get(key)
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        self.kv.get_or(key, default)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.kv.get(key).map(PathBuf::from)
    }

    pub fn kind(&self) -> Result<ModelKind> {
        self.kv.require::<String>("model")?.parse()
    }

    /// Not validated: data-derived sizes may still be missing.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_keys(&self.kv)
    }

    pub fn train_config(&self, kind: ModelKind) -> Result<TrainConfig> {
        TrainConfig::from_keys(&self.kv, kind)
    }

    pub fn mel_params(&self) -> Result<MelParams> {
        MelParams::from_keys(&self.kv)
    }

    pub fn norm_mode(&self) -> Result<NormMode> {
        self.kv.get("norm").map_or(Ok(NormMode::Zscore), str::parse)
    }

    pub fn stride(&self) -> Result<usize> {
        match self.get_or("stride", 1)? {
            0 => Err(Error::Config("stride must be at least 1".into())),
            s => Ok(s),
        }
    }

    pub fn top_p(&self) -> Result<f64> {
        let p = self.get_or("top_p", DEFAULT_TOP_P)?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!("top_p {p} outside (0, 1]")));
        }
        Ok(p)
    }

    pub fn length(&self, symbolic: bool) -> Result<usize> {
        let default = if symbolic { DEFAULT_TOKEN_LENGTH } else { DEFAULT_FRAME_LENGTH };
        match self.get_or("length", default)? {
            0 => Err(Error::Config("length must be at least 1".into())),
            n => Ok(n),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }
}

/// Prints resolved settings to stderr so stdout stays machine readable.
pub fn echo(kv: &KeyValues) {
    eprintln!("resolved config:");
    for (k, v) in kv.iter() {
        eprintln!("  {k}={v}");
    }
}

use std::path::Path;

use crate::audio::{MelParams, NormStats};
use crate::codec::{put_u32, to_u32, KeyValues, LeReader};
use crate::error::{read_file, write_file, Error, Result};
use crate::midi::Vocabulary;
use crate::models::{build_params, Model, ModelSpec};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TBLF";
const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;
const TRAIN_PREFIX: &str = "train.";

/// Everything stored next to the parameters.
#[derive(Clone, Debug, Default)]
pub struct CheckpointMeta {
    pub norm: Option<NormStats>,
    pub mel: Option<MelParams>,
    pub vocab: Option<Vocabulary>,
    /// Free-form training summary (config and final metrics).
    pub summary: KeyValues,
}

#[derive(Clone, Debug, PartialEq)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

/// Model spec, metadata and parameters rounded to 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    metadata: KeyValues,
    params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn new(model: &Model, meta: &CheckpointMeta) -> Result<Self> {
        let mut kv = KeyValues::new();
        model.spec.write_keys(&mut kv);
        if let Some(mel) = &meta.mel {
            mel.write_keys(&mut kv);
        }
        if let Some(norm) = &meta.norm {
            norm.write_keys(&mut kv);
        }
        if let Some(vocab) = &meta.vocab {
            if let Some(bad) = vocab.tokens().iter().find(|t| t.contains(char::is_whitespace)) {
                return Err(Error::Vocabulary(format!("token {bad:?} contains whitespace")));
            }
            kv.set("vocab", vocab.tokens().join(" "));
        }
        for (k, v) in meta.summary.iter() {
            kv.set(&format!("{TRAIN_PREFIX}{k}"), v);
        }
        let params = model
            .params
            .iter()
            .map(|(name, t)| StoredParam {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Ok(Self { metadata: kv, params })
    }

    pub fn metadata(&self) -> &KeyValues {
        &self.metadata
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_keys(&self.metadata)
    }

    pub fn norm(&self) -> Result<Option<NormStats>> {
        NormStats::from_keys(&self.metadata)
    }

    pub fn mel(&self) -> Result<Option<MelParams>> {
        if self.metadata.get("n_mels").is_none() {
            return Ok(None);
        }
        MelParams::from_keys(&self.metadata).map(Some)
    }

    pub fn vocab(&self) -> Result<Option<Vocabulary>> {
        self.metadata
            .get("vocab")
            .map(|v| Vocabulary::from_tokens(v.split(' ').map(String::from).collect()))
            .transpose()
    }

    /// The training summary with its prefix stripped.
    pub fn summary(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        for (k, v) in self.metadata.iter() {
            if let Some(k) = k.strip_prefix(TRAIN_PREFIX) {
                kv.set(k, v);
            }
        }
        kv
    }

    /// Rebuilds the model; names and shapes must match the spec's layout.
    pub fn model(&self) -> Result<Model> {
        let spec = self.spec()?;
        let mut params = build_params(&spec, &mut SeededRng::new(0))?;
        let expected: Vec<(String, Vec<usize>)> =
            params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        if expected.len() != self.params.len() {
            return Err(Error::Spec(format!(
                "{} expects {} parameter tensors, checkpoint has {}",
                spec.kind,
                expected.len(),
                self.params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&self.params) {
            if *name != p.name || *shape != p.shape {
                return Err(Error::Spec(format!(
                    "expected parameter {name} {shape:?}, found {} {:?}",
                    p.name, p.shape
                )));
            }
            let data = p.data.iter().map(|&v| v as f64).collect();
            params.replace(name, Tensor::param(&p.shape, data)?)?;
        }
        Ok(Model { spec, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        put_u32(&mut out, VERSION);
        let meta = self.metadata.to_text();
        put_u32(&mut out, to_u32(meta.len(), "metadata length")?);
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, to_u32(self.params.len(), "parameter count")?);
        for p in &self.params {
            put_u32(&mut out, to_u32(p.name.len(), "name length")?);
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, to_u32(p.shape.len(), "rank")?);
            for &d in &p.shape {
                put_u32(&mut out, to_u32(d, "dimension")?);
            }
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::new(bytes, Error::checkpoint);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::checkpoint(0, "bad magic, not a checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::checkpoint(4, format!("unsupported version {version}")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_at = r.pos();
        let text = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::checkpoint(meta_at + e.valid_up_to(), "metadata is not UTF-8"))?;
        let metadata = KeyValues::parse(text).map_err(|e| Error::checkpoint(meta_at, format!("metadata: {e}")))?;
        let count = r.u32("parameter count")?;
        let mut params = Vec::new();
        for _ in 0..count {
            let at = r.pos();
            let n = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "parameter name")?)
                .map_err(|_| Error::checkpoint(at, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32("rank")?;
            if rank == 0 || rank > MAX_RANK {
                return Err(r.error(format!("parameter {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut numel = 1usize;
            for _ in 0..rank {
                let d = r.u32("dimension")? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| r.error(format!("parameter {name} size overflows")))?;
                shape.push(d);
            }
            let bytes = numel
                .checked_mul(4)
                .ok_or_else(|| r.error(format!("parameter {name} size overflows")))?;
            let data = r
                .take(bytes, "parameter values")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(StoredParam { name, shape, data });
        }
        r.expect_end()?;
        Ok(Self { metadata, params })
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
    use crate::audio::NormMode;
    use crate::models::{ModelInput, ModelKind};

    fn tiny(kind: ModelKind) -> Model {
        let mut spec = ModelSpec::defaults(kind);
        spec.seq_len = 4;
        spec.vocab_size = 5;
        spec.embed_dim = 4;
        spec.hidden = 4;
        spec.feature_dim = 3;
        spec.n_layers = 1;
        spec.n_heads = 2;
        Model::build(spec, &mut SeededRng::new(3)).unwrap()
    }

    fn meta() -> CheckpointMeta {
        let mut summary = KeyValues::new();
        summary.set("epochs", 3);
        summary.set("final_loss", 0.125);
        CheckpointMeta {
            norm: Some(NormStats { mode: NormMode::Zscore, mean: vec![-3.5, 0.1, 2.0], std: vec![1.5, 0.25, 3.0] }),
            mel: Some(MelParams { n_mels: 3, ..MelParams::default() }),
            vocab: Some(Vocabulary::from_tokens(["48", "60", "60.64", "62", "67"].map(String::from).to_vec()).unwrap()),
            summary,
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        for kind in [ModelKind::BiLstmAttnLstm, ModelKind::TablaTransformer] {
            let ck = Checkpoint::new(&tiny(kind), &meta()).unwrap();
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
            assert_eq!(back.norm().unwrap(), meta().norm);
            assert_eq!(back.mel().unwrap(), meta().mel);
            assert_eq!(back.vocab().unwrap(), meta().vocab);
            assert_eq!(back.summary().get("final_loss"), Some("0.125"));
            assert_eq!(back.spec().unwrap(), tiny(kind).spec);
        }
    }

    #[test]
    fn absent_metadata_reads_as_none() {
        let ck = Checkpoint::new(&tiny(ModelKind::Lstm), &CheckpointMeta::default()).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.norm().unwrap(), None);
        assert_eq!(back.mel().unwrap(), None);
        assert!(back.vocab().unwrap().is_none());
    }

    #[test]
    fn loaded_model_matches_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tblf");
        let ck = Checkpoint::new(&tiny(ModelKind::PianoTransformer), &meta()).unwrap();
        let before = ck.model().unwrap();
        ck.save(&path).unwrap();
        let after = Checkpoint::load(&path).unwrap().model().unwrap();
        let input = ModelInput::Tokens(vec![vec![0, 4, 2, 1], vec![3, 3, 3, 3]]);
        let a = before.forward(&input, false, &mut SeededRng::new(0)).unwrap();
        let b = after.forward(&input, false, &mut SeededRng::new(0)).unwrap();
        assert_eq!(a.data(), b.data());
        for ((_, x), (_, y)) in before.params.iter().zip(after.params.iter()) {
            assert!(x.data().iter().all(|v| *v == (*v as f32) as f64));
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn header_errors_carry_offsets() {
        let bytes = Checkpoint::new(&tiny(ModelKind::Lstm), &meta()).unwrap().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint { offset: 4, .. })));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn every_truncation_is_a_checkpoint_error() {
        let bytes = Checkpoint::new(&tiny(ModelKind::LstmAttn), &meta()).unwrap().to_bytes().unwrap();
        for n in 0..bytes.len() {
            match Checkpoint::from_bytes(&bytes[..n]) {
                Err(Error::Checkpoint { offset, .. }) => assert!(offset <= n),
                other => panic!("prefix {n}: {other:?}"),
            }
        }
    }

    #[test]
    fn random_corruption_never_panics() {
        let bytes = Checkpoint::new(&tiny(ModelKind::Lstm), &meta()).unwrap().to_bytes().unwrap();
        let mut rng = SeededRng::new(77);
        for _ in 0..1000 {
            let mut b = bytes.clone();
            for _ in 0..1 + rng.below(4) {
                let i = rng.below(b.len());
                b[i] = rng.next_u64() as u8;
            }
            if let Ok(ck) = Checkpoint::from_bytes(&b) {
                let _ = ck.model();
            }
        }
    }

    #[test]
    fn layout_mismatch_is_a_spec_error() {
        let mut ck = Checkpoint::new(&tiny(ModelKind::Lstm), &meta()).unwrap();
        ck.params.pop();
        assert!(matches!(ck.model(), Err(Error::Spec(_))));
        let mut ck = Checkpoint::new(&tiny(ModelKind::Lstm), &meta()).unwrap();
        ck.params[0].name = "other".into();
        assert!(matches!(ck.model(), Err(Error::Spec(_))));
    }
}

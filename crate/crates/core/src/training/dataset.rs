use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::ModelInput;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// One source file of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Tokens(Vec<usize>),
    /// Frames × features.
    Frames(Matrix),
}

impl Source {
    pub fn len(&self) -> usize {
        match self {
            Source::Tokens(ids) => ids.len(),
            Source::Frames(m) => m.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Batch targets, one per window.
#[derive(Clone, Debug)]
pub enum Targets {
    Ids(Vec<usize>),
    /// `[B, feature_dim]`.
    Frames(Tensor),
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub input: ModelInput,
    pub targets: Targets,
}

/// (window, next item) pairs over a corpus of sources. Windows never span
/// two sources.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    seq_len: usize,
    stride: usize,
    sources: Vec<Source>,
    /// (source, start) of every window.
    index: Vec<(usize, usize)>,
}

/// Window starts of one source of length `len`.
fn starts(len: usize, seq_len: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(seq_len)).step_by(stride)
}

/// Windows over a single sequence, named `name` in errors.
pub fn sliding_windows(seq: Source, seq_len: usize, stride: usize, name: &str) -> Result<WindowDataset> {
    WindowDataset::new(vec![(name.to_string(), seq)], seq_len, stride)
}

impl WindowDataset {
    pub fn new(sources: Vec<(String, Source)>, seq_len: usize, stride: usize) -> Result<Self> {
        if seq_len == 0 || stride == 0 {
            return Err(Error::Parameter(format!(
                "seq_len {seq_len} and stride {stride} must be positive"
            )));
        }
        if sources.is_empty() {
            return Err(Error::Data("no sources to window".into()));
        }
        let mut index = Vec::new();
        let mut kept = Vec::with_capacity(sources.len());
        let mut width = None;
        let mut symbolic = None;
        for (i, (name, src)) in sources.into_iter().enumerate() {
            if src.len() <= seq_len {
                return Err(Error::Data(format!(
                    "{name}: {} items is too short for windows of {seq_len} plus a target",
                    src.len()
                )));
            }
            let is_tokens = matches!(src, Source::Tokens(_));
            if *symbolic.get_or_insert(is_tokens) != is_tokens {
                return Err(Error::Data(format!("{name}: mixes token and frame sources")));
            }
            if let Source::Frames(m) = &src {
                if *width.get_or_insert(m.cols) != m.cols {
                    return Err(Error::Data(format!(
                        "{name}: {} features, expected {}",
                        m.cols,
                        width.unwrap_or(0)
                    )));
                }
            }
            index.extend(starts(src.len(), seq_len, stride).map(|s| (i, s)));
            kept.push(src);
        }
        Ok(Self { seq_len, stride, sources: kept, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self.sources[0], Source::Tokens(_))
    }

    /// Feature width of a frame corpus; 0 for tokens.
    pub fn feature_dim(&self) -> usize {
        match &self.sources[0] {
            Source::Tokens(_) => 0,
            Source::Frames(m) => m.cols,
        }
    }

    /// Largest id plus one for a token corpus.
    pub fn id_bound(&self) -> usize {
        self.sources
            .iter()
            .filter_map(|s| match s {
                Source::Tokens(ids) => ids.iter().max().map(|m| m + 1),
                Source::Frames(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn locate(&self, k: usize) -> Result<(&Source, usize)> {
        let &(src, start) = self
            .index
            .get(k)
            .ok_or_else(|| Error::Index(format!("window {k} of {}", self.index.len())))?;
        Ok((&self.sources[src], start))
    }

    /// Input ids and target id of window `k`.
    pub fn token_window(&self, k: usize) -> Result<(&[usize], usize)> {
        match self.locate(k)? {
            (Source::Tokens(ids), s) => Ok((&ids[s..s + self.seq_len], ids[s + self.seq_len])),
            _ => Err(Error::Data("frame corpus has no token windows".into())),
        }
    }

    /// Input frames and target frame of window `k`.
    pub fn frame_window(&self, k: usize) -> Result<(Matrix, &[f64])> {
        match self.locate(k)? {
            (Source::Frames(m), s) => Ok((m.slice_rows(s, s + self.seq_len), m.row(s + self.seq_len))),
            _ => Err(Error::Data("token corpus has no frame windows".into())),
        }
    }

    pub fn batch(&self, windows: &[usize]) -> Result<Batch> {
        if windows.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if self.is_symbolic() {
            let mut inputs = Vec::with_capacity(windows.len());
            let mut targets = Vec::with_capacity(windows.len());
            for &k in windows {
                let (w, t) = self.token_window(k)?;
                inputs.push(w.to_vec());
                targets.push(t);
            }
            return Ok(Batch { input: ModelInput::Tokens(inputs), targets: Targets::Ids(targets) });
        }
        let d = self.feature_dim();
        let mut x = Vec::with_capacity(windows.len() * self.seq_len * d);
        let mut y = Vec::with_capacity(windows.len() * d);
        for &k in windows {
            let (w, t) = self.frame_window(k)?;
            x.extend_from_slice(&w.data);
            y.extend_from_slice(t);
        }
        let b = windows.len();
        Ok(Batch {
            input: ModelInput::Frames(Tensor::new(&[b, self.seq_len, d], x)?),
            targets: Targets::Frames(Tensor::new(&[b, d], y)?),
        })
    }

    /// Moves a seeded random `fraction` of the windows into a second set.
    pub fn split_holdout(&self, fraction: f64, rng: &mut SeededRng) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Parameter(format!("holdout fraction {fraction} outside [0, 1)")));
        }
        let mut order = self.index.clone();
        rng.shuffle(&mut order);
        let n_hold = (fraction * order.len() as f64).round() as usize;
        if n_hold == 0 || n_hold == order.len() {
            return Err(Error::Data(format!(
                "holdout fraction {fraction} of {} windows leaves an empty split",
                order.len()
            )));
        }
        let mut held = order.split_off(order.len() - n_hold);
        order.sort_unstable();
        held.sort_unstable();
        let with = |index: Vec<(usize, usize)>| Self { index, ..self.clone() };
        Ok((with(order), with(held)))
    }
}

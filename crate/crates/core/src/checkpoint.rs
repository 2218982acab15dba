//! Binary checkpoint: magic `LMS2S1`, a config echo, then named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LMS2S1"
//! u32 text_len, text_len bytes of `key=value` lines
//! u32 n_entries
//! per entry:
//!   u32 name_len, name bytes
//!   u8 precision tag (0 = f64, 1 = f32), u8 frozen flag
//!   u32 ndim, ndim x u64 dims
//!   numel values, 8 or 4 bytes each
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::model::ModelParams;
use crate::nn::Parameterized;
use crate::tensor::{Precision, Tensor, TensorError};

pub const MAGIC: &[u8; 6] = b"LMS2S1";

/// Pipeline progress recorded alongside the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Encoder and enhancer trained and frozen.
    Trained,
    /// Classifier rescaled by the agent.
    Enhanced,
    /// Filters trained.
    FiltersTrained,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::Trained => "trained",
            Stage::Enhanced => "enhanced",
            Stage::FiltersTrained => "filters_trained",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "trained" => Stage::Trained,
            "enhanced" => Stage::Enhanced,
            "filters_trained" => Stage::FiltersTrained,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated in {0}")]
    Truncated(String),
    #[error("entry `{entry}`: {message}")]
    Entry { entry: String, message: String },
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: PipelineConfig,
    pub stage: Stage,
    pub params: ModelParams,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let text = format!("{}stage={}\n", ck.config.echo(), ck.stage.as_str());
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    let entries = ck.params.named_tensors("");
    put_u32(&mut out, entries.len());
    for (name, t) in entries {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        out.push(ck.params.precision.tag());
        out.push(u8::from(!t.requires_grad()));
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            match ck.params.precision {
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

struct Entry {
    name: String,
    frozen: bool,
    precision: Precision,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "header").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let text_len = r.u32("header")?;
    let text = std::str::from_utf8(r.take(text_len, "header")?)
        .map_err(|_| CheckpointError::Header("config text is not UTF-8".into()))?;
    let mut config = PipelineConfig::default();
    let mut stage = None;
    let mut config_lines = String::new();
    for line in text.lines() {
        match line.strip_prefix("stage=") {
            Some(s) => stage = Stage::parse(s),
            None => {
                config_lines.push_str(line);
                config_lines.push('\n');
            }
        }
    }
    config.apply_text(&config_lines)?;
    let stage = stage.ok_or_else(|| CheckpointError::Header("missing or unknown stage".into()))?;

    let n = r.u32("header")?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let where_ = format!("entry #{i}");
        let name_len = r.u32(&where_)?;
        let name = String::from_utf8(r.take(name_len, &where_)?.to_vec())
            .map_err(|_| CheckpointError::Header(format!("{where_}: name is not UTF-8")))?;
        let precision = Precision::from_tag(r.u8(&name)?).ok_or_else(|| CheckpointError::Entry {
            entry: name.clone(),
            message: "unknown precision tag".into(),
        })?;
        let frozen = r.u8(&name)? != 0;
        let ndim = r.u32(&name)?;
        let shape = (0..ndim).map(|_| r.u64(&name)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| CheckpointError::Entry {
            entry: name.clone(),
            message: "shape overflows".into(),
        })?;
        let width = match precision {
            Precision::F64 => 8,
            Precision::F32 => 4,
        };
        let raw = r.take(numel.saturating_mul(width), &name)?;
        let data = match precision {
            Precision::F64 => raw
                .chunks(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Precision::F32 => raw
                .chunks(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        entries.push(Entry {
            name,
            frozen,
            precision,
            shape,
            data,
        });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Header("trailing bytes after last entry".into()));
    }

    let params = rebuild(&config, &entries)?;
    Ok(Checkpoint { config, stage, params })
}

/// Builds a parameter skeleton from the config and entry names, then fills
/// it entry by entry.
fn rebuild(config: &PipelineConfig, entries: &[Entry]) -> Result<ModelParams, CheckpointError> {
    let table = entries
        .iter()
        .find(|e| e.name == "encoder.embedding.table")
        .ok_or_else(|| CheckpointError::Header("no encoder embedding entry".into()))?;
    let vocab = table.shape.first().copied().unwrap_or(0);
    let precision = entries.first().map_or(config.precision, |e| e.precision);
    let mut params = ModelParams::init(config.dims(vocab), precision, 0, 0)?;
    if !entries.iter().any(|e| e.name.starts_with("dummy.")) {
        params.dummy = None;
    }
    let n_filters = entries
        .iter()
        .filter_map(|e| e.name.strip_prefix("filter.")?.split('.').next()?.parse::<usize>().ok())
        .max()
        .unwrap_or(0);
    if n_filters > 0 {
        let proto = params.new_decoder(&mut crate::rng::Rng::new(0));
        params.filters = vec![proto; n_filters];
    }

    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors("")
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != entries.len() {
        return Err(CheckpointError::Header(format!(
            "expected {} entries for the recorded dims, found {}",
            expected.len(),
            entries.len()
        )));
    }
    for ((name, shape), e) in expected.iter().zip(entries) {
        if *name != e.name {
            return Err(CheckpointError::Entry {
                entry: e.name.clone(),
                message: format!("expected `{name}` at this position"),
            });
        }
        if *shape != e.shape {
            return Err(CheckpointError::Entry {
                entry: e.name.clone(),
                message: format!("shape {:?} does not match recorded dims {:?}", e.shape, shape),
            });
        }
    }
    let mut i = 0;
    params.visit_mut(&mut |t| {
        let e = &entries[i];
        *t = Tensor::new(e.shape.clone(), e.data.clone()).expect("shape checked");
        t.set_requires_grad(!e.frozen);
        i += 1;
    });
    Ok(params)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(ck)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

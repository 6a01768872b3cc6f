//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `LGGC`, `u32` version, 64 ASCII hex bytes of
//! the config digest, 64 of the montage digest, `u32` tensor count, then per
//! tensor: `u32` name length, UTF-8 name, `u32` rank, `u64` extents, raw `f64`.

use std::path::Path;

use thiserror::Error;

use super::{Lgg, ModelConfig, ModelError, ModelParams};
use crate::binio::{checked_numel, ReadFail, Reader, Writer};
use crate::montage::MontageGraph;
use crate::tensor::{RunningStats, Tensor};

const MAGIC: &[u8; 4] = b"LGGC";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated in {0}")]
    Truncated(&'static str),
    #[error("checkpoint {0} extents overflow")]
    ExtentOverflow(&'static str),
    #[error("checkpoint {0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("checkpoint has trailing bytes")]
    TrailingBytes,
    #[error("{what} digest mismatch: checkpoint {found}, expected {expected}")]
    DigestMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("checkpoint lacks tensor `{0}` or has it with the wrong shape")]
    Tensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<ReadFail> for CheckpointError {
    fn from(f: ReadFail) -> Self {
        match f {
            ReadFail::Truncated(s) => CheckpointError::Truncated(s),
            ReadFail::Overflow(s) => CheckpointError::ExtentOverflow(s),
            ReadFail::Utf8(s) => CheckpointError::Utf8(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: String,
    pub montage_digest: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.bytes(pad_digest(&self.config_digest).as_bytes());
        w.bytes(pad_digest(&self.montage_digest).as_bytes());
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u32(t.rank() as u32);
            for &e in t.shape() {
                w.u64(e as u64);
            }
            w.f64s(t.data());
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_digest = r.string(DIGEST_LEN, "config digest")?;
        let montage_digest = r.string(DIGEST_LEN, "montage digest")?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u32("tensor name")? as usize;
            let name = r.string(len, "tensor name")?;
            let rank = r.u32("tensor rank")?;
            let mut extents = Vec::new();
            for _ in 0..rank {
                extents.push(r.u64("tensor extents")?);
            }
            let numel = checked_numel(&extents).ok_or(CheckpointError::ExtentOverflow("tensor extents"))?;
            let data = r.f64s(numel, "tensor data")?;
            let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
            let t = Tensor::new(shape, data).map_err(|_| CheckpointError::Tensor(name.clone()))?;
            tensors.push((name, t));
        }
        if !r.is_at_end() {
            return Err(CheckpointError::TrailingBytes);
        }
        Ok(Self {
            config_digest,
            montage_digest,
            tensors,
        })
    }

    fn take(&self, name: &str) -> Result<Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| CheckpointError::Tensor(name.to_string()))
    }
}

fn pad_digest(d: &str) -> String {
    format!("{d:0<64.64}")
}

fn stats_tensors(prefix: &str, s: &RunningStats) -> [(String, Tensor); 2] {
    [
        (format!("{prefix}.running_mean"), Tensor::from_vec(s.mean.clone())),
        (format!("{prefix}.running_var"), Tensor::from_vec(s.var.clone())),
    ]
}

impl Lgg {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = self.params.trainable.clone();
        tensors.extend(stats_tensors("bn_temporal", &self.params.bn_temporal));
        if let Some(s) = &self.params.bn_global {
            tensors.extend(stats_tensors("bn_global", s));
        }
        Checkpoint {
            config_digest: self.config_digest(),
            montage_digest: self.montage_digest.clone(),
            tensors,
        }
    }

    /// Restores a model, refusing checkpoints whose digests differ from the
    /// given configuration, montage and input length.
    pub fn from_checkpoint(
        config: ModelConfig,
        montage: &MontageGraph,
        input_len: usize,
        ckpt: &Checkpoint,
    ) -> Result<Self, CheckpointError> {
        let template = Lgg::new(config.clone(), montage, input_len, 0)?;
        for (what, expected, found) in [
            ("config", template.config_digest(), &ckpt.config_digest),
            ("montage", template.montage_digest.clone(), &ckpt.montage_digest),
        ] {
            if &expected != found {
                return Err(CheckpointError::DigestMismatch {
                    what,
                    expected,
                    found: found.clone(),
                });
            }
        }
        let trainable = template
            .params
            .trainable
            .iter()
            .map(|(n, _)| Ok((n.clone(), ckpt.take(n)?)))
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        let stats = |prefix: &str| -> Result<RunningStats, CheckpointError> {
            Ok(RunningStats {
                mean: ckpt.take(&format!("{prefix}.running_mean"))?.into_data(),
                var: ckpt.take(&format!("{prefix}.running_var"))?.into_data(),
            })
        };
        let params = ModelParams {
            trainable,
            bn_temporal: stats("bn_temporal")?,
            bn_global: match template.params.bn_global {
                Some(_) => Some(stats("bn_global")?),
                None => None,
            },
        };
        Ok(Lgg::with_params(config, montage, input_len, params)?)
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    Ok(std::fs::write(path, ckpt.to_bytes())?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

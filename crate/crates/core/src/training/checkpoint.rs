use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::{EpochRecord, TrainConfig};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::patternnet::{PatternNet, PatternNetConfig, PatternNetParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PNET";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run, stored in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: PatternNetConfig,
    pub train: TrainConfig,
    pub params: PatternNetParams<f32>,
    pub optimizer: Adam<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload that follows the header.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: PatternNetConfig,
    train: TrainConfig,
    epoch: usize,
    seed: u64,
    optimizer_step: u64,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        model: &PatternNet<T>,
        optimizer: &Adam<T>,
        train: &TrainConfig,
        epoch: usize,
        history: &[EpochRecord],
    ) -> Self {
        Self {
            config: model.config.clone(),
            train: train.clone(),
            params: model.params.cast(),
            optimizer: optimizer.cast(),
            epoch,
            history: history.to_vec(),
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<PatternNet<T>> {
        PatternNet::from_parts(self.config.clone(), self.params.cast())
    }

    /// Tensors in file order: all parameters, then the Adam moments of the
    /// trainable ones.
    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let named = self.params.named_tensors();
        let trainable: Vec<&String> = named.iter().filter(|t| t.2).map(|t| &t.0).collect();
        let mut out: Vec<(String, &Tensor<f32>)> = named.iter().map(|t| (t.0.clone(), t.1)).collect();
        out.extend(trainable.iter().zip(&self.optimizer.m).map(|(n, t)| (format!("adam.m.{n}"), t)));
        out.extend(trainable.iter().zip(&self.optimizer.v).map(|(n, t)| (format!("adam.v.{n}"), t)));
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let mut offset = 0;
        let mut entries = Vec::with_capacity(tensors.len());
        for (name, t) in &tensors {
            entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += 4 * t.len();
        }
        let header = Header {
            config: self.config.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            seed: self.train.seed,
            optimizer_step: self.optimizer.step,
            history: self.history.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let json_len = word(8) as usize;
        let json = bytes.get(12..12 + json_len).ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("header: {e}")))?;
        header.config.validate()?;
        let payload = &bytes[12 + json_len..];
        let mut ckpt = Checkpoint {
            params: PatternNetParams::init(&header.config, 0)?,
            optimizer: Adam { step: header.optimizer_step, m: Vec::new(), v: Vec::new() },
            config: header.config,
            train: header.train,
            epoch: header.epoch,
            history: header.history,
        };
        let shapes: Vec<&[usize]> = ckpt.params.named_tensors().iter().filter(|t| t.2).map(|t| t.1.shape()).collect();
        ckpt.optimizer = Adam::new(&shapes);
        ckpt.optimizer.step = header.optimizer_step;
        let expected: Vec<(String, Vec<usize>)> =
            ckpt.tensors().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if expected.len() != header.tensors.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", expected.len(), header.tensors.len())));
        }
        let mut cursor = 0;
        let mut values = Vec::with_capacity(expected.len());
        for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
            if *name != entry.name || *shape != entry.shape || entry.offset != cursor {
                return Err(Error::Format(format!("unexpected tensor entry '{}'", entry.name)));
            }
            let n: usize = shape.iter().product();
            let raw = payload.get(cursor..cursor + 4 * n).ok_or_else(|| Error::Format("truncated tensor data".into()))?;
            values.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect::<Vec<_>>());
            cursor += 4 * n;
        }
        if cursor != payload.len() {
            return Err(Error::Format("trailing bytes after tensor data".into()));
        }
        let mut values = values.into_iter();
        for t in ckpt.params.tensors_mut() {
            t.data_mut().copy_from_slice(&values.next().expect("counted"));
        }
        for t in ckpt.optimizer.m.iter_mut().chain(ckpt.optimizer.v.iter_mut()) {
            t.data_mut().copy_from_slice(&values.next().expect("counted"));
        }
        if !ckpt.params.is_finite() {
            return Err(Error::Numeric("checkpoint holds non-finite parameters".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Metrics history as JSON lines, one record per epoch.
pub fn metrics_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Stagnation};
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::objectives::LossKind;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NWQC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Scheduler and early-stop counters plus the learning rate for the next
/// epoch, enough to continue a run where it left off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub lr: f64,
    pub scheduler: Stagnation,
    pub early_stop: Stagnation,
}

/// Trained weights with everything needed to use or resume them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub model: ModelConfig,
    pub stats: NormalizationStats,
    pub loss: LossKind,
    pub epoch: usize,
    pub validation_loss: f64,
    pub run_index: usize,
    pub run_seed: u64,
    pub optimizer: AdamState,
    pub progress: Progress,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    /// Readable copy; `train_max_bits` is authoritative.
    train_max: f32,
    train_max_bits: u32,
    loss: LossKind,
    epoch: usize,
    validation_loss: f64,
    run_index: usize,
    run_seed: u64,
    adam_step: u64,
    progress: Progress,
    /// Blocks follow the header in this order, each covering every tensor.
    blocks: Vec<String>,
    tensors: Vec<TensorEntry>,
}

const BLOCKS: [&str; 3] = ["params", "adam_m", "adam_v"];

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.validation_loss.is_finite() {
            return Err(Error::contract("checkpoint validation loss must be finite"));
        }
        let header = Header {
            model: self.model.clone(),
            train_max: self.stats.train_max,
            train_max_bits: self.stats.train_max.to_bits(),
            loss: self.loss.clone(),
            epoch: self.epoch,
            validation_loss: self.validation_loss,
            run_index: self.run_index,
            run_seed: self.run_seed,
            adam_step: self.optimizer.step,
            progress: self.progress,
            blocks: BLOCKS.iter().map(|s| s.to_string()).collect(),
            tensors: self.params.iter().map(|(n, t)| TensorEntry { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n = self.params.count();
        let mut out = Vec::with_capacity(12 + json.len() + 12 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| Error::contract("header too large"))?.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            t.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        for buffers in [&self.optimizer.m, &self.optimizer.v] {
            for b in buffers.iter() {
                b.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, expected NWQC"));
        }
        if bytes.len() < 12 {
            return Err(Error::format(bytes.len() as u64, "truncated header"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"));
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let header_end = 12 + word(8) as usize;
        if bytes.len() < header_end {
            return Err(Error::format(bytes.len() as u64, format!("header truncated, declares {header_end} bytes")));
        }
        let header: Header =
            serde_json::from_slice(&bytes[12..header_end]).map_err(|e| Error::format(12, format!("bad header: {e}")))?;
        if header.blocks != BLOCKS {
            return Err(Error::format(12, format!("unsupported block list {:?}", header.blocks)));
        }
        if !header.validation_loss.is_finite() {
            return Err(Error::format(12, "validation loss is not finite"));
        }
        let lens: Vec<usize> = header.tensors.iter().map(|t| t.shape.iter().product()).collect();
        let total: usize = lens.iter().sum();
        let expected = header_end + 12 * total;
        if bytes.len() < expected {
            return Err(Error::format(bytes.len() as u64, format!("payload truncated, expected {expected} bytes")));
        }
        if bytes.len() > expected {
            return Err(Error::format(expected as u64, format!("{} trailing bytes", bytes.len() - expected)));
        }

        let mut floats = bytes[header_end..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f32>>();
        let mut params = Parameters::new();
        for (entry, &len) in header.tensors.iter().zip(&lens) {
            params.insert(entry.name.clone(), Tensor::from_vec(entry.shape.clone(), take(len))?)?;
        }
        let m = lens.iter().map(|&len| take(len)).collect();
        let v = lens.iter().map(|&len| take(len)).collect();

        let stats = NormalizationStats { train_max: f32::from_bits(header.train_max_bits) };
        Ok(Self {
            params,
            model: header.model,
            stats,
            loss: header.loss,
            epoch: header.epoch,
            validation_loss: header.validation_loss,
            run_index: header.run_index,
            run_seed: header.run_seed,
            optimizer: AdamState { step: header.adam_step, m, v },
            progress: header.progress,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

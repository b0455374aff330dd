//! Single-file checkpoints.
//!
//! Layout, integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `PANETCK1` |
//! | 8 + n | length, then JSON [`CheckpointHeader`] |
//! | 8 + n | length, then model record (bincode, full precision) |
//! | 8 + n | length, then optimizer record; empty for inference-only files |
//! | 32 | SHA-256 of everything before it |

use std::path::Path;

use burn::module::Module;
use burn::record::{BinBytesRecorder, FullPrecisionSettings, Recorder};
use burn::tensor::backend::Backend;
use panet::data::Task;
use panet::model::{build_model, Model, NetworkConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::optim::LossScaler;

const MAGIC: &[u8; 8] = b"PANETCK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub task: Task,
    pub network: NetworkConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: usize,
    /// Mean foreground validation Dice at this point, when validated.
    pub val_dice: Option<f64>,
    pub best_val_dice: Option<f64>,
    pub decoupled_weight_decay: bool,
    /// Loss-scaling state of a mixed-precision run.
    pub scaler: Option<LossScaler>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Vec<u8>,
    pub optimizer: Vec<u8>,
}

type Bin = BinBytesRecorder<FullPrecisionSettings>;

pub fn model_bytes<B: Backend>(model: &Model<B>) -> Vec<u8> {
    Recorder::<B>::record(&Bin::default(), model.clone().into_record(), ()).expect("in-memory record")
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut buf = Vec::with_capacity(64 + header.len() + self.model.len() + self.optimizer.len());
        buf.extend_from_slice(MAGIC);
        for part in [&header, &self.model, &self.optimizer] {
            buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
            buf.extend_from_slice(part);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, &buf).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let fail = |reason: &str| CliError::checkpoint(path, reason);
        if buf.len() < MAGIC.len() + 32 || &buf[..MAGIC.len()] != MAGIC {
            return Err(fail("not a checkpoint file"));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("checksum mismatch; the file is truncated or corrupted"));
        }
        let mut rest = &body[MAGIC.len()..];
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            if rest.len() < 8 {
                return Err(fail("truncated section header"));
            }
            let n = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
            rest = &rest[8..];
            if rest.len() < n {
                return Err(fail("truncated section"));
            }
            parts.push(rest[..n].to_vec());
            rest = &rest[n..];
        }
        if !rest.is_empty() {
            return Err(fail("trailing bytes"));
        }
        let optimizer = parts.pop().expect("three parts");
        let model = parts.pop().expect("three parts");
        let header = serde_json::from_slice(&parts[0]).map_err(|e| fail(&format!("header: {e}")))?;
        Ok(Self {
            header,
            model,
            optimizer,
        })
    }

    /// Rebuilds the network and loads the stored weights.
    pub fn load_model<B: Backend>(&self, device: &B::Device) -> Result<Model<B>> {
        let mut cfg = self.header.network.clone();
        cfg.encoder.pretrained_weights_path = None;
        let model = build_model::<B>(&cfg, 0, device)?;
        let record = Recorder::<B>::load(&Bin::default(), self.model.clone(), device)
            .map_err(|e| CliError::Model(format!("model record: {e}")))?;
        Ok(model.load_record(record))
    }
}

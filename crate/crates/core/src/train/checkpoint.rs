//! Binary checkpoint: `MPPCKPT1` | u32 version | u64 header length | JSON
//! header | f32 parameters | f32 first moments | f32 second moments |
//! u32 CRC-32 of everything before it. Integers and floats little-endian.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{AdamHyper, AdamW};
use super::pool::TaskPool;
use super::trainer::{EpochLog, TrainState};
use crate::backbone::{handles_from_names, Avit, ModelConfig};
use crate::data::FieldRegistry;
use crate::error::{MppError, Result};
use crate::nn::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MPPCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    registry: FieldRegistry,
    tensors: Vec<(String, Vec<usize>)>,
    update: usize,
    optimizer_step: u64,
    adam: AdamHyper,
    rng: ChaCha8Rng,
    pool: TaskPool,
    log: Vec<EpochLog>,
    epoch_loss_sum: f64,
    epoch_loss_count: usize,
    best_val: Option<f64>,
}

fn push_tensors(out: &mut Vec<u8>, set: &ParamSet<f32>) {
    for t in set.tensors() {
        for &x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let p = &state.model.params;
    let header = Header {
        model: state.model.config.clone(),
        train: state.config.clone(),
        registry: state.registry.clone(),
        tensors: p.names().iter().enumerate().map(|(k, n)| (n.clone(), p.tensors()[k].shape().to_vec())).collect(),
        update: state.update,
        optimizer_step: state.opt.step,
        adam: state.opt.hyper,
        rng: state.rng.clone(),
        pool: state.pool.clone(),
        log: state.log.clone(),
        epoch_loss_sum: state.epoch_loss_sum,
        epoch_loss_count: state.epoch_loss_count,
        best_val: state.best_val,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 12 * p.num_elements() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_tensors(&mut out, p);
    push_tensors(&mut out, &state.opt.m);
    push_tensors(&mut out, &state.opt.v);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(MppError::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tensors(&mut self, shapes: &[(String, Vec<usize>)]) -> Result<ParamSet<f32>> {
        let mut set = ParamSet::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let raw = self.take(4 * n)?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            set.add(name.clone(), ArrayD::from_shape_vec(IxDyn(shape), data).map_err(|e| MppError::shape(e.to_string()))?);
        }
        Ok(set)
    }
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainState> {
    if bytes.len() < 8 + 4 + 8 + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(MppError::format(path, "not a checkpoint (bad magic)"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(MppError::Checksum { stored, computed });
    }
    let mut cur = Cursor { bytes: body, pos: 8, path };
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(MppError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(cur.take(len)?)?;
    header.model.validate()?;

    // Names and shapes must be exactly those the configuration produces.
    let probe = Avit::<f32>::new(header.model.clone(), header.registry.len(), 0)?;
    let expected: Vec<(String, Vec<usize>)> = probe
        .params
        .names()
        .iter()
        .zip(probe.params.tensors())
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    if expected != header.tensors {
        return Err(MppError::format(path, "parameter names or shapes do not match the stored model configuration and registry"));
    }
    let params = cur.tensors(&header.tensors)?;
    let m = cur.tensors(&header.tensors)?;
    let v = cur.tensors(&header.tensors)?;
    if cur.pos != body.len() {
        return Err(MppError::format(path, "trailing bytes after optimizer state"));
    }
    let handles = handles_from_names(&header.model, &params)?;
    Ok(TrainState {
        model: Avit {
            config: header.model,
            params,
            handles,
        },
        registry: header.registry,
        opt: AdamW {
            hyper: header.adam,
            step: header.optimizer_step,
            m,
            v,
        },
        config: header.train,
        update: header.update,
        rng: header.rng,
        pool: header.pool,
        log: header.log,
        epoch_loss_sum: header.epoch_loss_sum,
        epoch_loss_count: header.epoch_loss_count,
        best_val: header.best_val,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    parse_checkpoint(&bytes, path)
}

//! Checkpoint file: 8-byte magic, `u32` version, `u64` header length, a JSON
//! header naming every parameter in order, then one flat tensor record per
//! parameter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use uhddip_tensor::io::{read_tensor, write_tensor};
use uhddip_tensor::Scalar;

use crate::config::NetConfig;
use crate::error::{CoreError, Result};
use crate::model::Model;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"UHDDIPCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub net: NetConfig,
    pub seed: u64,
    /// Training iterations completed when the checkpoint was written.
    pub iterations: usize,
    pub params: Vec<ParamRecord>,
}

impl CheckpointHeader {
    /// Total scalar count over all records.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(out: &mut W, model: &Model<T>, iterations: usize) -> Result<()> {
    let store = model.params();
    let header = CheckpointHeader {
        net: model.config().clone(),
        seed: model.seed(),
        iterations,
        params: store.iter().map(|(n, t)| ParamRecord { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for t in store.values() {
        write_tensor(out, t)?;
    }
    Ok(())
}

pub fn read_header<R: Read>(inp: &mut R) -> Result<CheckpointHeader> {
    let mut magic = [0u8; 8];
    inp.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CoreError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    inp.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    inp.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(CoreError::Checkpoint(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    inp.read_exact(&mut json)?;
    Ok(serde_json::from_slice(&json)?)
}

/// Reads a checkpoint, rebuilding the architecture from its header and
/// checking every record against it.
pub fn read_checkpoint<T: Scalar, R: Read>(inp: &mut R) -> Result<(Model<T>, CheckpointHeader)> {
    let header = read_header(inp)?;
    let mut model = Model::<T>::new(&header.net, header.seed)?;
    let store = model.params_mut();
    if store.len() != header.params.len() {
        return Err(CoreError::Checkpoint(format!(
            "header lists {} parameters, architecture has {}",
            header.params.len(),
            store.len()
        )));
    }
    for (i, rec) in header.params.iter().enumerate() {
        let expected = &store.names()[i];
        if &rec.name != expected {
            return Err(CoreError::Checkpoint(format!("parameter {i} is '{}', expected '{expected}'", rec.name)));
        }
        let t = read_tensor::<T, _>(inp)?;
        if t.shape() != rec.shape.as_slice() || t.shape() != store.values()[i].shape() {
            return Err(CoreError::Checkpoint(format!("parameter '{}' has shape {:?}", rec.name, t.shape())));
        }
        store.values_mut()[i] = t;
    }
    Ok((model, header))
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &Model<T>, iterations: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, iterations)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(Model<T>, CheckpointHeader)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

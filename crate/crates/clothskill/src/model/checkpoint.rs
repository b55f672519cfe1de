//! Checkpoint format: magic `CAFM`, a schema version, the model config as a
//! JSON header, then named tensors (name, rank, dims, little-endian f32
//! data). Adam moments and progress counters ride along as prefixed tensors
//! so training resumes exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{validate_shapes, TensorMap};
use super::tensor::Tensor;
use super::train::TrainState;
use super::{ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CAFM";
const CHECKPOINT_VERSION: u32 = 1;

const ADAM_M_PREFIX: &str = "adam_m.";
const ADAM_V_PREFIX: &str = "adam_v.";
const META_NAME: &str = "train_meta";

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_tensor<W: Write>(w: &mut W, name: &str, tensor: &Tensor) -> std::io::Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, tensor.dims.len() as u32)?;
    for &d in &tensor.dims {
        write_u32(w, d as u32)?;
    }
    for &v in &tensor.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Tensor), ModelError> {
    let name_len = read_u32(r)? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| ModelError::CheckpointFormat("tensor name is not utf-8".to_string()))?;
    let rank = read_u32(r)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)? as usize);
    }
    let len: usize = dims.iter().product();
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((name, Tensor { dims, data }))
}

pub fn write_checkpoint(
    path: &Path,
    config: &ModelConfig,
    state: &TrainState,
) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    let header = serde_json::to_string(config)
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    write_u32(&mut w, header.len() as u32)?;
    w.write_all(header.as_bytes())?;

    let count = state.params.len() * 3 + 1;
    write_u32(&mut w, count as u32)?;
    for (name, tensor) in state.params.iter() {
        write_tensor(&mut w, name, tensor)?;
    }
    for (name, tensor) in state.adam_m.iter() {
        write_tensor(&mut w, &format!("{ADAM_M_PREFIX}{name}"), tensor)?;
    }
    for (name, tensor) in state.adam_v.iter() {
        write_tensor(&mut w, &format!("{ADAM_V_PREFIX}{name}"), tensor)?;
    }
    let meta = Tensor::from_vec(&[2], vec![state.epochs_done as f64, state.steps_done as f64]);
    write_tensor(&mut w, META_NAME, &meta)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelConfig, TrainState), ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::CheckpointFormat(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointFormat(format!("unsupported version {version}")));
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let config: ModelConfig = serde_json::from_slice(&header)
        .map_err(|e| ModelError::CheckpointFormat(format!("bad config header: {e}")))?;
    config.validate()?;

    let count = read_u32(&mut r)? as usize;
    let mut params = TensorMap::new();
    let mut adam_m = TensorMap::new();
    let mut adam_v = TensorMap::new();
    let mut meta: Option<Tensor> = None;
    for _ in 0..count {
        let (name, tensor) = read_tensor(&mut r)?;
        if let Some(rest) = name.strip_prefix(ADAM_M_PREFIX) {
            adam_m.insert(rest, tensor);
        } else if let Some(rest) = name.strip_prefix(ADAM_V_PREFIX) {
            adam_v.insert(rest, tensor);
        } else if name == META_NAME {
            meta = Some(tensor);
        } else {
            params.insert(name, tensor);
        }
    }
    validate_shapes(&params, &config)?;
    validate_shapes(&adam_m, &config)?;
    validate_shapes(&adam_v, &config)?;
    let meta = meta.ok_or_else(|| ModelError::CheckpointFormat("missing train_meta".to_string()))?;
    if meta.data.len() != 2 {
        return Err(ModelError::CheckpointFormat("train_meta must hold two values".to_string()));
    }
    let state = TrainState {
        params,
        adam_m,
        adam_v,
        epochs_done: meta.data[0] as usize,
        steps_done: meta.data[1] as u64,
    };
    Ok((config, state))
}

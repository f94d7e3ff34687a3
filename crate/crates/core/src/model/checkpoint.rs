//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes   "EXCKPT\0\0"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON: {"version", "config", "head", "tensors": [{"name", "shape"}]}
//! data       f64 LE, tensors back to back in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderModel, HeadKind, ModelError};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"EXCKPT\0\0";

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: EncoderConfig,
    head: HeadKind,
    tensors: Vec<TensorHeader>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &EncoderModel, mut w: W) -> Result<(), ModelError> {
    let tensors = model.params().tensors();
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        head: model.head_kind(),
        tensors: tensors
            .iter()
            .map(|(info, _)| TensorHeader {
                name: info.name.clone(),
                shape: info.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    let io = |e: std::io::Error| bad(e.to_string());
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    let mut buf = Vec::new();
    for (_, data) in tensors {
        buf.clear();
        buf.extend(data.iter().flat_map(|x| x.to_le_bytes()));
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EncoderModel, ModelError> {
    let io = |e: std::io::Error| bad(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut long = [0u8; 8];
    r.read_exact(&mut long).map_err(io)?;
    let header_len = u64::from_le_bytes(long) as usize;
    if header_len > 1 << 30 {
        return Err(bad("header too large"));
    }
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != version {
        return Err(bad("header version disagrees with preamble"));
    }

    let mut model = EncoderModel::init(header.config, header.head)?;
    let tensors = model.params_mut().tensors_mut();
    if tensors.len() != header.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, header lists {}",
            tensors.len(),
            header.tensors.len()
        )));
    }
    for ((info, data), th) in tensors.into_iter().zip(&header.tensors) {
        if info.name != th.name || info.shape != th.shape {
            return Err(bad(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                th.name, th.shape, info.name, info.shape
            )));
        }
        let mut bytes = vec![0u8; data.len() * 8];
        r.read_exact(&mut bytes).map_err(io)?;
        for (x, chunk) in data.iter_mut().zip(bytes.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    if !model.params().all_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &EncoderModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_checkpoint(model, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderModel, ModelError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(std::io::BufReader::new(file))
}

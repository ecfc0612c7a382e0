//! Model files.
//!
//! Binary container, little-endian:
//!
//! ```text
//! "FCMDL1" | u32 version | u32 header length | header JSON
//! u32 tensor count
//! per tensor: u16 name length | name | u32 rank | rank × u64 dims | f32 data
//! ```
//!
//! Next to `model.bin` sits `model.manifest.json` listing tensor names,
//! shapes, and the SHA-256 of the binary file.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{ModelParams, ModelShape, TENSOR_NAMES};
use super::train::TrainConfig;
use crate::encode::EncoderConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"FCMDL1";
pub const FORMAT_VERSION: u32 = 1;

/// Configuration echo stored with the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub shape: ModelShape,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorInfo>,
    pub sha256: String,
}

pub fn manifest_path(model: &Path) -> PathBuf {
    model.with_extension("manifest.json")
}

fn encode(params: &ModelParams<f32>, header: &ModelHeader) -> Result<Vec<u8>> {
    let mut buf = MAGIC.to_vec();
    buf.extend(FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(header)?;
    buf.extend((json.len() as u32).to_le_bytes());
    buf.extend(json);
    buf.extend((TENSOR_NAMES.len() as u32).to_le_bytes());
    for ((name, shape), data) in TENSOR_NAMES
        .iter()
        .zip(params.shape.tensor_shapes())
        .zip(&params.tensors)
    {
        buf.extend((name.len() as u16).to_le_bytes());
        buf.extend(name.as_bytes());
        buf.extend((shape.len() as u32).to_le_bytes());
        for d in &shape {
            buf.extend((*d as u64).to_le_bytes());
        }
        for x in data {
            buf.extend(x.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes the model and its manifest; returns the manifest.
pub fn save_model(path: impl AsRef<Path>, params: &ModelParams<f32>, header: &ModelHeader) -> Result<ModelManifest> {
    let path = path.as_ref();
    let bytes = encode(params, header)?;
    let manifest = ModelManifest {
        format: "FCMDL1".into(),
        version: FORMAT_VERSION,
        tensors: TENSOR_NAMES
            .iter()
            .zip(params.shape.tensor_shapes())
            .map(|(n, s)| TensorInfo {
                name: n.to_string(),
                shape: s,
            })
            .collect(),
        sha256: hex(&Sha256::digest(&bytes)),
    };
    fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mpath = manifest_path(path);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(&mpath, json).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    Ok(manifest)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
        Ok(b)
    }

    fn vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format {
        kind: "model",
        message: message.into(),
    }
}

pub fn read_model(reader: impl Read) -> Result<(ModelHeader, ModelParams<f32>)> {
    let mut r = Cursor { inner: reader };
    if &r.bytes::<6>()? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let header: ModelHeader = serde_json::from_slice(&r.vec(len)?)?;
    let mut params = ModelParams::<f32>::zeros(header.shape);
    let count = r.u32()? as usize;
    if count != TENSOR_NAMES.len() {
        return Err(bad(format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
    }
    for (i, expected) in header.shape.tensor_shapes().iter().enumerate() {
        let name_len = usize::from(r.u16()?);
        let name = String::from_utf8(r.vec(name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        if name != TENSOR_NAMES[i] {
            return Err(bad(format!("expected tensor `{}`, found `{name}`", TENSOR_NAMES[i])));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != expected {
            return Err(bad(format!("tensor `{name}` has shape {dims:?}, expected {expected:?}")));
        }
        let raw = r.vec(params.tensors[i].len() * 4)?;
        for (x, b) in params.tensors[i].iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok((header, params))
}

/// Loads a model, checking it against its manifest when one is present.
pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelHeader, ModelParams<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mpath = manifest_path(path);
    if mpath.exists() {
        let file = File::open(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
        let manifest: ModelManifest = serde_json::from_reader(BufReader::new(file))?;
        if manifest.sha256 != hex(&Sha256::digest(&bytes)) {
            return Err(bad("checksum does not match manifest"));
        }
    }
    read_model(bytes.as_slice())
}

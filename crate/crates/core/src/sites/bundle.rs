//! Sealed on-disk container for trained models.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "PHNTMNET"
//! version    u32      FORMAT_VERSION
//! header_len u64
//! header     JSON     { format_version, metadata, tensors, payload_sha256 }
//! payload    f32 LE   one blob per tensor, at the offsets listed in the header
//! trailer    32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Every tensor carries a role. Per-sample data is refused by the writer, so
//! nothing derived from individual training samples can leave a site.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::{BatchNorm, DenseLayer, LayerSpec, Network};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PHNTMNET";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const TRAILER_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Parameter,
    /// Aggregate statistic over a whole dataset (batch-norm running moments).
    RunningStatistic,
    /// Anything indexed by training sample. Never serialisable.
    PerSample,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    pub role: TensorRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header<M> {
    pub format_version: u32,
    pub metadata: M,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

/// Named `f32` tensors staged for writing or read back from a container.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorStore {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: &[f32], role: TensorRole) -> Result<()> {
        if role == TensorRole::PerSample {
            return Err(Error::Membrane(format!(
                "tensor `{name}` holds per-sample data and cannot be serialised"
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor `{name}` has shape {shape:?} but {} values",
                data.len()
            )));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::State(format!("duplicate tensor name `{name}`")));
        }
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.payload.len(),
            role,
        });
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::State(format!("missing tensor `{name}`")))?;
        let n: usize = e.shape.iter().product();
        let bytes = &self.payload[e.offset..e.offset + 4 * n];
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok((e.shape.clone(), data))
    }

    fn get_1d(&self, name: &str, len: usize) -> Result<ndarray::Array1<f32>> {
        let (shape, data) = self.get(name)?;
        if shape != [len] {
            return Err(Error::Shape(format!("tensor `{name}` has shape {shape:?}, expected [{len}]")));
        }
        Ok(ndarray::Array1::from_vec(data))
    }

    pub fn push_network(&mut self, prefix: &str, net: &Network<f32>) -> Result<()> {
        for (i, layer) in net.layers().iter().enumerate() {
            let p = format!("{prefix}.{i}");
            let slice = |a: &ndarray::Array1<f32>| a.as_slice().expect("standard layout").to_vec();
            self.push(
                &format!("{p}.weights"),
                layer.weights.shape(),
                layer.weights.as_slice().expect("standard layout"),
                TensorRole::Parameter,
            )?;
            self.push(&format!("{p}.bias"), layer.bias.shape(), &slice(&layer.bias), TensorRole::Parameter)?;
            if let Some(bn) = &layer.norm {
                let w = [bn.gamma.len()];
                self.push(&format!("{p}.gamma"), &w, &slice(&bn.gamma), TensorRole::Parameter)?;
                self.push(&format!("{p}.beta"), &w, &slice(&bn.beta), TensorRole::Parameter)?;
                self.push(&format!("{p}.running_mean"), &w, &slice(&bn.running_mean), TensorRole::RunningStatistic)?;
                self.push(&format!("{p}.running_var"), &w, &slice(&bn.running_var), TensorRole::RunningStatistic)?;
            }
        }
        Ok(())
    }

    pub fn network(&self, prefix: &str, spec: &[LayerSpec]) -> Result<Network<f32>> {
        let mut layers = Vec::with_capacity(spec.len());
        for (i, s) in spec.iter().enumerate() {
            s.validate()?;
            let p = format!("{prefix}.{i}");
            let (shape, w) = self.get(&format!("{p}.weights"))?;
            if shape != [s.inputs, s.outputs] {
                return Err(Error::Shape(format!(
                    "tensor `{p}.weights` has shape {shape:?}, expected [{}, {}]",
                    s.inputs, s.outputs
                )));
            }
            let weights = ndarray::Array2::from_shape_vec((s.inputs, s.outputs), w).expect("shape checked");
            let bias = self.get_1d(&format!("{p}.bias"), s.outputs)?;
            let mut layer = DenseLayer::new(weights, bias, s.activation)?;
            if s.batch_norm {
                layer.norm = Some(BatchNorm {
                    gamma: self.get_1d(&format!("{p}.gamma"), s.outputs)?,
                    beta: self.get_1d(&format!("{p}.beta"), s.outputs)?,
                    running_mean: self.get_1d(&format!("{p}.running_mean"), s.outputs)?,
                    running_var: self.get_1d(&format!("{p}.running_var"), s.outputs)?,
                });
            }
            layer.dropout = s.dropout;
            layers.push(layer);
        }
        Network::new(layers)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialises a container to bytes. Identical inputs give identical bytes.
pub fn encode<M: Serialize>(metadata: &M, store: &TensorStore) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        metadata,
        tensors: store.entries.clone(),
        payload_sha256: sha256_hex(&store.payload),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::State(format!("cannot encode header: {e}")))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + store.payload.len() + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&store.payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes atomically (temporary file + rename). Returns the whole-file
/// checksum in hex.
pub fn write<M: Serialize>(path: impl AsRef<Path>, metadata: &M, store: &TensorStore) -> Result<String> {
    let path = path.as_ref();
    let bytes = encode(metadata, store)?;
    let checksum = hex::encode(&bytes[bytes.len() - TRAILER_LEN..]);
    let mut tmp = PathBuf::from(path);
    tmp.set_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(checksum)
}

/// Decodes and fully validates a container held in memory.
pub fn decode<M: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<(Header<M>, TensorStore, String)> {
    let integrity = |reason: String| Error::Integrity {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < PREFIX_LEN + TRAILER_LEN {
        return Err(integrity(format!("file of {} bytes is too short", bytes.len())));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(integrity("checksum mismatch".into()));
    }
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if &body[..8] != MAGIC {
        return Err(format("not a phantomnet container".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| format("header length exceeds file".into()))?;
    let header: Header<M> =
        serde_json::from_slice(&body[PREFIX_LEN..header_end]).map_err(|e| format(format!("bad header: {e}")))?;
    let payload = &body[header_end..];
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(integrity("payload checksum mismatch".into()));
    }
    let mut expected_offset = 0;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != expected_offset || e.offset + 4 * n > payload.len() {
            return Err(format(format!("tensor `{}` lies outside the payload", e.name)));
        }
        if e.role == TensorRole::PerSample {
            return Err(Error::Membrane(format!("container carries per-sample tensor `{}`", e.name)));
        }
        expected_offset += 4 * n;
    }
    if expected_offset != payload.len() {
        return Err(format("payload has trailing bytes".into()));
    }
    let store = TensorStore {
        entries: header.tensors.clone(),
        payload: payload.to_vec(),
    };
    Ok((header, store, hex::encode(trailer)))
}

pub fn read<M: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(Header<M>, TensorStore, String)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{param_specs, Retriever, RetrieverConfig};
use crate::dataio::{read_locked, write_locked};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

const MAGIC: &[u8; 8] = b"DOCENTCK";
const FORMAT_VERSION: u32 = 1;

/// Versions of the frozen feature sources a checkpoint was trained on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderHashes {
    pub text: String,
    pub visual: String,
    pub images: String,
    pub patch: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub retriever: Retriever,
    pub encoders: EncoderHashes,
    /// Free-form training facts (epoch, metric, seed).
    pub info: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: RetrieverConfig,
    encoders: EncoderHashes,
    info: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

/// Magic, header length, JSON header, then every tensor as little-endian
/// f64 in header order, row-major.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let params = &ck.retriever.params;
    let header = Header {
        format_version: FORMAT_VERSION,
        config: ck.retriever.config.clone(),
        encoders: ck.encoders.clone(),
        info: ck.info.clone(),
        tensors: params.iter().map(|(n, t)| TensorEntry { name: n.to_string(), shape: t.dim() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + params.num_values() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in params.iter() {
        for x in t.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_locked(path, &buf)
}

/// Loads and checks a checkpoint. With `expected`, any configuration
/// difference is an error.
pub fn load_checkpoint(path: &Path, expected: Option<&RetrieverConfig>) -> Result<Checkpoint> {
    let bytes = read_locked(path)?;
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?)?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("format version {} unsupported", header.format_version)));
    }
    if let Some(exp) = expected {
        if exp != &header.config {
            return Err(bad(format!("config mismatch: file has {:?}, expected {:?}", header.config, exp)));
        }
    }
    let specs = param_specs(&header.config);
    let want: BTreeMap<&str, (usize, usize)> = specs.iter().map(|s| (s.name.as_str(), s.shape)).collect();
    let have: BTreeMap<&str, (usize, usize)> = header.tensors.iter().map(|t| (t.name.as_str(), t.shape)).collect();
    if want != have {
        return Err(bad("tensor names or shapes do not match the config".into()));
    }
    let body = &bytes[16 + hlen..];
    let total: usize = header.tensors.iter().map(|t| t.shape.0 * t.shape.1).sum();
    if body.len() != total * 8 {
        return Err(bad(format!("body holds {} bytes, header needs {}", body.len(), total * 8)));
    }
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut params = ParamStore::default();
    for t in &header.tensors {
        let data: Vec<f64> = vals.by_ref().take(t.shape.0 * t.shape.1).collect();
        params.insert(&t.name, Array2::from_shape_vec(t.shape, data).expect("sized by header"));
    }
    Ok(Checkpoint { retriever: Retriever { config: header.config, params }, encoders: header.encoders, info: header.info })
}

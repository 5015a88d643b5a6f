use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DocumentFeatures, EntityFeatures, TEXT_DIM, VISUAL_DIM};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DOCFEAT1";

#[derive(Serialize, Deserialize)]
struct Header {
    document_id: String,
    encoder_hash: u64,
    page_sizes: Vec<(f64, f64)>,
    entities: Vec<EntityFeatures>,
    page_token_rows: Vec<usize>,
}

/// One blob per (document_id, encoder hash) under a directory.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache { dir: dir.into() }
    }

    pub fn load(&self, document_id: &str, encoder_hash: u64) -> Result<Option<DocumentFeatures>> {
        load_cached(&cache_path(&self.dir, document_id, encoder_hash), encoder_hash)
    }

    pub fn store(&self, f: &DocumentFeatures) -> Result<()> {
        store_cached(&cache_path(&self.dir, &f.document_id, f.encoder_hash), f)
    }
}

pub fn cache_path(dir: &Path, document_id: &str, encoder_hash: u64) -> PathBuf {
    let safe: String = document_id.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    dir.join(format!("{safe}-{encoder_hash:016x}.feat"))
}

pub fn store_cached(path: &Path, f: &DocumentFeatures) -> Result<()> {
    let header = Header {
        document_id: f.document_id.clone(),
        encoder_hash: f.encoder_hash,
        page_sizes: f.page_sizes.clone(),
        entities: f.entities.clone(),
        page_token_rows: f.page_tokens.iter().map(|t| t.nrows()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + f.entities.len() * (TEXT_DIM + VISUAL_DIM) * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let mut push = |xs: &mut dyn Iterator<Item = &f64>| {
        for x in xs {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    };
    for e in &f.entities {
        push(&mut e.t.iter());
        push(&mut e.v.iter());
    }
    for t in &f.page_tokens {
        push(&mut t.iter());
    }
    crate::dataio::write_locked(path, &buf)
}

/// `None` when the file is absent or was written under another encoder hash.
pub fn load_cached(path: &Path, encoder_hash: u64) -> Result<Option<DocumentFeatures>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = crate::dataio::read_locked(path)?;
    let bad = |m: &str| Error::Schema { path: path.display().to_string(), message: m.to_string() };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a feature cache file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?)?;
    if header.encoder_hash != encoder_hash {
        return Ok(None);
    }
    let body = &bytes[16 + hlen..];
    let total = header.entities.len() * (TEXT_DIM + VISUAL_DIM) + header.page_token_rows.iter().sum::<usize>() * TEXT_DIM;
    if body.len() != total * 8 {
        return Err(bad("body length does not match header"));
    }
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
    let mut entities = header.entities;
    for e in &mut entities {
        e.t = Array1::from(take(TEXT_DIM));
        e.v = Array1::from(take(VISUAL_DIM));
    }
    let page_tokens = header
        .page_token_rows
        .iter()
        .map(|&r| Array2::from_shape_vec((r, TEXT_DIM), take(r * TEXT_DIM)).expect("sized by header"))
        .collect();
    Ok(Some(DocumentFeatures {
        document_id: header.document_id,
        encoder_hash: header.encoder_hash,
        page_sizes: header.page_sizes,
        entities,
        page_tokens,
    }))
}

//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, little-endian u32 format version, little-endian u64
//! header length, a JSON header, then one f64 little-endian payload. The
//! header carries everything needed to rebuild the model object (config,
//! seed, subject key maps, optimizer state, training log) plus a
//! name -> (offset, shape) index into the payload; the payload holds each
//! parameter's value, first- and second-moment blobs back to back, in store
//! order.
//!
//! Round-trips are bitwise: loading re-registers parameters in the header's
//! order, so saving the loaded model reproduces the original file byte for
//! byte.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaModel, ModelConfig};
use crate::nn::{Adam, AdamConfig};
use crate::scalar::Scalar;

use super::train::StageSummary;

const MAGIC: &[u8; 8] = b"CAMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct AdamState {
    cfg: AdamConfig,
    t: u64,
}

/// Index entry: where a parameter's blobs live in the payload, in f64
/// elements. The value blob starts at `offset`; the moment blobs follow at
/// `offset + len` and `offset + 2 * len`.
#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    adam: AdamState,
    /// (subject, channels) for every registered key map.
    subjects: Vec<(String, usize)>,
    params: Vec<ParamEntry>,
    log: Vec<StageSummary>,
}

pub struct LoadedCheckpoint<S: Scalar> {
    pub model: CaModel<S>,
    pub adam: Adam,
    pub log: Vec<StageSummary>,
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &CaModel<S>,
    adam: &Adam,
    log: &[StageSummary],
) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for p in model.store.iter() {
        let len = p.value.len() as u64;
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += 3 * len;
    }
    let header = Header {
        config: model.cfg().clone(),
        seed: model.seed(),
        adam: AdamState { cfg: adam.cfg, t: adam.t },
        subjects: model.subjects().map(|(s, c)| (s.to_string(), c)).collect(),
        params: entries,
        log: log.to_vec(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header: {e}")))?;

    let mut bytes =
        Vec::with_capacity(20 + header_json.len() + offset as usize * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in model.store.iter() {
        for blob in [p.value.data(), p.m.data(), p.v.data()] {
            for &x in blob {
                bytes.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<LoadedCheckpoint<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{} is not a model checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload_start = 20 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Format("checkpoint truncated inside the header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[20..payload_start])
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let payload = &bytes[payload_start..];
    if payload.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64s".into()));
    }
    let elems: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut model = CaModel::<S>::new(header.config, header.seed)?;
    let channels: HashMap<&str, usize> =
        header.subjects.iter().map(|(s, c)| (s.as_str(), *c)).collect();
    // Key maps are re-registered in header order so the rebuilt store has
    // the exact parameter layout the file was written from.
    for entry in &header.params {
        if let Some(subject) = entry.name.strip_prefix("key.") {
            let c = *channels.get(subject).ok_or_else(|| {
                Error::Format(format!("key map {} has no subjects entry", entry.name))
            })?;
            model.register_subject(subject, c)?;
        }
    }
    if model.store.len() != header.params.len() {
        return Err(Error::Format(format!(
            "config rebuilds {} parameters, header lists {}",
            model.store.len(),
            header.params.len()
        )));
    }

    for entry in &header.params {
        let id = model.store.id(&entry.name).ok_or_else(|| {
            Error::Format(format!("parameter {} does not exist under this config", entry.name))
        })?;
        let p = model.store.param_mut(id);
        if p.value.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {}: shape {:?} in file, {:?} in model",
                entry.name,
                entry.shape,
                p.value.shape()
            )));
        }
        let len = p.value.len();
        let start = entry.offset as usize;
        let end = start + 3 * len;
        if end > elems.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated: parameter {} wants payload {start}..{end}, have {}",
                entry.name,
                elems.len()
            )));
        }
        for (dst, src) in [
            (p.value.data_mut(), &elems[start..start + len]),
            (p.m.data_mut(), &elems[start + len..start + 2 * len]),
            (p.v.data_mut(), &elems[start + 2 * len..end]),
        ] {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = S::of(s);
            }
        }
    }

    let adam = Adam { cfg: header.adam.cfg, t: header.adam.t };
    Ok(LoadedCheckpoint { model, adam, log: header.log })
}

//! FHCK checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content                                               |
//! |-------|-------------------------------------------------------|
//! | 4     | magic `FHCK`                                          |
//! | 4     | format version (u32)                                  |
//! | 4     | manifest length in bytes (u32)                        |
//! | n     | manifest, UTF-8 JSON                                  |
//! | ...   | tensor blobs, f64 little-endian, at manifest offsets  |
//! | 4     | CRC32 of every preceding byte                         |
//!
//! The manifest names every blob (parameters and optimizer moments) with
//! its shape and byte offset, and carries the config snapshot, the
//! vocabulary and the best validation BLEU-4.

use std::fs;
use std::path::Path;

use film_hred_core::optim::{AmsgradConfig, AmsgradState};
use film_hred_core::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"FHCK";
pub const VERSION: u32 = 1;
const HEADER: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub optimizer: Option<AmsgradState>,
    /// `key = value` snapshot of the run configuration.
    pub config: String,
    pub vocabulary: Vec<String>,
    pub best_bleu4: f64,
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    best_bleu4: f64,
    best_epoch: usize,
    config: String,
    vocabulary: Vec<String>,
    optimizer: Option<OptimizerEntry>,
    tensors: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    offset: usize,
    trainable: bool,
}

#[derive(Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    M,
    V,
    VHat,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut blobs: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: &str, role: Role, shape: &[usize], trainable: bool, data: &[f64]| {
        tensors.push(BlobEntry {
            name: name.to_string(),
            role,
            shape: shape.to_vec(),
            offset: blobs.len(),
            trainable,
        });
        for x in data {
            blobs.extend_from_slice(&x.to_le_bytes());
        }
    };
    for (name, t) in ck.params.iter() {
        push(name, Role::Param, t.shape().dims(), t.requires_grad, t.data());
    }
    if let Some(opt) = &ck.optimizer {
        for (role, moments) in [(Role::M, &opt.m), (Role::V, &opt.v), (Role::VHat, &opt.v_hat)] {
            for ((name, t), data) in ck.params.iter().zip(moments) {
                push(name, role, t.shape().dims(), false, data);
            }
        }
    }
    let manifest = Manifest {
        best_bleu4: ck.best_bleu4,
        best_epoch: ck.best_epoch,
        config: ck.config.clone(),
        vocabulary: ck.vocabulary.clone(),
        optimizer: ck.optimizer.as_ref().map(|o| OptimizerEntry {
            lr: o.config.lr,
            beta1: o.config.beta1,
            beta2: o.config.beta2,
            eps: o.config.eps,
            steps: o.steps,
        }),
        tensors,
    };
    let text = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER + text.len() + blobs.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&blobs);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn crc_error(bytes: &[u8]) -> Option<FormatError> {
    let n = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[n..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..n]);
    (stored != computed).then_some(FormatError::Checksum { stored, computed })
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, FormatError> {
    let truncated = |needed| FormatError::Truncated { needed, len: bytes.len() };
    if bytes.len() < 4 {
        return Err(truncated(HEADER + 4));
    }
    if bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: bytes[..4].to_vec(),
        });
    }
    if bytes.len() < HEADER {
        return Err(truncated(HEADER + 4));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::Version { found: version, expected: VERSION });
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let blob_start = HEADER + mlen;
    if bytes.len() < blob_start + 4 {
        return Err(truncated(blob_start + 4));
    }
    let manifest: Manifest = match serde_json::from_slice(&bytes[HEADER..blob_start]) {
        Ok(m) => m,
        Err(e) => return Err(crc_error(bytes).unwrap_or_else(|| FormatError::Layout(format!("manifest: {e}")))),
    };
    let mut blob_len = 0usize;
    for t in &manifest.tensors {
        let end = t
            .shape
            .iter()
            .try_fold(8usize, |n, d| n.checked_mul(*d))
            .and_then(|n| n.checked_add(t.offset))
            .filter(|end| *end <= usize::MAX / 2)
            .ok_or_else(|| FormatError::Layout(format!("blob {} is out of range", t.name)))?;
        blob_len = blob_len.max(end);
    }
    let total = blob_start + blob_len + 4;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    if bytes.len() > total {
        return Err(FormatError::TrailingBytes(bytes.len() - total));
    }
    if let Some(e) = crc_error(bytes) {
        return Err(e);
    }
    let blobs = &bytes[blob_start..total - 4];
    let read = |e: &BlobEntry| -> Vec<f64> {
        let n: usize = e.shape.iter().product();
        blobs[e.offset..e.offset + 8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    };
    let layout = |m: String| FormatError::Layout(m);

    let mut params = ParamSet::new();
    let mut moments: [Vec<Vec<f64>>; 3] = Default::default();
    for e in &manifest.tensors {
        match e.role {
            Role::Param => {
                if params.lookup(&e.name).is_some() {
                    return Err(layout(format!("duplicate parameter {}", e.name)));
                }
                let mut t = Tensor::new(e.shape.as_slice(), read(e)).map_err(|err| layout(err.to_string()))?;
                t.requires_grad = e.trainable;
                params.insert(e.name.clone(), t);
            }
            role => {
                let slot = match role {
                    Role::M => 0,
                    Role::V => 1,
                    _ => 2,
                };
                let k = moments[slot].len();
                let expected = params.ids().nth(k).map(|id| (params.name(id).to_string(), params.get(id).shape().dims().to_vec()));
                if expected.as_ref() != Some(&(e.name.clone(), e.shape.clone())) {
                    return Err(layout(format!("optimizer moment {} does not follow the parameter order", e.name)));
                }
                moments[slot].push(read(e));
            }
        }
    }
    let optimizer = match manifest.optimizer {
        None => {
            if moments.iter().any(|m| !m.is_empty()) {
                return Err(layout("optimizer moments without optimizer settings".into()));
            }
            None
        }
        Some(o) => {
            if moments.iter().any(|m| m.len() != params.len()) {
                return Err(layout("optimizer moments do not cover every parameter".into()));
            }
            let [m, v, v_hat] = moments;
            Some(AmsgradState {
                config: AmsgradConfig {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                },
                m,
                v,
                v_hat,
                steps: o.steps,
            })
        }
    };
    Ok(Checkpoint {
        params,
        optimizer,
        config: manifest.config,
        vocabulary: manifest.vocabulary,
        best_bleu4: manifest.best_bleu4,
        best_epoch: manifest.best_epoch,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::format(path.display().to_string(), e))
}

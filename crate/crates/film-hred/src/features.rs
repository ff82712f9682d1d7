//! MMF1 feature files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                              |
//! |--------------|--------------------------------------|
//! | 4            | magic `MMF1`                         |
//! | 1            | dtype, 1 = f32                       |
//! | 1            | ndim                                 |
//! | 2            | reserved, written as 0               |
//! | 4 * ndim     | dims (u32)                           |
//! | 4 * prod     | row-major f32 payload                |
//! | 4            | CRC32 of every preceding byte        |
//!
//! Tracks are written with `ndim = 2` (`[rows, dims]`); a 1-d file is read
//! as a single row.

use std::fs;
use std::path::{Path, PathBuf};

use film_hred_core::data::{FeatureTrack, Modality};

use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"MMF1";
const DTYPE_F32: u8 = 1;

pub fn encode_features(track: &FeatureTrack) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * track.values().len());
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F32);
    out.push(2);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(track.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(track.dims() as u32).to_le_bytes());
    for v in track.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an MMF1 file. The modality comes from `tag` when given, otherwise
/// from the feature width (1024 video, 128 audio).
pub fn decode_features(bytes: &[u8], tag: Option<Modality>) -> std::result::Result<FeatureTrack, FormatError> {
    let truncated = |needed| FormatError::Truncated { needed, len: bytes.len() };
    if bytes.len() < 4 {
        return Err(truncated(8));
    }
    if bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: bytes[..4].to_vec(),
        });
    }
    if bytes.len() < 8 {
        return Err(truncated(8));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(FormatError::Dtype(bytes[4]));
    }
    let ndim = bytes[5] as usize;
    if !(1..=2).contains(&ndim) {
        return Err(FormatError::Layout(format!("feature tracks have 1 or 2 dimensions, found {ndim}")));
    }
    let header = 8 + 4 * ndim;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..ndim).map(|i| u32_at(bytes, 8 + 4 * i) as usize).collect();
    let (rows, width) = if ndim == 2 { (dims[0], dims[1]) } else { (1, dims[0]) };
    if rows == 0 || width == 0 {
        return Err(FormatError::Layout(format!("empty track {dims:?}")));
    }
    let count = rows
        .checked_mul(width)
        .filter(|n| *n <= (usize::MAX - header - 4) / 4)
        .ok_or_else(|| FormatError::Layout(format!("dims {dims:?} overflow")))?;
    let total = header + 4 * count + 4;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    if bytes.len() > total {
        return Err(FormatError::TrailingBytes(bytes.len() - total));
    }
    let stored = u32_at(bytes, total - 4);
    let computed = crc32fast::hash(&bytes[..total - 4]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let modality = match tag {
        Some(m) => m,
        None => [Modality::Video, Modality::Audio]
            .into_iter()
            .find(|m| m.default_dims() == width)
            .ok_or_else(|| FormatError::Layout(format!("cannot infer modality of a {width}-wide track without a tag")))?,
    };
    let values = bytes[header..total - 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    FeatureTrack::new(modality, rows, width, values).map_err(|e| FormatError::Layout(e.to_string()))
}

/// The modality tag carried by a `features/<modality>/<id>.mmf1` path.
pub fn path_tag(path: &Path) -> Option<Modality> {
    path.parent()?.file_name()?.to_str().and_then(Modality::parse)
}

pub fn write_features(path: &Path, track: &FeatureTrack) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_features(track)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureTrack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path_tag(path)).map_err(|e| Error::format(path.display().to_string(), e))
}

/// Feature files laid out as `<root>/<modality>/<video_id>.mmf1`.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    pub root: PathBuf,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureStore { root: root.into() }
    }

    pub fn path(&self, modality: Modality, video_id: &str) -> PathBuf {
        self.root.join(modality.name()).join(format!("{video_id}.mmf1"))
    }

    /// `Ok(None)` when the file does not exist.
    pub fn load(&self, modality: Modality, video_id: &str) -> Result<Option<FeatureTrack>> {
        let path = self.path(modality, video_id);
        if !path.exists() {
            return Ok(None);
        }
        let mut track = read_features(&path)?;
        track.modality = modality;
        Ok(Some(track))
    }

    pub fn save(&self, video_id: &str, track: &FeatureTrack) -> Result<()> {
        write_features(&self.path(track.modality, video_id), track)
    }

    /// Video ids with a file for `modality`, sorted.
    pub fn ids(&self, modality: Modality) -> Vec<String> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join(modality.name()))
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "mmf1").then(|| p.file_stem()?.to_str().map(String::from))?
            })
            .collect();
        ids.sort();
        ids
    }
}

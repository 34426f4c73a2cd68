//! Binary weight file (`.pnw`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PNW1"
//! u32 n, then n bytes of UTF-8 canonical config JSON
//! for every layer with parameters, in config order:
//!     u32 weight count, f32 × count
//!     u32 bias count,   f32 × count
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! The normalization layer has no parameters and contributes no bytes.

use std::path::Path;

use super::config::NetworkConfig;
use super::weights::{LayerParams, WeightSet};
use super::ModelError;
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"PNW1";

#[derive(Debug, thiserror::Error)]
pub enum WeightFileError {
    #[error("weight file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0:?}")]
    UnsupportedVersion(char),
    #[error("weight file truncated at byte {offset} (needed {needed} more)")]
    Truncated { offset: usize, needed: usize },
    #[error("weight file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("weight file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("embedded config is not UTF-8")]
    ConfigEncoding,
    #[error("weight file contents invalid: {0}")]
    Invalid(#[from] ModelError),
}

impl WeightFileError {
    /// Stable identifier printed by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            WeightFileError::Io(_) => "E_IO",
            WeightFileError::BadMagic => "E_MAGIC",
            WeightFileError::UnsupportedVersion(_) => "E_VERSION",
            WeightFileError::Truncated { .. } => "E_TRUNCATED",
            WeightFileError::Checksum { .. } => "E_CHECKSUM",
            WeightFileError::TrailingBytes(_) => "E_TRAILING",
            WeightFileError::ConfigEncoding | WeightFileError::Invalid(_) => "E_CONTENT",
        }
    }
}

pub fn encode_weights(
    cfg: &NetworkConfig,
    weights: &WeightSet,
) -> Result<Vec<u8>, WeightFileError> {
    weights.validate(cfg)?;
    let json = cfg.to_canonical_json();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * weights.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for (layer, params) in cfg.layers.iter().zip(&weights.layers) {
        if !layer.is_trainable() {
            continue;
        }
        for array in [&params.weights, &params.biases] {
            out.extend_from_slice(&(array.len() as u32).to_le_bytes());
            for v in array.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightFileError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(WeightFileError::Truncated {
                offset: self.bytes.len(),
                needed: n - available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_array(&mut self) -> Result<Vec<f32>, WeightFileError> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or(WeightFileError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn checksum_error(bytes: &[u8]) -> Option<WeightFileError> {
    let (body, tail) = bytes.split_at(bytes.len().checked_sub(4)?);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    (stored != computed).then_some(WeightFileError::Checksum { stored, computed })
}

pub fn decode_weights(bytes: &[u8]) -> Result<(NetworkConfig, WeightSet), WeightFileError> {
    if bytes.len() >= 3 && &bytes[..3] == b"PNW" {
        if bytes.len() < 4 {
            return Err(WeightFileError::Truncated {
                offset: 3,
                needed: 1,
            });
        }
        if bytes[3] != MAGIC[3] {
            return Err(WeightFileError::UnsupportedVersion(bytes[3] as char));
        }
    } else if bytes.len() >= 4 || !MAGIC.starts_with(bytes) {
        return Err(WeightFileError::BadMagic);
    } else {
        return Err(WeightFileError::Truncated {
            offset: bytes.len(),
            needed: 4 - bytes.len(),
        });
    }
    let parsed = parse_body(bytes);
    match parsed {
        Ok(v) => Ok(v),
        // Structural errors in a complete file are usually corruption; prefer
        // reporting the checksum when it disagrees.
        Err(e @ WeightFileError::Truncated { .. }) => Err(e),
        Err(e) => Err(checksum_error(bytes).unwrap_or(e)),
    }
}

fn parse_body(bytes: &[u8]) -> Result<(NetworkConfig, WeightSet), WeightFileError> {
    let mut r = Reader { bytes, pos: 4 };
    let json_len = r.u32()? as usize;
    let json =
        std::str::from_utf8(r.take(json_len)?).map_err(|_| WeightFileError::ConfigEncoding)?;
    let cfg = NetworkConfig::from_json(json).map_err(ModelError::from)?;
    let mut layers = Vec::with_capacity(cfg.layers.len());
    for layer in &cfg.layers {
        if layer.is_trainable() {
            let weights = r.f32_array()?;
            let biases = r.f32_array()?;
            layers.push(LayerParams { weights, biases });
        } else {
            layers.push(LayerParams::default());
        }
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(WeightFileError::TrailingBytes(bytes.len() - r.pos));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(WeightFileError::Checksum { stored, computed });
    }
    let weights = WeightSet { layers };
    weights.validate(&cfg)?;
    Ok((cfg, weights))
}

pub fn save_weights(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    path: impl AsRef<Path>,
) -> Result<(), WeightFileError> {
    let bytes = encode_weights(cfg, weights)?;
    fsutil::write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(NetworkConfig, WeightSet), WeightFileError> {
    decode_weights(&std::fs::read(path)?)
}

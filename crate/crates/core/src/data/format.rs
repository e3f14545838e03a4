//! The `MILB` bag container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "MILB"
//! version      u32      = 1
//! feature_dim  u32
//! bag_count    u32
//! per bag:
//!   id_len     u16, then id_len bytes of UTF-8
//!   label      u8 (0 or 1)
//!   n          u32 instance count
//!   values     n * feature_dim IEEE-754 f32, row-major
//! crc32        u32 over every preceding byte
//! ```
//!
//! Feature values are held as `f64` in memory; values that are not exactly
//! representable as `f32` are rounded on save.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BagDataset, Provenance};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::FeatureBag;

pub const MAGIC: [u8; 4] = *b"MILB";
pub const VERSION: u32 = 1;

pub fn encode_dataset(dataset: &BagDataset) -> Result<Vec<u8>> {
    let dim = dataset.feature_dim;
    let total_values: usize = dataset.bags.iter().map(|b| b.features.len()).sum();
    let mut out = Vec::with_capacity(16 + 4 * total_values + 16 * dataset.bags.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "feature dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dataset.bags.len(), "bag count")?.to_le_bytes());
    for bag in &dataset.bags {
        if bag.feature_dim() != dim {
            return Err(Error::Dimension(format!(
                "bag {} has {} feature dims, dataset has {dim}",
                bag.id,
                bag.feature_dim()
            )));
        }
        let id = bag.id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidConfig(format!("bag id longer than 65535 bytes: {:?}", bag.id)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.push(bag.label);
        out.extend_from_slice(&to_u32(bag.len(), "instance count")?.to_le_bytes());
        for &v in bag.features.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<BagDataset> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = r.u32("feature dim")? as usize;
    let count = r.u32("bag count")? as usize;
    // Each bag needs at least 7 bytes, which bounds the allocation below.
    let mut bags = Vec::with_capacity(count.min(bytes.len() / 7));
    for b in 0..count {
        let id_len = r.u16("bag id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "bag id")?)
            .map_err(|_| Error::Malformed(format!("bag {b} id is not UTF-8")))?
            .to_string();
        let label = r.u8("label")?;
        if label > 1 {
            return Err(Error::Malformed(format!("bag {id:?} has label {label}")));
        }
        let n = r.u32("instance count")? as usize;
        let n_values = n
            .checked_mul(dim)
            .ok_or_else(|| Error::Malformed(format!("bag {id:?} size overflows")))?;
        let raw = r.take(
            n_values
                .checked_mul(4)
                .ok_or_else(|| Error::Malformed(format!("bag {id:?} size overflows")))?,
            "feature values",
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let features = DenseMatrix::new(n, dim, values)?;
        bags.push(FeatureBag::new(id, features, label)?);
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    BagDataset::new(bags, dim, Provenance::External)
}

/// Optional metadata stored next to a container as `<stem>.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub provenance: Provenance,
    #[serde(default)]
    pub feature_dim: usize,
    #[serde(default)]
    pub bag_count: usize,
    /// Free-form extra fields (clinical metadata and the like).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the container and a provenance sidecar.
pub fn save_dataset(dataset: &BagDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(dataset)?)?;
    let sidecar = Sidecar {
        provenance: dataset.provenance,
        feature_dim: dataset.feature_dim,
        bag_count: dataset.len(),
        metadata: serde_json::Value::Null,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

/// Reads a container. Provenance comes from the sidecar when one is present
/// and readable; the sidecar is never needed to decode the bags.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<BagDataset> {
    let path = path.as_ref();
    let mut dataset = decode_dataset(&fs::read(path)?)?;
    if let Ok(text) = fs::read_to_string(sidecar_path(path)) {
        if let Ok(sidecar) = serde_json::from_str::<Sidecar>(&text) {
            dataset.provenance = sidecar.provenance;
        }
    }
    Ok(dataset)
}

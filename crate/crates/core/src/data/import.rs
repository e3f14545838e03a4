//! Import of externally extracted per-bag feature matrices.
//!
//! A directory holds `manifest.json`:
//!
//! ```json
//! { "feature_dim": 768,
//!   "bags": [ { "id": "slide_01", "file": "slide_01.f32", "label": 1 } ] }
//! ```
//!
//! Each listed file is a raw little-endian `f32` matrix with `feature_dim`
//! columns; the instance count is implied by the file length.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BagDataset, Provenance};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::FeatureBag;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportManifest {
    pub feature_dim: usize,
    pub bags: Vec<ManifestEntry>,
}

pub fn import_directory(dir: impl AsRef<Path>) -> Result<BagDataset> {
    let dir = dir.as_ref();
    let manifest: ImportManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?;
    let dim = manifest.feature_dim;
    if dim == 0 {
        return Err(Error::InvalidConfig("manifest feature_dim must be positive".into()));
    }
    let mut bags = Vec::with_capacity(manifest.bags.len());
    for entry in &manifest.bags {
        let raw = fs::read(dir.join(&entry.file))?;
        let row_bytes = 4 * dim;
        if raw.is_empty() || raw.len() % row_bytes != 0 {
            return Err(Error::Malformed(format!(
                "{}: {} bytes is not a positive multiple of {row_bytes}",
                entry.file,
                raw.len()
            )));
        }
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let features = DenseMatrix::new(raw.len() / row_bytes, dim, values)?;
        bags.push(FeatureBag::new(entry.id.clone(), features, entry.label)?);
    }
    BagDataset::new(bags, dim, Provenance::External)
}

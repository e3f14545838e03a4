//! Bag datasets: in-memory collection, the `MILB` container, external
//! feature import, and the planted-witness synthetic benchmark.

mod format;
mod import;
mod synth;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureBag;

pub use format::{decode_dataset, encode_dataset, load_dataset, save_dataset, sidecar_path, MAGIC, VERSION};
pub use import::{import_directory, ImportManifest, ManifestEntry, MANIFEST_NAME};
pub use synth::{synth_generate, synth_generate_annotated, SynthConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    #[default]
    External,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Synthetic => "synthetic",
            Provenance::External => "external",
        })
    }
}

/// A collection of bags sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct BagDataset {
    pub bags: Vec<FeatureBag>,
    pub feature_dim: usize,
    pub provenance: Provenance,
}

impl BagDataset {
    pub fn new(bags: Vec<FeatureBag>, feature_dim: usize, provenance: Provenance) -> Result<Self> {
        let dataset = Self {
            bags,
            feature_dim,
            provenance,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.bags.len());
        for bag in &self.bags {
            if bag.feature_dim() != self.feature_dim {
                return Err(Error::Dimension(format!(
                    "bag {} has {} feature dims, dataset has {}",
                    bag.id,
                    bag.feature_dim(),
                    self.feature_dim
                )));
            }
            if !seen.insert(bag.id.as_str()) {
                return Err(Error::Malformed(format!("duplicate bag id {:?}", bag.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.bags.iter().filter(|b| b.label == 1).count();
        (self.bags.len() - pos, pos)
    }

    pub fn ids_with_labels(&self) -> Vec<(String, u8)> {
        self.bags.iter().map(|b| (b.id.clone(), b.label)).collect()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureBag> {
        self.bags.iter().find(|b| b.id == id)
    }

    /// Bags in the order of `ids`; unknown ids are an error.
    pub fn select<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a FeatureBag>> {
        let index: std::collections::HashMap<&str, &FeatureBag> =
            self.bags.iter().map(|b| (b.id.as_str(), b)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Malformed(format!("unknown bag id {id:?}")))
            })
            .collect()
    }
}

//! Parameter checkpoints.
//!
//! Tensors are stored in the `MILB` bag container, one "bag" per tensor
//! (feature dim 1, flattened row-major), with a JSON header next to it
//! (`<stem>.json`) describing names, shapes and training metadata. Values
//! are `f32` on disk.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::TrainConfig;
use crate::data::{decode_dataset, encode_dataset, sidecar_path, BagDataset, Provenance};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::metrics::MetricsReport;
use crate::model::{FeatureBag, ModelDims, SmileParams, TRAINABLE};

pub const CHECKPOINT_FORMAT: &str = "smile-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub tensors: Vec<TensorInfo>,
    pub dims: ModelDims,
    pub config: TrainConfig,
    pub fold_index: usize,
    pub best_epoch: usize,
    pub best_metrics: MetricsReport,
    /// Validation bag ids of the fold, for re-evaluation.
    pub val_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: SmileParams,
}

fn named_tensors(params: &SmileParams) -> Vec<(String, DenseMatrix)> {
    let mut out: Vec<(String, DenseMatrix)> = params
        .trainable()
        .into_iter()
        .zip(TRAINABLE)
        .map(|(t, (name, _))| (name.to_string(), t.clone()))
        .collect();
    out.push(("running_mean".into(), DenseMatrix::row_vector(params.running_mean.clone())));
    out.push(("running_var".into(), DenseMatrix::row_vector(params.running_var.clone())));
    out
}

impl Checkpoint {
    pub fn new(
        params: SmileParams,
        config: TrainConfig,
        fold_index: usize,
        best_epoch: usize,
        best_metrics: MetricsReport,
        val_ids: Vec<String>,
    ) -> Self {
        let tensors = named_tensors(&params)
            .into_iter()
            .map(|(name, t)| TensorInfo {
                name,
                shape: [t.rows(), t.cols()],
            })
            .collect();
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            tensors,
            dims: params.dims(),
            config,
            fold_index,
            best_epoch,
            best_metrics,
            val_ids,
        };
        Self { header, params }
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bags = named_tensors(&checkpoint.params)
        .into_iter()
        .map(|(name, t)| {
            let n = t.len();
            FeatureBag::new(name, DenseMatrix::new(n, 1, t.into_values())?, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let container = BagDataset::new(bags, 1, Provenance::External)?;
    fs::write(path, encode_dataset(&container)?)?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&checkpoint.header)? + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let header: CheckpointHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Malformed(format!("unknown checkpoint format {:?}", header.format)));
    }
    let container = decode_dataset(&fs::read(path)?)?;
    if container.bags.len() != header.tensors.len() {
        return Err(Error::Malformed(format!(
            "header lists {} tensors, container holds {}",
            header.tensors.len(),
            container.bags.len()
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (info, bag) in header.tensors.iter().zip(&container.bags) {
        if info.name != bag.id {
            return Err(Error::Malformed(format!("expected tensor {:?}, found {:?}", info.name, bag.id)));
        }
        let [rows, cols] = info.shape;
        tensors.push(DenseMatrix::new(rows, cols, bag.features.values().to_vec())?);
    }
    let expected: Vec<&str> = TRAINABLE.iter().map(|(n, _)| *n).chain(["running_mean", "running_var"]).collect();
    let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != expected {
        return Err(Error::Malformed(format!("unexpected tensor list {names:?}")));
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("length checked");
    let params = SmileParams {
        bn_gamma: next(),
        bn_beta: next(),
        adapter_weight: next(),
        adapter_bias: next(),
        attn_v: next(),
        attn_u: next(),
        attn_w: next(),
        clf_weight: next(),
        clf_bias: next(),
        running_mean: next().into_values(),
        running_var: next().into_values(),
    };
    params.validate()?;
    if params.dims() != header.dims {
        return Err(Error::Dimension(format!(
            "header dims {:?} disagree with tensors {:?}",
            header.dims,
            params.dims()
        )));
    }
    Ok(Checkpoint { header, params })
}

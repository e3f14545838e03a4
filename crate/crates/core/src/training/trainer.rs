use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kfold::{kfold_split, FoldSplit};
use super::loss::{cross_entropy, cross_entropy_grad};
use super::optim::{OptimConfig, Optimizer, OptimizerKind, ParamSlot};
use crate::data::BagDataset;
use crate::error::{Error, Result};
use crate::grad::BatchStats;
use crate::matrix::DenseMatrix;
use crate::metrics::{aggregate_cv, evaluate_probabilities, Averaging, MetricsReport};
use crate::model::{BagGraph, FeatureBag, ModelDims, ModelKind, Mode, ScaleConfig, SmileParams, TRAINABLE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Bags per optimizer step.
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub scale: ScaleConfig,
    pub model: ModelKind,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub averaging: Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 1e-5,
            epochs: 100,
            batch_size: 12,
            folds: 5,
            seed: 0,
            optimizer: OptimizerKind::Ranger,
            scale: ScaleConfig::default(),
            model: ModelKind::Smile,
            hidden_dim: 256,
            attn_dim: 64,
            averaging: Averaging::Weighted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return fail(format!("weight decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.folds < 2 {
            return fail(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.hidden_dim == 0 || self.attn_dim == 0 {
            return fail("hidden and attention dimensions must be positive".into());
        }
        self.scale.validate()
    }

    pub fn dims(&self, input_dim: usize) -> Result<ModelDims> {
        ModelDims::new(input_dim, self.hidden_dim, self.attn_dim)
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..OptimConfig::default()
        }
    }
}

/// splitmix64 finalizer; derives independent per-fold streams from one seed.
fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold_index: usize,
    pub final_params: SmileParams,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the best validation AUC (earliest on ties).
    pub best_epoch: usize,
    /// The `f32`-rounded snapshot that produced `best_report`.
    pub best_params: SmileParams,
    pub best_report: MetricsReport,
}

/// Probabilities for every bag under a frozen snapshot.
pub fn predict_probabilities(bags: &[&FeatureBag], params: &SmileParams, kind: ModelKind, scale: &ScaleConfig) -> Result<Vec<f64>> {
    bags.par_iter()
        .map(|bag| BagGraph::build(bag, params, kind, scale, Mode::Eval).map(|g| g.probability()))
        .collect()
}

/// Eval-mode metrics and mean loss over `bags`.
pub fn evaluate_bags(
    bags: &[&FeatureBag],
    params: &SmileParams,
    kind: ModelKind,
    scale: &ScaleConfig,
    averaging: Averaging,
) -> Result<(MetricsReport, f64)> {
    let probs = predict_probabilities(bags, params, kind, scale)?;
    let labels: Vec<u8> = bags.iter().map(|b| b.label).collect();
    let loss = probs.iter().zip(&labels).map(|(&p, &y)| cross_entropy(p, y)).sum::<f64>() / probs.len() as f64;
    Ok((evaluate_probabilities(&probs, &labels, averaging)?, loss))
}

struct BagStep {
    loss: f64,
    grads: Vec<DenseMatrix>,
    stats: Option<BatchStats>,
}

fn bag_step(bag: &FeatureBag, params: &SmileParams, cfg: &TrainConfig) -> Result<BagStep> {
    let graph = BagGraph::build(bag, params, cfg.model, &cfg.scale, Mode::Train)?;
    let p = graph.probability();
    let grads = graph.backward(cross_entropy_grad(p, bag.label))?;
    Ok(BagStep {
        loss: cross_entropy(p, bag.label),
        grads,
        stats: graph.batch_stats().cloned(),
    })
}

/// One optimizer step over a batch: per-bag forward/backward, gradients
/// averaged in batch order. Returns the mean batch loss.
fn train_batch(batch: &[&FeatureBag], params: &mut SmileParams, optimizer: &mut Optimizer, cfg: &TrainConfig) -> Result<f64> {
    let snapshot = &*params;
    let steps: Vec<BagStep> = batch.par_iter().map(|bag| bag_step(bag, snapshot, cfg)).collect::<Result<_>>()?;

    let mut total: Vec<DenseMatrix> = params.trainable().iter().map(|t| DenseMatrix::zeros(t.rows(), t.cols())).collect();
    let mut loss = 0.0;
    for step in &steps {
        loss += step.loss;
        for (acc, g) in total.iter_mut().zip(&step.grads) {
            acc.add_assign(g);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in &mut total {
        g.scale_in_place(scale);
    }
    for step in &steps {
        if let Some(stats) = &step.stats {
            params.update_running_stats(stats);
        }
    }

    let grad_slices: Vec<&[f64]> = total.iter().map(DenseMatrix::values).collect();
    let mut slots: Vec<ParamSlot<'_>> = params
        .trainable_mut()
        .into_iter()
        .zip(TRAINABLE)
        .map(|(t, (_, decay))| ParamSlot {
            values: t.values_mut(),
            decay,
        })
        .collect();
    optimizer.step(&mut slots, &grad_slices)?;
    Ok(loss * scale)
}

/// Trains one fold and keeps the checkpoint with the best validation AUC.
///
/// Validation runs on the `f32`-rounded snapshot so the recorded metrics are
/// exactly those a saved checkpoint reproduces.
pub fn train_fold(dataset: &BagDataset, split: &FoldSplit, cfg: &TrainConfig) -> Result<FoldResult> {
    cfg.validate()?;
    let train = dataset.select(&split.train_ids)?;
    let val = dataset.select(&split.val_ids)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::TooFewSamples(format!("fold {} has an empty split", split.fold_index)));
    }
    let dims = cfg.dims(dataset.feature_dim)?;
    let fold_seed = mix_seed(cfg.seed, split.fold_index as u64);
    let mut params = SmileParams::init(dims, fold_seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.optim_config());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(fold_seed, 1));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, SmileParams, MetricsReport)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FeatureBag> = chunk.iter().map(|&i| train[i]).collect();
            epoch_loss += train_batch(&batch, &mut params, &mut optimizer, cfg)? * batch.len() as f64;
        }
        let snapshot = params.quantized();
        let (report, val_loss) = evaluate_bags(&val, &snapshot, cfg.model, &cfg.scale, cfg.averaging)?;
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            val: report,
        });
        if best.as_ref().is_none_or(|(_, _, b)| report.auc > b.auc) {
            best = Some((epoch, snapshot, report));
        }
    }
    let (best_epoch, best_params, best_report) = best.expect("at least one epoch");
    Ok(FoldResult {
        fold_index: split.fold_index,
        final_params: params,
        history,
        best_epoch,
        best_params,
        best_report,
    })
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub splits: Vec<FoldSplit>,
    pub folds: Vec<FoldResult>,
    pub reports: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

/// Stratified cross-validation. Folds run on the current rayon pool; results
/// are independent of scheduling.
pub fn run_cv(dataset: &BagDataset, cfg: &TrainConfig) -> Result<CvResult> {
    cfg.validate()?;
    let splits = kfold_split(&dataset.ids_with_labels(), cfg.folds, cfg.seed)?;
    let folds: Vec<FoldResult> = splits
        .par_iter()
        .map(|split| train_fold(dataset, split, cfg))
        .collect::<Result<_>>()?;
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.best_report).collect();
    let mean = aggregate_cv(&reports)?;
    Ok(CvResult {
        splits,
        folds,
        reports,
        mean,
    })
}

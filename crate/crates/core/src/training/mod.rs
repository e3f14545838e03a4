//! Loss, optimizers, stratified folds, the epoch loop and checkpoints.

mod checkpoint;
mod kfold;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TensorInfo, CHECKPOINT_FORMAT};
pub use kfold::{kfold_split, FoldSplit};
pub use loss::{cross_entropy, cross_entropy_grad, PROB_CLAMP};
pub use optim::{
    adam_step, ranger_step, rectification, rho, OptimConfig, Optimizer, OptimizerKind, OptimizerState, ParamSlot,
    RECTIFICATION_THRESHOLD,
};
pub use trainer::{
    evaluate_bags, predict_probabilities, run_cv, train_fold, CvResult, EpochRecord, FoldResult, TrainConfig,
};

//! Training orchestration: fold splitting, the optimization loop,
//! video-level prediction stitching, and the gating-benefit comparison.

mod compare;
mod kfold;
mod optim;
mod train;

pub use compare::{reliability_comparison, ComparisonArm, ComparisonReport};
pub use kfold::{kfold_split, select_best_fold_per_target, FoldAssignment};
pub use optim::{clip_global_norm, Adam, GRAD_CLIP_NORM};
pub use train::{
    evaluate_videos, predict_video, train, training_log_csv, EpochLog, TrainConfig, TrainOutcome,
    VideoPrediction,
};

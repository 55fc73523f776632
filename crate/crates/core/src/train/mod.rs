//! Losses, optimizer and two-stage training.

pub mod config;
pub mod losses;
pub mod optim;
pub mod pipeline;

pub use config::{DagSource, LrSchedule, TrainConfig};
pub use losses::{loss_joint_wta, loss_stage1, loss_stage2, scene_targets, wta_loss, LossParts, SceneTargets};
pub use optim::Adam;
pub use pipeline::{
    edgeless_dags, evaluate_corpus, ground_truth_dags, learned_dags, train_stage1, train_stage2, train_two_stage, EpochLog, TrainLog,
    TwoStage,
};

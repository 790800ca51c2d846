//! Semi-supervised training: cross pseudo supervision losses and the
//! dual-network training loop.

pub mod losses;
pub mod trainer;

pub use losses::{cps_loss, lambda_schedule, pseudo_labels, supervised_loss, LossBreakdown};
pub use trainer::{
    default_rampup, train_loop, EpochValidation, SingleTrainer, TrainConfig, TrainMode,
    TrainSummary, Trainer, TrainerState, LOSS_CSV_HEADER,
};

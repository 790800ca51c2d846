//! Scalable six-stage 3D encoder–decoder: configuration, construction,
//! forward pass, parameter/FLOP accounting, and checkpointing.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod verify;

pub use arch::{
    count_flops, count_parameters, parameter_breakdown, reconcile_reference_scales,
    ParamBreakdown, ScaleReconciliation, REFERENCE_HEAD_CLASSES, REFERENCE_PATCH,
    REFERENCE_TOTALS,
};
pub use checkpoint::{
    load_adam, load_network, manifest_path, save_adam, save_network, CheckpointMeta,
    CHECKPOINT_VERSION,
};
pub use config::ModelScaleConfig;
pub use model::{
    build_stunet, downsample_block, forward, infer_logits, residual_block, stage_network,
    upsample_stage, NetworkParams, StagedNet, IN_EPS, LRELU_SLOPE,
};
pub use verify::{gradient_suite, OpCheck, GRADIENT_TOLERANCE};

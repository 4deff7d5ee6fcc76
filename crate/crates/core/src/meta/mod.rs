//! Inner-loop descent with per-kernel learnable rates, the multi-step outer
//! loss and the outer Adam loop.

mod adam;
mod config;
mod inner;
mod train;

pub use adam::{clip_global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use config::{final_gamma, gamma_schedule, MetaConfig, FINAL_GAMMA};
pub use inner::{
    adapt, forward_prepared, inner_gd, inner_gd_vars, loss_value, outer_loss, prepare, set_loss,
    Adaptation, MetaVars, Prepared, Sample, Task,
};
pub use train::{
    meta_gradient, meta_step, meta_train, outer_variables, BaselineConfig, BaselineTrainer,
    LogRecord, MetaGradient, MetaStep, MetaTrainer, MIN_LR,
};

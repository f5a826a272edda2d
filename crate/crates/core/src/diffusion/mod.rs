//! Noise schedule, the convolutional noise predictor, noise-aware one-step
//! restoration with unequal timesteps, group sampling and pretraining.

mod group;
mod model;
mod pretrain;
mod restore;
mod schedule;

pub use group::{sample_group, CandidateGroup};
pub use model::{timestep_embedding, Architecture, DenoiserModel, ParamSpec, Prediction, LEAKY_SLOPE};
pub use pretrain::{
    pretrain_loss, pretrain_loss_var, pretrain_sample_grads, pretrain_step, restore_var, sobel_kernel, PretrainConfig,
    TrainSample,
};
pub use restore::{
    add_noise, empirical_residual_std, infer_factor, one_step_restore, residual_coefficients, restore_upsampled,
    NAOSDConfig, NoisePredictor, PerfectPredictor, ResidualStd, Restoration, ZeroPredictor,
};
pub use schedule::{build_schedule, DiffusionSchedule, VarianceSpec, DEFAULT_TIMESTEPS};

use crate::imagecore::ImageError;
use crate::numcore::NumError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiffusionError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

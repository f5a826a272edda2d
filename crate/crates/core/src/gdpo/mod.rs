//! Attribute-aware reward, group-relative advantages, and the GDPO and
//! Diffusion-DPO preference losses.

mod loss;
mod reward;
mod train;

pub use crate::diffusion::CandidateGroup;
pub use loss::{
    dpo_loss, dpo_loss_and_grads, gdpo_loss, gdpo_loss_and_grads, gdpo_objective, group_advantage, AdvantageVector,
    PreferenceContext,
};
pub use reward::{
    arf_reward, combine_rewards, minmax_normalize, reward_candidates, ExternalScores, FrMetric, MetricColumn,
    MetricRegistry, NrMetric, RewardBreakdown, RewardMode,
};
pub use train::{gdpo_train_step, GdpoConfig, ScoredGroup, StepReport};

use crate::diffusion::DiffusionError;
use crate::imagecore::ImageError;
use crate::numcore::NumError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GdpoError {
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no score for candidate {image_id} under metric {metric_id}")]
    MissingScore { image_id: String, metric_id: String },
    #[error("training diverged: {0}")]
    Diverged(String),
}

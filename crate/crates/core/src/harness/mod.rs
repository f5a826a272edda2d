//! Run configuration, dataset synthesis, checkpoints, CSV logs, and the
//! training, evaluation and experiment drivers behind the CLI.

mod checkpoint;
mod config;
mod csvio;
mod dataset;
mod eval;
mod train;

pub use checkpoint::{
    config_digest, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{load_config, parse_config, Mode, RunConfig, OUTPUT_ROOT_ENV};
pub use csvio::{load_external_scores, read_rows, write_external_scores, write_rows, MetricsTable};
pub use dataset::{load_split, procedural_hr, synthesize_dataset, ImagePair, Split};
pub use eval::{
    compare_rewards, evaluate_models, run_diversity, run_eval, run_group_size_ablation, run_regions, run_score_group,
    AblationReport, AblationRow, DiversityReport, EvalReport, RewardComparison,
};
pub use train::{run_gdpo, run_pretrain, GdpoOutcome, PretrainOutcome};

use std::path::PathBuf;

use crate::diffusion::DiffusionError;
use crate::gdpo::GdpoError;
use crate::imagecore::ImageError;
use crate::numcore::NumError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config key `{key}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, key: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Gdpo(#[from] GdpoError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("training diverged: {message}; last good checkpoint: {}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged { message: String, last_good: Option<PathBuf> },
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn create_dir(path: &std::path::Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

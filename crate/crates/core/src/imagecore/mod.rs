//! Images, Netpbm I/O, synthetic degradation, quality metrics, and the
//! smooth/detailed region partition.

mod degrade;
mod image;
mod metrics;
mod pnm;
mod regions;

pub use degrade::{bicubic_upsample, box_downsample, degrade, gaussian_blur, DegradationConfig};
pub use image::{Image, LUMA_WEIGHTS};
pub use metrics::{
    gradient_richness, laplacian_variance, mse, nr_proxy_scores, psnr, sobel_magnitude, ssim, MetricScore, Orientation,
    PSNR_CAP_DB, RICHNESS, SHARPNESS, SOBEL_X, SOBEL_Y,
};
pub use pnm::{decode_pnm, encode_pnm, load_image, save_image};
pub use regions::{
    entropy_bits, partition_regions, patch_entropy, PatchGrid, RegionLabel, RegionMap, ScalarField, ENTROPY_BINS,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ImageError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("dimension error: {0}")]
    Dimensions(String),
    #[error("expected {expected} channel(s), got {got}")]
    Channels { expected: &'static str, got: usize },
    #[error("image {height}x{width} smaller than the {need}x{need} window")]
    TooSmall { need: usize, height: usize, width: usize },
    #[error("patch grid {rows}x{cols} leaves an empty patch on {height}x{width}")]
    EmptyPatch { rows: usize, cols: usize, height: usize, width: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite pixel value")]
    NonFinite,
}

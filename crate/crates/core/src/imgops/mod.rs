//! Self-contained image-processing primitives used by pipeline stage logic.
//!
//! Everything here is deterministic: identical inputs (and explicit seeds,
//! where sampling is involved) give bit-identical outputs, which is what
//! makes the sequential oracles in `pipelines` usable as exact references.

mod features;
mod filter;
mod histogram;
mod homography;
mod image;
mod kmeans;
mod ppm;
mod segment;

pub use features::{
    compute_descriptors, detect_corners, extract_features, match_descriptors, FeatureSet,
    Keypoint, MatchResult, DESCRIPTOR_LEN,
};
pub use filter::gaussian_blur;
pub use histogram::{compute_histogram, correlate_histograms, mean_histograms, Correlation, Histogram};
pub use homography::{estimate_homography_ransac, warp_merge, Homography, RansacEstimate};
pub use image::{extract_channel, to_gray, Image};
pub use kmeans::{kmeans_assign, kmeans_fit, kmeans_plus_plus_init, Centroids, KmeansReport};
pub use ppm::{read_ppm, read_ppm_bytes, write_ppm, write_ppm_bytes};
pub use segment::{component_boxes, connected_components, otsu_threshold, BoundingBox, LabelMap};

/// Errors raised by image operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImgError {
    #[error("bad channel request: {0}")]
    BadChannels(String),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("image too small: need at least {need}x{need}, got {width}x{height}")]
    TooSmall { need: u32, width: u32, height: u32 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("need at least 4 point pairs, got {0}")]
    InsufficientMatches(usize),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("homography is singular")]
    SingularHomography,
    #[error("image decode failed: {0}")]
    Decode(String),
}

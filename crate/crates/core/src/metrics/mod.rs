//! Video quality metrics, evaluation and report tables.

mod evaluate;
mod frechet;
mod identity;
mod quality;
mod report;

pub use evaluate::{
    codec_ground_truth, evaluate, CheckpointGenerator, EvalOptions, Evaluators, OracleGenerator, VideoGenerator,
};
pub use frechet::{frechet_distance, gaussian_fit, EIGEN_TOLERANCE, SHRINKAGE};
pub use identity::{csim, EmbeddingDistance, IdentityEmbedder, PerceptualDistance, ToyIdentityEmbedder};
pub use quality::{gaussian_window, luma, psnr, ssim, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    radar_data, Aggregate, ComparisonTable, Metric, MetricReport, RadarData, RadarRow, TableKind, TableRow,
    VideoMetrics, RADAR_ANCHOR, REPORT_SCHEMA,
};

//! Segmentation quality, statistical comparison and domain-invariance
//! measurements.

mod embedding;
mod mann_whitney;
mod overlap;
mod probe;
mod report;
mod window;

pub use embedding::{extract_embedding, extract_embeddings};
pub use mann_whitney::{mann_whitney_u, MannWhitney, MwMethod, EXACT_LIMIT};
pub use overlap::{boundary, dice, hausdorff_mm};
pub use probe::{domain_probe, ProbeConfig, ProbeResult};
pub use report::{
    evaluate_samples, Aggregate, ClassStats, Comparison, MetricsReport, SampleMetrics, ALL_DOMAINS,
};
pub use window::{sliding_window_predict, window_origins, Predictor, ProbMap, SegmenterPredictor};

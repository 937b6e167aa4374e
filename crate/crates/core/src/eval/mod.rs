//! Probes, one-shot generation, and image metrics.

mod generation;
mod metrics;
mod probe;

pub use generation::{
    contact_sheet, evaluate_generation, generation_pairs, one_shot_generate, score_glyph, write_contact_sheets,
    Exclusion, GeneratedFont, GenerationOutcome, GenerationPair, GlyphMetrics, MetricsReport, MetricsSummary,
};
pub use metrics::{
    canny_edges, chamfer, hausdorff, histogram, intensity_bin, iou, mae, mse, otsu_binarize, otsu_threshold,
    BinaryMask, CannyParams, Point,
};
pub use probe::{run_probe, FeatureKind, ProbeProtocol, ProbeResult, ProbeTarget};

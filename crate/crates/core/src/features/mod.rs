//! Feature extraction, persistence, PCA, and scatter plots.

mod pca;
mod scatter;
mod table;

pub use pca::{fit_pca, project, PcaProjection};
pub use scatter::{emit_scatter, palette, within_group_ratio};
pub use table::{
    extract_features, index_path, FeatureRow, FeatureTable, TableProvenance, TABLE_FORMAT_VERSION, TABLE_MAGIC,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What `visualize` reports next to the plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualSummary {
    pub points: usize,
    pub style_explained_variance: f64,
    pub content_explained_variance: f64,
    /// Within-font share of the style PC1 variance.
    pub style_within_font_ratio: f64,
    /// Within-class share of the content PC1 variance.
    pub content_within_class_ratio: f64,
    pub plots: Vec<PathBuf>,
}

/// Fit PCA separately on style and content vectors and plot their first
/// components against each other.
pub fn visualize(table: &FeatureTable, out_dir: &Path) -> Result<VisualSummary> {
    if table.is_empty() {
        return Err(Error::NoData);
    }
    let style = table.style_vectors();
    let content = table.content_vectors();
    let ps = fit_pca(&style, 1)?;
    let pc = fit_pca(&content, 1)?;
    let xs: Vec<f64> = project(&ps, &style).into_iter().map(|v| v[0]).collect();
    let ys: Vec<f64> = project(&pc, &content).into_iter().map(|v| v[0]).collect();
    let fonts: Vec<usize> = table.rows.iter().map(|r| r.font_id).collect();
    let classes: Vec<usize> = table.rows.iter().map(|r| r.class_id).collect();
    let plots = emit_scatter(&xs, &ys, &fonts, &classes, out_dir)?;
    Ok(VisualSummary {
        points: table.len(),
        style_explained_variance: ps.explained_variance[0],
        content_explained_variance: pc.explained_variance[0],
        style_within_font_ratio: within_group_ratio(&xs, &fonts),
        content_within_class_ratio: within_group_ratio(&ys, &classes),
        plots: plots.to_vec(),
    })
}

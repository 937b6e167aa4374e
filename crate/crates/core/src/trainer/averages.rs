//! Per-font style averages and per-class content averages.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyphset::GlyphMatrix;
use crate::model::{FeatureBatch, ModelParams};

/// Where an average table came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AverageProvenance {
    /// Training phase of the checkpoint the features came from.
    pub phase: String,
    /// Hex SHA-256 of the checkpoint file, when known.
    pub checkpoint_sha256: Option<String>,
    pub font_names: Vec<String>,
    pub class_labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageFeatureTable {
    pub dim: usize,
    /// Font id to mean style feature over that font's glyphs.
    pub style_avg: BTreeMap<usize, Vec<f64>>,
    /// Class id to mean content feature over all fonts.
    pub content_avg: BTreeMap<usize, Vec<f64>>,
    pub provenance: AverageProvenance,
}

impl AverageFeatureTable {
    /// Group means of an `I*J` feature batch ordered font-major like the
    /// matrix cells.
    pub fn from_features(features: &FeatureBatch<f32>, num_fonts: usize, num_classes: usize) -> Result<Self> {
        if features.len() != num_fonts * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for a {num_fonts}x{num_classes} matrix",
                features.len()
            )));
        }
        let dim = features.style.cols;
        let mut style_avg = BTreeMap::new();
        let mut content_avg: BTreeMap<usize, Vec<f64>> =
            (0..num_classes).map(|j| (j, vec![0.0; dim])).collect();
        for i in 0..num_fonts {
            let mut s = vec![0.0; dim];
            for j in 0..num_classes {
                let r = i * num_classes + j;
                for (acc, &v) in s.iter_mut().zip(features.style.row(r)) {
                    *acc += v as f64;
                }
                let c = content_avg.get_mut(&j).expect("class present");
                for (acc, &v) in c.iter_mut().zip(features.content.row(r)) {
                    *acc += v as f64;
                }
            }
            s.iter_mut().for_each(|v| *v /= num_classes as f64);
            style_avg.insert(i, s);
        }
        for c in content_avg.values_mut() {
            c.iter_mut().for_each(|v| *v /= num_fonts as f64);
        }
        Ok(Self {
            dim,
            style_avg,
            content_avg,
            provenance: AverageProvenance::default(),
        })
    }

    /// Complete coverage of `num_fonts` fonts and `num_classes` classes,
    /// all finite and of the right width.
    pub fn check_covers(&self, num_fonts: usize, num_classes: usize, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::MissingAverages(format!("table has dimension {}, model {dim}", self.dim)));
        }
        for i in 0..num_fonts {
            if !self.style_avg.contains_key(&i) {
                return Err(Error::MissingAverages(format!("no style average for font {i}")));
            }
        }
        for j in 0..num_classes {
            if !self.content_avg.contains_key(&j) {
                return Err(Error::MissingAverages(format!("no content average for class {j}")));
            }
        }
        let all = self.style_avg.values().chain(self.content_avg.values());
        for v in all {
            if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::MissingAverages("an average vector is malformed or non-finite".into()));
            }
        }
        Ok(())
    }

    pub fn style_vectors(&self) -> Vec<&[f64]> {
        self.style_avg.values().map(Vec::as_slice).collect()
    }

    pub fn content_vectors(&self) -> Vec<&[f64]> {
        self.content_avg.values().map(Vec::as_slice).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("table serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
    }
}

/// Inference-mode features for every cell of `matrix`, font-major.
pub fn encode_matrix(params: &ModelParams, matrix: &GlyphMatrix) -> FeatureBatch<f32> {
    let mut style = Vec::new();
    let mut content = Vec::new();
    // One font per batch keeps memory flat for large matrices.
    for i in 0..matrix.num_fonts() {
        let x = GlyphMatrix::stack((0..matrix.num_classes()).map(|j| matrix.get(i, j)));
        let f = params.encode(&x);
        style.push(f.style);
        content.push(f.content);
    }
    let style_refs: Vec<_> = style.iter().collect();
    let content_refs: Vec<_> = content.iter().collect();
    FeatureBatch {
        style: crate::nn::Matrix::vstack(&style_refs),
        content: crate::nn::Matrix::vstack(&content_refs),
    }
}

/// Average features of a matrix under a (pretrained) network.
pub fn compute_average_features(params: &ModelParams, matrix: &GlyphMatrix) -> Result<AverageFeatureTable> {
    let feats = encode_matrix(params, matrix);
    let mut table = AverageFeatureTable::from_features(&feats, matrix.num_fonts(), matrix.num_classes())?;
    table.provenance.font_names = matrix.font_names().to_vec();
    table.provenance.class_labels = matrix.class_labels().iter().collect();
    Ok(table)
}

/// Mean squared distance to group averages, with each checkpoint measured
/// against its own averages: `(style, content)` over every cell of `matrix`.
pub fn within_group_variances(params: &ModelParams, matrix: &GlyphMatrix) -> Result<(f64, f64)> {
    let feats = encode_matrix(params, matrix);
    let table = AverageFeatureTable::from_features(&feats, matrix.num_fonts(), matrix.num_classes())?;
    let (fonts, classes) = cell_ids(matrix);
    let s = crate::losses::style_variance_loss(&feats.style, &fonts, &table)?;
    let c = crate::losses::content_variance_loss(&feats.content, &classes, &table)?;
    Ok((s, c))
}

/// Font and class ids of every cell, font-major.
pub fn cell_ids(matrix: &GlyphMatrix) -> (Vec<usize>, Vec<usize>) {
    matrix.glyphs().iter().map(|g| (g.font_id, g.class_id)).unzip()
}

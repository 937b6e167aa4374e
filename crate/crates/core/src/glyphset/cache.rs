//! On-disk glyph cache: `<dir>/<font_name>/<class>.png` plus `index.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{DroppedFont, GlyphMatrix, Split};
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub size: usize,
    pub classes: String,
    /// PNGs were written with ink dark on a light background.
    pub inverted: bool,
    pub splits: BTreeMap<Split, Vec<String>>,
    pub dropped: Vec<(String, String)>,
}

fn font_dir(dir: &Path, name: &str) -> PathBuf {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(safe)
}

pub fn to_gray(pixels: &[f32], size: usize, invert: bool) -> GrayImage {
    GrayImage::from_fn(size as u32, size as u32, |x, y| {
        let v = pixels[y as usize * size + x as usize].clamp(0.0, 1.0);
        let v = if invert { 1.0 - v } else { v };
        image::Luma([(v * 255.0).round() as u8])
    })
}

pub fn from_gray(img: &GrayImage, invert: bool) -> Vec<f32> {
    img.pixels()
        .map(|p| {
            let v = p.0[0] as f32 / 255.0;
            if invert {
                1.0 - v
            } else {
                v
            }
        })
        .collect()
}

/// Write every glyph of every split as an 8-bit PNG and the index file.
pub fn export_cache(
    dir: &Path,
    matrices: &[(Split, &GlyphMatrix)],
    dropped: &[DroppedFont],
    invert: bool,
) -> Result<CacheIndex> {
    let size = matrices.first().map_or(0, |(_, m)| m.image_size());
    let classes: String = matrices
        .first()
        .map(|(_, m)| m.class_labels().iter().collect())
        .unwrap_or_default();
    let mut splits = BTreeMap::new();
    for (split, m) in matrices {
        for (i, name) in m.font_names().iter().enumerate() {
            let fdir = font_dir(dir, name);
            std::fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
            for (j, label) in m.class_labels().iter().enumerate() {
                let path = fdir.join(format!("{label}.png"));
                to_gray(&m.get(i, j).pixels, m.image_size(), invert).save(&path)?;
            }
        }
        splits.insert(*split, m.font_names().to_vec());
    }
    let index = CacheIndex {
        size,
        classes,
        inverted: invert,
        splits,
        dropped: dropped.iter().map(|d| (d.name.clone(), d.reason.clone())).collect(),
    };
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Read one split back from a cache directory. Pixel values carry the
/// 8-bit quantization of the PNGs.
pub fn load_cache(dir: &Path, split: Split) -> Result<GlyphMatrix> {
    let path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: CacheIndex = serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
    let names = index
        .splits
        .get(&split)
        .ok_or_else(|| Error::corrupt(&path, format!("no {split} split in index")))?;
    let labels: Vec<char> = index.classes.chars().collect();
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let fdir = font_dir(dir, name);
        let mut row = Vec::with_capacity(labels.len());
        for label in &labels {
            let p = fdir.join(format!("{label}.png"));
            let img = image::open(&p)?.to_luma8();
            if img.width() as usize != index.size || img.height() as usize != index.size {
                return Err(Error::corrupt(&p, "glyph has the wrong size"));
            }
            row.push(from_gray(&img, index.inverted));
        }
        rows.push((name.clone(), row));
    }
    GlyphMatrix::from_rows(index.size, labels, rows)
}

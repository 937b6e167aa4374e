//! Glyph images, the font × character matrix, and training samplers.

mod cache;
mod manifest;
mod raster;
mod sampler;

pub use cache::{export_cache, from_gray, load_cache, to_gray, CacheIndex, INDEX_FILE};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use raster::{rasterize_glyph, LoadedFont, MIN_RENDER_SIZE};
pub use sampler::{sample_pretrain_triplet, BatchSampler, PretrainTriplet};

use log::warn;

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// The default alphabet: capital Latin letters.
pub const ALPHABET: [char; 26] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S', 'T', 'U', 'V',
    'W', 'X', 'Y', 'Z',
];
pub const NUM_CLASSES: usize = ALPHABET.len();

pub fn class_id_of(ch: char) -> Option<usize> {
    ALPHABET.iter().position(|&c| c == ch)
}

/// One square grayscale glyph; ink is 1, background 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphImage {
    pub size: usize,
    pub pixels: Vec<f32>,
    pub font_id: usize,
    pub class_id: usize,
}

impl GlyphImage {
    /// Mean pixel intensity.
    pub fn ink_fraction(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }

    pub fn in_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }
}

/// A font the matrix builder skipped, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedFont {
    pub name: String,
    pub reason: String,
}

/// Dense fonts × classes grid of glyphs, row-major by font.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphMatrix {
    size: usize,
    font_names: Vec<String>,
    class_labels: Vec<char>,
    glyphs: Vec<GlyphImage>,
}

impl GlyphMatrix {
    /// Build from per-font rows of pixel buffers, one buffer per class.
    pub fn from_rows(size: usize, class_labels: Vec<char>, rows: Vec<(String, Vec<Vec<f32>>)>) -> Result<Self> {
        let mut glyphs = Vec::with_capacity(rows.len() * class_labels.len());
        let mut font_names = Vec::with_capacity(rows.len());
        for (i, (name, row)) in rows.into_iter().enumerate() {
            if row.len() != class_labels.len() {
                return Err(Error::ShapeMismatch(format!(
                    "font {name} has {} glyphs, expected {}",
                    row.len(),
                    class_labels.len()
                )));
            }
            for (j, pixels) in row.into_iter().enumerate() {
                if pixels.len() != size * size {
                    return Err(Error::ShapeMismatch(format!(
                        "glyph ({name}, {}) has {} pixels, expected {}",
                        class_labels[j],
                        pixels.len(),
                        size * size
                    )));
                }
                let g = GlyphImage {
                    size,
                    pixels,
                    font_id: i,
                    class_id: j,
                };
                if !g.in_range() {
                    return Err(Error::ShapeMismatch(format!(
                        "glyph ({name}, {}) has pixels outside [0, 1]",
                        class_labels[j]
                    )));
                }
                glyphs.push(g);
            }
            font_names.push(name);
        }
        Ok(Self {
            size,
            font_names,
            class_labels,
            glyphs,
        })
    }

    pub fn num_fonts(&self) -> usize {
        self.font_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn font_names(&self) -> &[String] {
        &self.font_names
    }

    pub fn class_labels(&self) -> &[char] {
        &self.class_labels
    }

    pub fn font_index(&self, name: &str) -> Option<usize> {
        self.font_names.iter().position(|n| n == name)
    }

    pub fn get(&self, font: usize, class: usize) -> &GlyphImage {
        &self.glyphs[font * self.class_labels.len() + class]
    }

    /// Glyph by flat cell index `font * J + class`.
    pub fn cell(&self, index: usize) -> &GlyphImage {
        &self.glyphs[index]
    }

    pub fn glyphs(&self) -> &[GlyphImage] {
        &self.glyphs
    }

    /// Stack the given glyphs into a `[B][size*size]` matrix.
    pub fn stack<'a>(glyphs: impl IntoIterator<Item = &'a GlyphImage>) -> Matrix<f32> {
        let mut data = Vec::new();
        let mut rows = 0;
        let mut cols = 0;
        for g in glyphs {
            cols = g.pixels.len();
            data.extend_from_slice(&g.pixels);
            rows += 1;
        }
        Matrix::from_vec(rows, cols, data)
    }
}

/// Rendering outcome for one manifest font: all classes or an error.
pub type FontRender = (String, Result<Vec<Vec<f32>>>);

/// Assemble a complete matrix, dropping fonts whose rendering failed.
pub fn assemble_matrix(
    split: Split,
    size: usize,
    class_labels: &[char],
    renders: Vec<FontRender>,
) -> Result<(GlyphMatrix, Vec<DroppedFont>)> {
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (name, render) in renders {
        match render {
            Ok(row) => rows.push((name, row)),
            Err(e) => {
                warn!("dropping font {name} from {split} split: {e}");
                dropped.push(DroppedFont {
                    name,
                    reason: e.to_string(),
                });
            }
        }
    }
    if rows.len() < 2 {
        return Err(Error::EmptySplit {
            split: split.to_string(),
            usable: rows.len(),
        });
    }
    let matrix = GlyphMatrix::from_rows(size, class_labels.to_vec(), rows)?;
    Ok((matrix, dropped))
}

/// Render every alphabet glyph of one font.
pub fn render_font(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Vec<Vec<f32>>> {
    let font = LoadedFont::open(&manifest.resolve(entry), entry.name.clone())?;
    ALPHABET.iter().map(|&c| font.render(c, manifest.render_size)).collect()
}

/// Build the glyph matrix for one split of a manifest.
///
/// Fonts missing any capital letter are dropped with a warning; unreadable
/// font files are errors.
pub fn build_matrix(manifest: &DatasetManifest, split: Split) -> Result<(GlyphMatrix, Vec<DroppedFont>)> {
    let mut renders = Vec::new();
    for entry in manifest.entries_for(split) {
        let render = render_font(manifest, entry);
        if let Err(e @ (Error::UnparsableFont { .. } | Error::InvalidConfig(_))) = render {
            return Err(e);
        }
        renders.push((entry.name.clone(), render));
    }
    assemble_matrix(split, manifest.render_size, &ALPHABET, renders)
}

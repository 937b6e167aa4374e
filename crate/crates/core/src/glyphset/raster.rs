//! Font-file rasterization into normalized glyph images.

use std::path::Path;

use ab_glyph::{Font, FontVec, OutlineCurve};
use ab_glyph_rasterizer::{point, Point, Rasterizer};

use super::{class_id_of, GlyphImage};
use crate::error::{Error, Result};

pub const MIN_RENDER_SIZE: usize = 16;
const COVERAGE_FLOOR: f32 = 1e-5;

/// A parsed font file.
pub struct LoadedFont {
    pub name: String,
    font: FontVec,
}

impl LoadedFont {
    pub fn open(path: &Path, name: impl Into<String>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::UnparsableFont {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let font = FontVec::try_from_vec(bytes).map_err(|e| Error::UnparsableFont {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            name: name.into(),
            font,
        })
    }

    /// Render `ch` into a `size`×`size` coverage image, ink 1 and background 0.
    ///
    /// The outline is scaled uniformly to fit a `(size - 2*margin)` square,
    /// `margin = size / 16`, and centered. Coverage is normalized so the
    /// brightest pixel is exactly 1.
    pub fn render(&self, ch: char, size: usize) -> Result<Vec<f32>> {
        if size < MIN_RENDER_SIZE {
            return Err(Error::InvalidConfig(format!(
                "render size {size} is below the minimum of {MIN_RENDER_SIZE}"
            )));
        }
        let missing = || Error::MissingGlyph {
            font: self.name.clone(),
            ch,
        };
        let id = self.font.glyph_id(ch);
        if id.0 == 0 {
            return Err(missing());
        }
        let outline = self.font.outline(id).ok_or_else(missing)?;
        if outline.curves.is_empty() {
            return Err(missing());
        }
        // ab_glyph reports bounds as (x_min, y_max)..(x_max, y_min), y up.
        let (x_min, x_max) = (outline.bounds.min.x, outline.bounds.max.x);
        let (y_top, y_bottom) = (outline.bounds.min.y, outline.bounds.max.y);
        let (w, h) = (x_max - x_min, y_top - y_bottom);
        if w <= 0.0 || h <= 0.0 {
            return Err(missing());
        }

        let margin = (size / 16) as f32;
        let inner = size as f32 - 2.0 * margin;
        let scale = inner / w.max(h);
        let off_x = margin + (inner - w * scale) / 2.0;
        let off_y = margin + (inner - h * scale) / 2.0;
        let map = |p: &Point| point(off_x + (p.x - x_min) * scale, off_y + (y_top - p.y) * scale);

        let mut raster = Rasterizer::new(size, size);
        for curve in &outline.curves {
            match curve {
                OutlineCurve::Line(a, b) => raster.draw_line(map(a), map(b)),
                OutlineCurve::Quad(a, b, c) => raster.draw_quad(map(a), map(b), map(c)),
                OutlineCurve::Cubic(a, b, c, d) => raster.draw_cubic(map(a), map(b), map(c), map(d)),
            }
        }
        let mut pixels = vec![0.0f32; size * size];
        // The rasterizer accumulates coverage along each row, which leaves
        // ~1e-7 residue on background pixels.
        raster.for_each_pixel(|idx, alpha| {
            pixels[idx] = if alpha < COVERAGE_FLOOR { 0.0 } else { alpha.min(1.0) }
        });

        let peak = pixels.iter().copied().fold(0.0f32, f32::max);
        if peak <= 0.0 {
            return Err(missing());
        }
        if peak < 1.0 {
            pixels.iter_mut().for_each(|p| *p = (*p / peak).min(1.0));
        }
        Ok(pixels)
    }
}

/// Rasterize one capital letter from a font file.
///
/// The returned image has `font_id` 0; callers assembling a matrix assign
/// real indices.
pub fn rasterize_glyph(font_file: &Path, ch: char, size: usize) -> Result<GlyphImage> {
    let name = font_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let font = LoadedFont::open(font_file, name)?;
    let pixels = font.render(ch, size)?;
    let class_id = class_id_of(ch).ok_or_else(|| {
        Error::InvalidConfig(format!("{ch:?} is outside the A-Z alphabet"))
    })?;
    Ok(GlyphImage {
        size,
        pixels,
        font_id: 0,
        class_id,
    })
}

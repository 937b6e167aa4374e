//! One-shot font generation and its metric report.

use std::fmt;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{canny_edges, chamfer, hausdorff, iou, mae, mse, otsu_binarize, CannyParams, Point};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::glyphset::{GlyphImage, GlyphMatrix};
use crate::model::ModelParams;
use crate::nn::Matrix;
use crate::seed::{derive_seed, seeded};

/// Decode all classes of `content_font` in the style of one glyph.
///
/// Returns one image per class of `features`, in class order.
pub fn one_shot_generate(
    params: &ModelParams,
    style_glyph: &GlyphImage,
    content_font: usize,
    features: &FeatureTable,
) -> Result<Vec<Vec<f32>>> {
    if content_font == style_glyph.font_id {
        return Err(Error::SameFont(content_font));
    }
    let j = features.num_classes();
    let mut content = Vec::with_capacity(j * features.dim);
    for class in 0..j {
        let row = features.find(content_font, class).ok_or(Error::MissingContentRows {
            font: content_font,
            class,
        })?;
        content.extend_from_slice(&row.content);
    }
    let content = Matrix::from_vec(j, features.dim, content);
    let x = GlyphMatrix::stack([style_glyph]);
    let style = params.encode(&x).style;
    let style = Matrix::from_vec(j, style.cols, style.row(0).repeat(j));
    let out = params.decode(&style, &content);
    Ok((0..j).map(|k| out.row(k).to_vec()).collect())
}

/// Why a glyph pair has no HD or CD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    EmptyGenerated,
    EmptyTarget,
    EmptyBoth,
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exclusion::EmptyGenerated => "empty-generated",
            Exclusion::EmptyTarget => "empty-target",
            Exclusion::EmptyBoth => "empty-both",
        })
    }
}

/// Metrics of one generated glyph against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphMetrics {
    pub font: usize,
    pub style_class: usize,
    pub content_font: usize,
    pub class: usize,
    pub mse: f64,
    pub mae: f64,
    pub hd: Option<f64>,
    pub cd: Option<f64>,
    pub iou: f64,
    pub excluded: Option<Exclusion>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub glyphs: usize,
    pub mse: f64,
    pub mae: f64,
    /// Means over non-excluded pairs only.
    pub hd: f64,
    pub cd: f64,
    pub iou: f64,
    pub excluded_count: usize,
    pub empty_generated: usize,
    pub empty_target: usize,
    pub empty_both: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<GlyphMetrics>,
    pub summary: MetricsSummary,
}

/// Style source `(font, class)` paired with a content font.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationPair {
    pub font: usize,
    pub style_class: usize,
    pub content_font: usize,
}

/// For every test font and style class, a content font drawn uniformly
/// from the other fonts.
pub fn generation_pairs(num_fonts: usize, num_classes: usize, seed: u64) -> Result<Vec<GenerationPair>> {
    if num_fonts < 2 {
        return Err(Error::InsufficientFonts(num_fonts));
    }
    let mut rng = seeded(derive_seed(seed, "generation-pairs"));
    let mut pairs = Vec::with_capacity(num_fonts * num_classes);
    for font in 0..num_fonts {
        for style_class in 0..num_classes {
            let mut other = rng.gen_range(0..num_fonts - 1);
            if other >= font {
                other += 1;
            }
            pairs.push(GenerationPair {
                font,
                style_class,
                content_font: other,
            });
        }
    }
    Ok(pairs)
}

fn edges(pixels: &[f32], size: usize) -> Vec<Point> {
    canny_edges(&otsu_binarize(pixels, size, size), CannyParams::default())
}

/// MSE, MAE, (Hausdorff, Chamfer) when both edge sets exist, IoU, exclusion.
pub type GlyphScore = (f64, f64, Option<(f64, f64)>, f64, Option<Exclusion>);

/// Compare a generated glyph with its target under all five metrics.
pub fn score_glyph(generated: &[f32], target: &[f32], size: usize) -> Result<GlyphScore> {
    let m = mse(generated, target)?;
    let a = mae(generated, target)?;
    let u = iou(&otsu_binarize(generated, size, size), &otsu_binarize(target, size, size))?;
    let eg = edges(generated, size);
    let et = edges(target, size);
    let excluded = match (eg.is_empty(), et.is_empty()) {
        (true, true) => Some(Exclusion::EmptyBoth),
        (true, false) => Some(Exclusion::EmptyGenerated),
        (false, true) => Some(Exclusion::EmptyTarget),
        (false, false) => None,
    };
    let dist = match excluded {
        Some(_) => None,
        None => Some((hausdorff(&eg, &et)?, chamfer(&eg, &et)?)),
    };
    Ok((m, a, dist, u, excluded))
}

impl MetricsReport {
    fn push(&mut self, pair: GenerationPair, class: usize, generated: &[f32], target: &[f32], size: usize) -> Result<()> {
        let (mse, mae, dist, iou, excluded) = score_glyph(generated, target, size)?;
        self.rows.push(GlyphMetrics {
            font: pair.font,
            style_class: pair.style_class,
            content_font: pair.content_font,
            class,
            mse,
            mae,
            hd: dist.map(|d| d.0),
            cd: dist.map(|d| d.1),
            iou,
            excluded,
        });
        Ok(())
    }

    /// Recompute the summary from the rows.
    pub fn summarize(&mut self) {
        let n = self.rows.len();
        let mean = |f: &dyn Fn(&GlyphMetrics) -> Option<f64>| {
            let vals: Vec<f64> = self.rows.iter().filter_map(f).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let count = |e: Exclusion| self.rows.iter().filter(|r| r.excluded == Some(e)).count();
        self.summary = MetricsSummary {
            glyphs: n,
            mse: mean(&|r| Some(r.mse)),
            mae: mean(&|r| Some(r.mae)),
            hd: mean(&|r| r.hd),
            cd: mean(&|r| r.cd),
            iou: mean(&|r| Some(r.iou)),
            excluded_count: self.rows.iter().filter(|r| r.excluded.is_some()).count(),
            empty_generated: count(Exclusion::EmptyGenerated),
            empty_target: count(Exclusion::EmptyTarget),
            empty_both: count(Exclusion::EmptyBoth),
        };
    }

    /// Append another report's rows; summaries are recomputed.
    pub fn merge(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
        self.summarize();
    }

    /// One row per glyph.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["font", "style_class", "content_font", "class", "mse", "mae", "hd", "cd", "iou", "excluded"])
            .map_err(|e| csv_error(path, e))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            w.write_record([
                r.font.to_string(),
                r.style_class.to_string(),
                r.content_font.to_string(),
                r.class.to_string(),
                r.mse.to_string(),
                r.mae.to_string(),
                opt(r.hd),
                opt(r.cd),
                r.iou.to_string(),
                r.excluded.map_or(String::new(), |e| e.to_string()),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Generated glyphs of one test font: `images[style_class][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFont {
    pub font: usize,
    pub images: Vec<Vec<Vec<f32>>>,
}

/// Generation report, the copy-the-content-source baseline on the same
/// pairing, and the generated glyphs.
#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub report: MetricsReport,
    pub baseline: MetricsReport,
    pub generated: Vec<GeneratedFont>,
}

/// Run one-shot generation for every (test font, style class) and score
/// each generated glyph against the test font's true glyph.
pub fn evaluate_generation(
    params: &ModelParams,
    test_matrix: &GlyphMatrix,
    features: &FeatureTable,
    seed: u64,
) -> Result<GenerationOutcome> {
    let (i_n, j_n) = (test_matrix.num_fonts(), test_matrix.num_classes());
    if features.num_fonts() != i_n || features.num_classes() != j_n {
        return Err(Error::ShapeMismatch(format!(
            "feature table is {}x{}, test matrix is {i_n}x{j_n}",
            features.num_fonts(),
            features.num_classes()
        )));
    }
    let size = test_matrix.image_size();
    let pairs = generation_pairs(i_n, j_n, seed)?;
    let mut report = MetricsReport::default();
    let mut baseline = MetricsReport::default();
    let mut generated: Vec<GeneratedFont> = (0..i_n)
        .map(|font| GeneratedFont {
            font,
            images: Vec::with_capacity(j_n),
        })
        .collect();
    for pair in pairs {
        let style_glyph = test_matrix.get(pair.font, pair.style_class);
        let images = one_shot_generate(params, style_glyph, pair.content_font, features)?;
        for (class, img) in images.iter().enumerate() {
            let target = &test_matrix.get(pair.font, class).pixels;
            report.push(pair, class, img, target, size)?;
            let copy = &test_matrix.get(pair.content_font, class).pixels;
            baseline.push(pair, class, copy, target, size)?;
        }
        generated[pair.font].images.push(images);
    }
    report.summarize();
    baseline.summarize();
    Ok(GenerationOutcome {
        report,
        baseline,
        generated,
    })
}

const SHEET_GAP: u32 = 2;

/// Contact sheet for one test font: the ground-truth row on top, then one
/// row per style source class. The style source glyph of each row is
/// framed in red.
pub fn contact_sheet(truth: &[&[f32]], generated: &GeneratedFont, size: usize, invert: bool) -> RgbImage {
    let cols = truth.len() as u32;
    let rows = generated.images.len() as u32 + 1;
    let cell = size as u32 + SHEET_GAP;
    let mut img = RgbImage::from_pixel(cols * cell + SHEET_GAP, rows * cell + SHEET_GAP, Rgb([200, 200, 200]));
    let mut blit = |r: u32, c: u32, pixels: &[f32]| {
        let (x0, y0) = (SHEET_GAP + c * cell, SHEET_GAP + r * cell);
        for y in 0..size {
            for x in 0..size {
                let v = pixels[y * size + x].clamp(0.0, 1.0);
                let v = if invert { 1.0 - v } else { v };
                let g = (v * 255.0).round() as u8;
                img.put_pixel(x0 + x as u32, y0 + y as u32, Rgb([g, g, g]));
            }
        }
    };
    for (c, t) in truth.iter().enumerate() {
        blit(0, c as u32, t);
    }
    for (r, row) in generated.images.iter().enumerate() {
        for (c, g) in row.iter().enumerate() {
            blit(r as u32 + 1, c as u32, g);
        }
    }
    // Frame the style source: row r (1-based) uses class r - 1.
    let red = Rgb([220, 30, 30]);
    for r in 0..generated.images.len() as u32 {
        let (x0, y0) = (r * cell, (r + 1) * cell);
        let side = cell + SHEET_GAP;
        for t in 0..side {
            for (x, y) in [(x0 + t, y0), (x0 + t, y0 + side - 1), (x0, y0 + t), (x0 + side - 1, y0 + t)] {
                if x < img.width() && y < img.height() {
                    img.put_pixel(x, y, red);
                }
            }
        }
    }
    img
}

/// Write one contact sheet per test font as `sheet-<font name>.png`.
pub fn write_contact_sheets(outcome: &GenerationOutcome, test_matrix: &GlyphMatrix, out_dir: &Path, invert: bool) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    for g in &outcome.generated {
        let truth: Vec<&[f32]> = (0..test_matrix.num_classes())
            .map(|j| test_matrix.get(g.font, j).pixels.as_slice())
            .collect();
        let sheet = contact_sheet(&truth, g, test_matrix.image_size(), invert);
        let path = out_dir.join(format!("sheet-{}.png", test_matrix.font_names()[g.font]));
        sheet.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

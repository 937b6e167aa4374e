//! Scatter plots of (style PC1, content PC1) coordinates.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const SIZE: u32 = 640;
const PAD: f64 = 40.0;
const RADIUS: i64 = 3;

/// `n` well-separated colors by stepping the hue around the wheel.
pub fn palette(n: usize) -> Vec<Rgb<u8>> {
    (0..n)
        .map(|k| {
            let h = k as f64 / n.max(1) as f64 * 6.0;
            let (s, v) = (0.85, if k % 2 == 0 { 0.85 } else { 0.6 });
            let c = v * s;
            let x = c * (1.0 - (h % 2.0 - 1.0).abs());
            let (r, g, b) = match h as usize {
                0 => (c, x, 0.0),
                1 => (x, c, 0.0),
                2 => (0.0, c, x),
                3 => (0.0, x, c),
                4 => (x, 0.0, c),
                _ => (c, 0.0, x),
            };
            let m = v - c;
            let to8 = |u: f64| ((u + m) * 255.0).round() as u8;
            Rgb([to8(r), to8(g), to8(b)])
        })
        .collect()
}

fn axis_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

fn render(xs: &[f64], ys: &[f64], groups: &[usize], n_groups: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let axis = Rgb([160, 160, 160]);
    let edge = SIZE - PAD as u32;
    for t in PAD as u32..=edge {
        img.put_pixel(t, edge, axis);
        img.put_pixel(PAD as u32, t, axis);
    }
    let (x0, x1) = axis_range(xs);
    let (y0, y1) = axis_range(ys);
    let span = SIZE as f64 - 2.0 * PAD;
    let colors = palette(n_groups);
    for ((&x, &y), &g) in xs.iter().zip(ys).zip(groups) {
        let px = (PAD + (x - x0) / (x1 - x0) * span).round() as i64;
        let py = (SIZE as f64 - PAD - (y - y0) / (y1 - y0) * span).round() as i64;
        for dy in -RADIUS..=RADIUS {
            for dx in -RADIUS..=RADIUS {
                if dx * dx + dy * dy > RADIUS * RADIUS {
                    continue;
                }
                let (qx, qy) = (px + dx, py + dy);
                if (0..SIZE as i64).contains(&qx) && (0..SIZE as i64).contains(&qy) {
                    img.put_pixel(qx as u32, qy as u32, colors[g % colors.len().max(1)]);
                }
            }
        }
    }
    img
}

/// Draw style PC1 (horizontal) against content PC1 (vertical) twice: once
/// colored by font, once by character class. Returns the two PNG paths;
/// the plotted coordinates go to `pca_points.csv` alongside.
pub fn emit_scatter(
    style_coords: &[f64],
    content_coords: &[f64],
    font_ids: &[usize],
    class_ids: &[usize],
    out_dir: &Path,
) -> Result<[PathBuf; 2]> {
    let n = style_coords.len();
    if n == 0 {
        return Err(Error::NoData);
    }
    if content_coords.len() != n || font_ids.len() != n || class_ids.len() != n {
        return Err(Error::ShapeMismatch("scatter inputs differ in length".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_fonts = font_ids.iter().max().map_or(0, |m| m + 1);
    let n_classes = class_ids.iter().max().map_or(0, |m| m + 1);
    let by_font = out_dir.join("pca_by_font.png");
    let by_class = out_dir.join("pca_by_class.png");
    render(style_coords, content_coords, font_ids, n_fonts).save(&by_font)?;
    render(style_coords, content_coords, class_ids, n_classes).save(&by_class)?;
    let mut text = String::from("style_pc1,content_pc1,font_id,class_id\n");
    for k in 0..n {
        text.push_str(&format!(
            "{},{},{},{}\n",
            style_coords[k], content_coords[k], font_ids[k], class_ids[k]
        ));
    }
    let points = out_dir.join("pca_points.csv");
    std::fs::write(&points, text).map_err(|e| Error::io(&points, e))?;
    Ok([by_font, by_class])
}

/// Share of a coordinate's variance left within groups: the mean
/// within-group variance divided by the total variance. Near 0 when each
/// group collapses to a point along the axis.
pub fn within_group_ratio(coords: &[f64], groups: &[usize]) -> f64 {
    let n = coords.len() as f64;
    if coords.is_empty() {
        return 0.0;
    }
    let mean = coords.iter().sum::<f64>() / n;
    let total = coords.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    let k = groups.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&c, &g) in coords.iter().zip(groups) {
        sums[g] += c;
        counts[g] += 1;
    }
    let within = coords
        .iter()
        .zip(groups)
        .map(|(&c, &g)| (c - sums[g] / counts[g] as f64).powi(2))
        .sum::<f64>()
        / n;
    if total > 0.0 {
        within / total
    } else {
        0.0
    }
}

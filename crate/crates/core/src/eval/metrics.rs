//! Image metrics: Otsu binarization, Canny edges, Hausdorff and Chamfer
//! distances between edge sets, IoU, MSE and MAE.

use crate::error::{Error, Result};

/// A binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        Self { width, height, bits }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

/// A 2-D point `(x, y)`.
pub type Point = (f64, f64);

/// 8-bit bin of a `[0, 1]` intensity.
pub fn intensity_bin(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn histogram(pixels: &[f32]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &p in pixels {
        h[intensity_bin(p) as usize] += 1;
    }
    h
}

/// Otsu threshold over 256 bins: the `t` maximizing the between-class
/// variance of `{bin <= t}` and `{bin > t}`. Ties go to the smallest `t`.
/// `None` when every pixel falls in one bin.
///
/// Between-class variance times `N^2` equals `(s0*n1 - s1*n0)^2 / (n0*n1)`
/// with class counts `n` and bin sums `s`; candidates are compared by
/// exact integer cross-multiplication.
pub fn otsu_threshold(pixels: &[f32]) -> Option<u8> {
    let h = histogram(pixels);
    let n: u64 = h.iter().sum();
    let s: u64 = h.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    // (numerator, denominator) of the best score so far.
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..255u16 {
        n0 += h[t as usize];
        s0 += t as u64 * h[t as usize];
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = s - s0;
        let diff = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            // num/den > bnum/bden; products of ~2^50-bit values need care.
            Some((_, bnum, bden)) => mul_gt(num, bden, bnum, den),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t)
}

/// `a * b > c * d` for unsigned values whose products may exceed 128 bits.
fn mul_gt(a: u128, b: u128, c: u128, d: u128) -> bool {
    let wide = |x: u128, y: u128| -> (u128, u128) {
        let (xh, xl) = (x >> 64, x & u64::MAX as u128);
        let (yh, yl) = (y >> 64, y & u64::MAX as u128);
        let ll = xl * yl;
        let lh = xl * yh;
        let hl = xh * yl;
        let hh = xh * yh;
        let mid = (ll >> 64) + (lh & u64::MAX as u128) + (hl & u64::MAX as u128);
        let lo = (ll & u64::MAX as u128) | (mid << 64);
        let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
        (hi, lo)
    };
    wide(a, b) > wide(c, d)
}

/// Pixels whose bin exceeds the Otsu threshold; all-zero for a constant
/// image.
pub fn otsu_binarize(pixels: &[f32], width: usize, height: usize) -> BinaryMask {
    assert_eq!(pixels.len(), width * height, "image size mismatch");
    let bits = match otsu_threshold(pixels) {
        Some(t) => pixels.iter().map(|&p| intensity_bin(p) > t).collect(),
        None => vec![false; pixels.len()],
    };
    BinaryMask::new(width, height, bits)
}

/// Canny parameters; thresholds are fractions of the maximum gradient
/// magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn gaussian_blur(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (2.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .zip(&kernel)
                .map(|(k, &kv)| kv * img[y * w + clamp_idx(x as isize + k, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .zip(&kernel)
                .map(|(k, &kv)| kv * tmp[clamp_idx(y as isize + k, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edge points `(x, y)` of a binary mask: Gaussian smoothing, Sobel
/// gradients, non-maximum suppression along four directions, and
/// hysteresis with 8-connectivity.
pub fn canny_edges(mask: &BinaryMask, params: CannyParams) -> Vec<Point> {
    let (w, h) = (mask.width, mask.height);
    if w == 0 || h == 0 || mask.is_empty() {
        return Vec::new();
    }
    let img: Vec<f64> = mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let s = gaussian_blur(&img, w, h, params.sigma);
    let at = |x: isize, y: isize| s[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[i] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let m = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // Neighbor offsets on the negative side of each gradient direction
    // (image y grows downward, so 45 degrees points to (+1, +1)).
    const NEG: [(isize, isize); 4] = [(-1, 0), (-1, -1), (0, -1), (1, -1)];
    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v <= 0.0 {
                continue;
            }
            let (dx, dy) = NEG[dir[i] as usize];
            // Strict on one side and inclusive on the other so a plateau of
            // two equal maxima keeps exactly one pixel.
            if v > m(x + dx, y + dy) && v >= m(x - dx, y - dy) {
                thin[i] = v;
            }
        }
    }
    let (lo, hi) = (params.low * max, params.high * max);
    let mut edge = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= hi).collect();
    for &i in &stack {
        edge[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] >= lo {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    (0..w * h)
        .filter(|&i| edge[i])
        .map(|i| ((i % w) as f64, (i / w) as f64))
        .collect()
}

fn directed_sq<'a>(a: &'a [Point], b: &'a [Point]) -> impl Iterator<Item = f64> + 'a {
    let b = b.to_vec();
    a.iter().map(move |p| {
        b.iter()
            .map(|q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2))
            .fold(f64::INFINITY, f64::min)
    })
}

/// Symmetric Hausdorff distance.
pub fn hausdorff(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let ab = directed_sq(a, b).fold(0.0, f64::max);
    let ba = directed_sq(b, a).fold(0.0, f64::max);
    Ok(ab.max(ba).sqrt())
}

/// Chamfer distance: the average of both directed mean nearest-neighbor
/// distances.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let ab: f64 = directed_sq(a, b).map(f64::sqrt).sum::<f64>() / a.len() as f64;
    let ba: f64 = directed_sq(b, a).map(f64::sqrt).sum::<f64>() / b.len() as f64;
    Ok(0.5 * (ab + ba))
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} mask vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.bits.iter().zip(&b.bits) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} pixels", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len().max(1) as f64)
}

pub fn mae(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} pixels", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len().max(1) as f64)
}

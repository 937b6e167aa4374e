mod common;

use common::mini_matrix;
use glyphsplit::eval::*;
use glyphsplit::glyphset::Split;
use glyphsplit::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_directed(a: &[Point], b: &[Point]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = ((p.0 - q.0) * (p.0 - q.0) + (p.1 - q.1) * (p.1 - q.1)).sqrt();
            if d < best {
                best = d;
            }
        }
        out.push(best);
    }
    out
}

fn brute_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let mut h: f64 = 0.0;
    for d in brute_directed(a, b).into_iter().chain(brute_directed(b, a)) {
        h = h.max(d);
    }
    h
}

fn brute_chamfer(a: &[Point], b: &[Point]) -> f64 {
    let ab = brute_directed(a, b);
    let ba = brute_directed(b, a);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    0.5 * (mean(&ab) + mean(&ba))
}

fn random_points(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = rng.gen_range(1..=200);
    let integer = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            if integer {
                (rng.gen_range(0..64) as f64, rng.gen_range(0..64) as f64)
            } else {
                (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0))
            }
        })
        .collect()
}

#[test]
fn hausdorff_and_chamfer_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..500 {
        let a = random_points(&mut rng);
        let b = random_points(&mut rng);
        let h = hausdorff(&a, &b).unwrap();
        let c = chamfer(&a, &b).unwrap();
        let (hw, cw) = (brute_hausdorff(&a, &b), brute_chamfer(&a, &b));
        assert!((h - hw).abs() <= 1e-12 * hw.max(1.0), "{h} vs {hw}");
        assert!((c - cw).abs() <= 1e-12 * cw.max(1.0), "{c} vs {cw}");
    }
}

#[test]
fn point_set_examples() {
    assert_eq!(hausdorff(&[(0.0, 0.0)], &[(3.0, 4.0)]).unwrap(), 5.0);
    assert_eq!(chamfer(&[(0.0, 0.0), (0.0, 2.0)], &[(0.0, 1.0)]).unwrap(), 1.0);
    assert!(matches!(hausdorff(&[], &[(1.0, 1.0)]), Err(Error::EmptyPointSet)));
    assert!(matches!(chamfer(&[(1.0, 1.0)], &[]), Err(Error::EmptyPointSet)));
}

/// Between-class variance of every threshold straight from the pixels.
fn brute_otsu(pixels: &[f32]) -> Option<u8> {
    let bins: Vec<u32> = pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u32).collect();
    let n = bins.len() as f64;
    let mut best: Option<(u8, f64)> = None;
    for t in 0..=255u32 {
        let lo: Vec<f64> = bins.iter().filter(|&&b| b <= t).map(|&b| b as f64).collect();
        let hi: Vec<f64> = bins.iter().filter(|&&b| b > t).map(|&b| b as f64).collect();
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
        let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        // Thresholds in an empty gap give the same split; keep the first.
        if best.map_or(true, |(_, v)| var > v * (1.0 + 1e-12)) {
            best = Some((t as u8, var));
        }
    }
    best.map(|(t, _)| t)
}

fn check_otsu(pixels: &[f32], w: usize, h: usize) {
    let t = otsu_threshold(pixels);
    assert_eq!(t, brute_otsu(pixels));
    let mask = otsu_binarize(pixels, w, h);
    for (k, &p) in pixels.iter().enumerate() {
        let want = t.map_or(false, |t| intensity_bin(p) > t);
        assert_eq!(mask.bits[k], want);
    }
}

#[test]
fn otsu_matches_exhaustive_search_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..100 {
        let (w, h) = (rng.gen_range(4..40), rng.gen_range(4..40));
        let pixels: Vec<f32> = match k % 3 {
            0 => (0..w * h).map(|_| rng.gen()).collect(),
            // Two noisy modes.
            1 => (0..w * h)
                .map(|_| {
                    let c = if rng.gen_bool(0.3) { 0.8 } else { 0.2 };
                    (c + rng.gen_range(-0.15..0.15f32)).clamp(0.0, 1.0)
                })
                .collect(),
            // Few distinct levels, so many thresholds tie.
            _ => (0..w * h).map(|_| rng.gen_range(0..4) as f32 / 3.0).collect(),
        };
        check_otsu(&pixels, w, h);
    }
}

#[test]
fn otsu_matches_exhaustive_search_on_glyphs() {
    let m = mini_matrix(32, Split::Test, 2);
    for j in 0..20 {
        check_otsu(&m.get(0, j).pixels, 32, 32);
    }
}

#[test]
fn otsu_degenerate_and_two_level_images() {
    let two: Vec<f32> = (0..100).map(|i| if i % 7 < 3 { 0.9 } else { 0.1 }).collect();
    let m = otsu_binarize(&two, 10, 10);
    for (i, &b) in m.bits.iter().enumerate() {
        assert_eq!(b, i % 7 < 3);
    }
    assert_eq!(otsu_threshold(&[0.3; 25]), None);
    assert!(otsu_binarize(&[0.3; 25], 5, 5).is_empty());
}

fn square(size: usize, x0: usize, y0: usize, side: usize) -> BinaryMask {
    let bits = (0..size * size)
        .map(|k| {
            let (x, y) = (k % size, k / size);
            x >= x0 && x < x0 + side && y >= y0 && y < y0 + side
        })
        .collect();
    BinaryMask::new(size, size, bits)
}

#[test]
fn iou_identities() {
    let a = square(16, 2, 2, 6);
    assert_eq!(iou(&a, &a).unwrap(), 1.0);
    assert_eq!(iou(&a, &square(16, 9, 9, 6)).unwrap(), 0.0);
    // Shifted by half a side: overlap 18, union 54.
    let b = square(16, 5, 2, 6);
    assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let empty = BinaryMask::new(16, 16, vec![false; 256]);
    assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    assert_eq!(iou(&a, &empty).unwrap(), 0.0);
    assert!(matches!(iou(&a, &square(8, 0, 0, 2)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn canny_traces_a_square_outline() {
    let (size, x0, side) = (32usize, 8usize, 16usize);
    let mask = square(size, x0, x0, side);
    let edges = canny_edges(&mask, CannyParams::default());
    assert!(!edges.is_empty() && edges.len() <= size * size);
    let (lo, hi) = (x0 as f64 - 0.5, (x0 + side) as f64 - 0.5);
    // Distance from a pixel center to the square's boundary line.
    let to_outline = |(x, y): Point| {
        let dx = if x < lo { lo - x } else if x > hi { x - hi } else { 0.0 };
        let dy = if y < lo { lo - y } else if y > hi { y - hi } else { 0.0 };
        if dx > 0.0 || dy > 0.0 {
            dx.hypot(dy)
        } else {
            (x - lo).min(hi - x).min(y - lo).min(hi - y)
        }
    };
    for &p in &edges {
        assert!(to_outline(p) <= 1.0, "edge point {p:?} off the outline");
    }
    // Every side is traced along its whole straight run.
    for k in x0 + 2..x0 + side - 2 {
        let k = k as f64;
        for (onx, ony) in [(lo, k), (hi, k), (k, lo), (k, hi)] {
            assert!(edges.iter().any(|&(x, y)| (x - onx).abs() <= 1.0 && (y - ony).abs() <= 1.0));
        }
    }
    assert!(canny_edges(&BinaryMask::new(8, 8, vec![false; 64]), CannyParams::default()).is_empty());
}

#[test]
fn pixel_errors() {
    let a = [0.0f32, 0.5, 1.0, 0.25];
    let b = [1.0f32, 0.5, 0.0, 0.25];
    assert_eq!(mse(&a, &b).unwrap(), 0.5);
    assert_eq!(mae(&a, &b).unwrap(), 0.5);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert!(matches!(mae(&a, &b[..3]), Err(Error::ShapeMismatch(_))));
}

fn points() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..40)
}

fn masks() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (prop::collection::vec(any::<bool>(), 36), prop::collection::vec(any::<bool>(), 36))
        .prop_map(|(a, b)| (BinaryMask::new(6, 6, a), BinaryMask::new(6, 6, b)))
}

proptest! {
    #[test]
    fn distance_identities(a in points(), b in points()) {
        prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        prop_assert!((chamfer(&a, &b).unwrap() - chamfer(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(chamfer(&a, &b).unwrap() <= hausdorff(&a, &b).unwrap() + 1e-12);
    }

    #[test]
    fn iou_is_bounded_and_symmetric((a, b) in masks()) {
        let v = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a).unwrap());
    }

    #[test]
    fn edge_count_is_bounded((a, _) in masks()) {
        prop_assert!(canny_edges(&a, CannyParams::default()).len() <= 36);
    }
}

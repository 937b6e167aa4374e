use rand::seq::SliceRandom;
use rand::Rng;

use super::{GlyphImage, GlyphMatrix};
use crate::error::{Error, Result};
use crate::seed::{seeded, SeededRng};

/// Epoch-based sampler over matrix cells: every cell is visited exactly once
/// per epoch in a shuffled order; the last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    rng: SeededRng,
}

impl BatchSampler {
    pub fn new(num_cells: usize, batch_size: usize, seed: u64) -> Self {
        assert!(batch_size >= 1, "batch size must be at least 1");
        let mut rng = seeded(seed);
        let mut order: Vec<usize> = (0..num_cells).collect();
        order.shuffle(&mut rng);
        Self {
            batch_size,
            order,
            cursor: 0,
            epoch: 0,
            rng,
        }
    }

    pub fn for_matrix(matrix: &GlyphMatrix, batch_size: usize, seed: u64) -> Self {
        Self::new(matrix.len(), batch_size, seed)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Completed epochs so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Next batch of flat cell indices.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        if self.cursor >= self.order.len() {
            self.epoch += 1;
        }
        batch
    }

    /// Next batch resolved to glyph references.
    pub fn next_glyphs<'m>(&mut self, matrix: &'m GlyphMatrix) -> Vec<&'m GlyphImage> {
        self.next_batch().into_iter().map(|c| matrix.cell(c)).collect()
    }
}

/// Pre-training sample: the content source and target share a class, the
/// target and style source share a font.
#[derive(Debug, Clone, Copy)]
pub struct PretrainTriplet<'m> {
    pub content_src: &'m GlyphImage,
    pub target: &'m GlyphImage,
    pub style_src: &'m GlyphImage,
}

/// Draw `i != i'` uniformly and `j`, `j'` independently (`j' == j` allowed).
pub fn sample_pretrain_triplet<'m, R: Rng>(matrix: &'m GlyphMatrix, rng: &mut R) -> Result<PretrainTriplet<'m>> {
    let fonts = matrix.num_fonts();
    if fonts < 2 {
        return Err(Error::InsufficientFonts(fonts));
    }
    let classes = matrix.num_classes();
    let target_font = rng.gen_range(0..fonts);
    // Uniform over the remaining fonts.
    let mut content_font = rng.gen_range(0..fonts - 1);
    if content_font >= target_font {
        content_font += 1;
    }
    let class = rng.gen_range(0..classes);
    let style_class = rng.gen_range(0..classes);
    Ok(PretrainTriplet {
        content_src: matrix.get(content_font, class),
        target: matrix.get(target_font, class),
        style_src: matrix.get(target_font, style_class),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphset::ALPHABET;

    fn matrix(fonts: usize) -> GlyphMatrix {
        let rows = (0..fonts)
            .map(|i| (format!("f{i}"), (0..26).map(|_| vec![0.5; 16 * 16]).collect()))
            .collect();
        GlyphMatrix::from_rows(16, ALPHABET.to_vec(), rows).unwrap()
    }

    #[test]
    fn final_batch_of_epoch_is_remainder() {
        let mut s = BatchSampler::new(78, 64, 1);
        assert_eq!(s.batches_per_epoch(), 2);
        assert_eq!(s.next_batch().len(), 64);
        assert_eq!(s.next_batch().len(), 14);
        assert_eq!(s.epoch(), 1);
        assert_eq!(s.next_batch().len(), 64);
    }

    #[test]
    fn epoch_visits_every_cell_once() {
        let mut s = BatchSampler::new(78, 10, 4);
        let mut seen: Vec<usize> = (0..s.batches_per_epoch()).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..78).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = BatchSampler::new(78, 64, 11);
        let mut b = BatchSampler::new(78, 64, 11);
        for _ in 0..6 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn different_seeds_give_different_first_batches() {
        for k in 0..10u64 {
            let mut a = BatchSampler::new(78, 64, 2 * k);
            let mut b = BatchSampler::new(78, 64, 2 * k + 1);
            assert_ne!(a.next_batch(), b.next_batch(), "seed pair {k}");
        }
    }

    #[test]
    fn triplet_needs_two_fonts() {
        let m = matrix(1);
        let err = sample_pretrain_triplet(&m, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientFonts(1)));
    }

    #[test]
    fn triplet_invariants_hold_over_many_draws() {
        let m = matrix(2);
        let mut rng = seeded(5);
        for _ in 0..100_000 {
            let t = sample_pretrain_triplet(&m, &mut rng).unwrap();
            assert_eq!(t.content_src.class_id, t.target.class_id);
            assert_eq!(t.target.font_id, t.style_src.font_id);
            assert_ne!(t.content_src.font_id, t.target.font_id);
        }
    }

    #[test]
    fn target_font_is_uniform() {
        let m = matrix(4);
        let mut rng = seeded(9);
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sample_pretrain_triplet(&m, &mut rng).unwrap().target.font_id] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() <= 0.02, "frequency {freq}");
        }
    }
}

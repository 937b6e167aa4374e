//! Dense buffers used by the layers.
//!
//! Feature maps are stored channel-major, `[C][B][H][W]`, so a convolution
//! over a whole batch is a single GEMM and batch normalization reduces over
//! one contiguous run per channel. Fully connected activations are plain
//! row-major `[B][F]` matrices.

use super::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stack matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Self]) -> Self {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack: column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Self { rows, cols, data }
    }

    /// Concatenate two matrices with equal row counts side by side.
    pub fn hstack(left: &Self, right: &Self) -> Self {
        assert_eq!(left.rows, right.rows, "hstack: row mismatch");
        let cols = left.cols + right.cols;
        let mut data = Vec::with_capacity(left.rows * cols);
        for r in 0..left.rows {
            data.extend_from_slice(left.row(r));
            data.extend_from_slice(right.row(r));
        }
        Self {
            rows: left.rows,
            cols,
            data,
        }
    }

    /// Inverse of [`Matrix::hstack`]: split columns at `at`.
    pub fn split_cols(&self, at: usize) -> (Self, Self) {
        let mut left = Self::zeros(self.rows, at);
        let mut right = Self::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            let row = self.row(r);
            left.row_mut(r).copy_from_slice(&row[..at]);
            right.row_mut(r).copy_from_slice(&row[at..]);
        }
        (left, right)
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Batched feature maps in `[C][B][H][W]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    /// Single-channel batch from a `[B][H*W]` matrix of images.
    pub fn from_images(images: &Matrix<T>, height: usize, width: usize) -> Self {
        assert_eq!(images.cols, height * width, "image size mismatch");
        Self {
            channels: 1,
            batch: images.rows,
            height,
            width,
            data: images.data.clone(),
        }
    }

    /// Inverse of [`FeatureMap::from_images`]; requires one channel.
    pub fn into_images(self) -> Matrix<T> {
        assert_eq!(self.channels, 1, "into_images needs a single channel");
        Matrix::from_vec(self.batch, self.height * self.width, self.data)
    }

    /// Number of elements per channel (`B*H*W`).
    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    /// Flatten to `[B][C*H*W]`, each row ordered channel, row, column.
    pub fn flatten(&self) -> Matrix<T> {
        let hw = self.height * self.width;
        let cols = self.channels * hw;
        let mut out = Matrix::zeros(self.batch, cols);
        for c in 0..self.channels {
            for b in 0..self.batch {
                let src = &self.data[(c * self.batch + b) * hw..(c * self.batch + b + 1) * hw];
                out.data[b * cols + c * hw..b * cols + (c + 1) * hw].copy_from_slice(src);
            }
        }
        out
    }

    /// Inverse of [`FeatureMap::flatten`].
    pub fn unflatten(m: &Matrix<T>, channels: usize, height: usize, width: usize) -> Self {
        let hw = height * width;
        assert_eq!(m.cols, channels * hw, "unflatten: column count mismatch");
        let mut out = Self::zeros(channels, m.rows, height, width);
        for c in 0..channels {
            for b in 0..m.rows {
                let dst = (c * m.rows + b) * hw;
                out.data[dst..dst + hw].copy_from_slice(&m.data[b * m.cols + c * hw..b * m.cols + (c + 1) * hw]);
            }
        }
        out
    }
}

/// Geometry of a square-kernel strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

/// Unfold `x` into a `[C*k*k][B*Ho*Wo]` column matrix.
pub fn im2col<T: Scalar>(x: &FeatureMap<T>, g: ConvGeometry) -> Matrix<T> {
    let (c_in, b_n, h, w) = (x.channels, x.batch, x.height, x.width);
    let (ho, wo) = (g.output_size(h), g.output_size(w));
    let n = b_n * ho * wo;
    let k = g.kernel;
    let mut cols = Matrix::zeros(c_in * k * k, n);
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols.data[row * n..(row + 1) * n];
                for b in 0..b_n {
                    let src = &x.data[(c * b_n + b) * h * w..(c * b_n + b + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a column matrix back onto a `[C][B][H][W]` map, summing overlaps.
/// Adjoint of [`im2col`] for the same geometry and input size.
pub fn col2im<T: Scalar>(
    cols: &Matrix<T>,
    channels: usize,
    batch: usize,
    height: usize,
    width: usize,
    g: ConvGeometry,
) -> FeatureMap<T> {
    let (ho, wo) = (g.output_size(height), g.output_size(width));
    let n = batch * ho * wo;
    let k = g.kernel;
    assert_eq!(cols.rows, channels * k * k, "col2im: row count mismatch");
    assert_eq!(cols.cols, n, "col2im: column count mismatch");
    let mut x = FeatureMap::zeros(channels, batch, height, width);
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols.data[row * n..(row + 1) * n];
                for b in 0..batch {
                    let dst = &mut x.data[(c * batch + b) * height * width..(c * batch + b + 1) * height * width];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * width..(iy as usize + 1) * width];
                        let src_row = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, &s) in src_row.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < width as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

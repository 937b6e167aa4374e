use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Principal axes of a point cloud, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit vectors, one per component.
    pub axes: Vec<Vec<f64>>,
    /// Sample variance along each axis, non-increasing.
    pub explained_variance: Vec<f64>,
}

/// Fit PCA from the eigendecomposition of the sample covariance
/// (denominator `n - 1`).
///
/// Each axis is oriented so its largest-magnitude component is positive.
pub fn fit_pca(vectors: &[Vec<f64>], n_components: usize) -> Result<PcaProjection> {
    if n_components == 0 {
        return Err(Error::InvalidConfig("PCA needs at least one component".into()));
    }
    let n = vectors.len();
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::ShapeMismatch("PCA input vectors differ in length".into()));
    }
    if n < 2 || dim == 0 || vectors.iter().all(|v| v == &vectors[0]) {
        return Err(Error::DegenerateInput);
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |r, c| vectors[r][c] - mean[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let k = n_components.min(dim);
    let mut axes = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        axis.iter_mut().for_each(|v| *v /= norm);
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(axis);
        // Tiny negative eigenvalues are rounding noise of a PSD matrix.
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaProjection {
        mean,
        axes,
        explained_variance,
    })
}

/// Coordinates `(v - mean) . axis` for every vector and axis.
pub fn project(proj: &PcaProjection, vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|v| {
            proj.axes
                .iter()
                .map(|a| a.iter().zip(v.iter().zip(&proj.mean)).map(|(ai, (x, m))| ai * (x - m)).sum())
                .collect()
        })
        .collect()
}

//! Loss terms and their gradients.
//!
//! Values are accumulated and returned in `f64` regardless of the network
//! precision. Gradient variants return the gradient of the batch-mean loss
//! with respect to their matrix argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Scalar};
use crate::trainer::AverageFeatureTable;

/// Probabilities are clamped to `[CE_CLAMP, 1 - CE_CLAMP]` before the log.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_style: f64,
    pub lambda_content: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 0.001,
            lambda_style: 1.0,
            lambda_content: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.lambda_cls) && ok(self.lambda_style) && ok(self.lambda_content) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("loss weights must be finite and >= 0: {self:?}")))
        }
    }
}

fn check_rows<T: Scalar>(feats: &Matrix<T>, ids: &[usize]) -> Result<()> {
    if feats.rows != ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {} ids",
            feats.rows,
            ids.len()
        )));
    }
    Ok(())
}

fn lookup(
    table: &std::collections::BTreeMap<usize, Vec<f64>>,
    id: usize,
    dim: usize,
    missing: fn(usize) -> Error,
) -> Result<&[f64]> {
    let v = table.get(&id).ok_or_else(|| missing(id))?;
    if v.len() != dim {
        return Err(Error::ShapeMismatch(format!("average has {} components, features {dim}", v.len())));
    }
    Ok(v)
}

fn variance_grad<T: Scalar>(
    feats: &Matrix<T>,
    ids: &[usize],
    table: &std::collections::BTreeMap<usize, Vec<f64>>,
    missing: fn(usize) -> Error,
    want_grad: bool,
) -> Result<(f64, Option<Matrix<T>>)> {
    check_rows(feats, ids)?;
    if feats.rows == 0 {
        return Ok((0.0, want_grad.then(|| Matrix::zeros(0, feats.cols))));
    }
    let b = feats.rows as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Matrix::zeros(feats.rows, feats.cols));
    for (r, &id) in ids.iter().enumerate() {
        let avg = lookup(table, id, feats.cols, missing)?;
        for (c, (&z, &m)) in feats.row(r).iter().zip(avg).enumerate() {
            let d = z.as_f64() - m;
            total += d * d;
            if let Some(g) = grad.as_mut() {
                g.data[r * feats.cols + c] = T::from_f64_lossy(2.0 * d / b);
            }
        }
    }
    Ok((total / b, grad))
}

/// Mean squared distance of each style feature to its font's average.
pub fn style_variance_loss<T: Scalar>(style: &Matrix<T>, font_ids: &[usize], avgs: &AverageFeatureTable) -> Result<f64> {
    variance_grad(style, font_ids, &avgs.style_avg, Error::UnknownFont, false).map(|r| r.0)
}

pub fn style_variance_grad<T: Scalar>(
    style: &Matrix<T>,
    font_ids: &[usize],
    avgs: &AverageFeatureTable,
) -> Result<(f64, Matrix<T>)> {
    let (v, g) = variance_grad(style, font_ids, &avgs.style_avg, Error::UnknownFont, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// Mean squared distance of each content feature to its class's average.
pub fn content_variance_loss<T: Scalar>(
    content: &Matrix<T>,
    class_ids: &[usize],
    avgs: &AverageFeatureTable,
) -> Result<f64> {
    variance_grad(content, class_ids, &avgs.content_avg, Error::UnknownClass, false).map(|r| r.0)
}

pub fn content_variance_grad<T: Scalar>(
    content: &Matrix<T>,
    class_ids: &[usize],
    avgs: &AverageFeatureTable,
) -> Result<(f64, Matrix<T>)> {
    let (v, g) = variance_grad(content, class_ids, &avgs.content_avg, Error::UnknownClass, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn check_same_shape<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// Mean absolute error over batch and pixels.
pub fn reconstruction_loss<T: Scalar>(x: &Matrix<T>, x_hat: &Matrix<T>) -> Result<f64> {
    check_same_shape(x, x_hat)?;
    if x.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = x.data.iter().zip(&x_hat.data).map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs()).sum();
    Ok(sum / x.data.len() as f64)
}

/// Same reduction as [`reconstruction_loss`], applied to style-transferred
/// outputs against their targets.
pub fn transfer_loss<T: Scalar>(target: &Matrix<T>, transferred: &Matrix<T>) -> Result<f64> {
    reconstruction_loss(target, transferred)
}

/// MAE and its gradient with respect to `x_hat`. The subgradient at a tie
/// is 0.
pub fn mae_grad<T: Scalar>(x: &Matrix<T>, x_hat: &Matrix<T>) -> Result<(f64, Matrix<T>)> {
    let value = reconstruction_loss(x, x_hat)?;
    let n = T::from_usize(x.data.len().max(1)).expect("size fits");
    let mut g = Matrix::zeros(x.rows, x.cols);
    for ((o, &a), &b) in g.data.iter_mut().zip(&x.data).zip(&x_hat.data) {
        *o = if b > a {
            T::one() / n
        } else if b < a {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    Ok((value, g))
}

fn clamped_nll(p: f64) -> f64 {
    -p.clamp(CE_CLAMP, 1.0 - CE_CLAMP).ln()
}

/// Mean negative log-probability of the true class.
pub fn classification_loss<T: Scalar>(pred: &Matrix<T>, labels: &[usize]) -> Result<f64> {
    check_rows(pred, labels)?;
    if pred.rows == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = pred.row(r);
        if y >= row.len() {
            return Err(Error::UnknownClass(y));
        }
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if row.iter().any(|v| !v.is_finite() || *v < T::zero()) || (sum - 1.0).abs() > 1e-4 {
            return Err(Error::InvalidDistribution(format!("row {r} sums to {sum}")));
        }
        total += clamped_nll(row[y].as_f64());
    }
    Ok(total / pred.rows as f64)
}

/// Softmax cross-entropy from logits and its gradient with respect to the
/// logits. A row whose true-class probability sits in the clamp region
/// contributes no gradient, matching the flat clamped loss there.
pub fn cross_entropy_grad<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(f64, Matrix<T>)> {
    check_rows(logits, labels)?;
    let probs = crate::nn::softmax_rows(logits);
    let value = classification_loss(&probs, labels)?;
    let b = T::from_usize(logits.rows.max(1)).expect("size fits");
    let mut g = Matrix::zeros(logits.rows, logits.cols);
    for (r, &y) in labels.iter().enumerate() {
        let p = probs.row(r);
        let py = p[y].as_f64();
        if !(CE_CLAMP..=1.0 - CE_CLAMP).contains(&py) {
            continue;
        }
        for (k, (o, &pk)) in g.row_mut(r).iter_mut().zip(p).enumerate() {
            let target = if k == y { T::one() } else { T::zero() };
            *o = (pk - target) / b;
        }
    }
    Ok((value, g))
}

/// `l_rec + l_trans + lambda_cls * l_cls`.
pub fn pretrain_loss(l_rec: f64, l_trans: f64, l_cls: f64, w: &LossWeights) -> f64 {
    l_rec + l_trans + w.lambda_cls * l_cls
}

/// `l_rec + lambda_cls * l_cls + lambda_style * l_style + lambda_content * l_content`.
pub fn finetune_loss(l_rec: f64, l_cls: f64, l_style: f64, l_content: f64, w: &LossWeights) -> f64 {
    l_rec + w.lambda_cls * l_cls + w.lambda_style * l_style + w.lambda_content * l_content
}

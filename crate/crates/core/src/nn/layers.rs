//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Every layer owns its parameters together with their gradient
//! accumulators. `forward` returns whatever the matching `backward` needs;
//! `backward` adds into the gradient buffers, so several backward calls can
//! accumulate before one optimizer step.

use rand::Rng;
use rand::distributions::{Distribution, Uniform};

use super::scalar::{gemm, Scalar};
use super::tensor::{col2im, im2col, ConvGeometry, FeatureMap, Matrix};

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let mut p = Self::zeros(shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    /// He-uniform initialization for a layer with the given fan-in.
    pub fn he_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut p = Self::zeros(shape);
        for v in p.value.iter_mut() {
            *v = T::from_f64_lossy(dist.sample(rng));
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named mutable handles to parameters, in a fixed traversal order.
pub type ParamsMut<'a, T> = Vec<(String, &'a mut Param<T>)>;
/// Named shared handles to parameters, in the same order as [`ParamsMut`].
pub type ParamsRef<'a, T> = Vec<(String, &'a Param<T>)>;

/// `y = x W^T + b` with `W` stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::he_uniform(&[out_features, in_features], in_features, rng),
            bias: Param::zeros(&[out_features]),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.cols, self.in_features, "linear: input width mismatch");
        let mut y = Matrix::zeros(x.rows, self.out_features);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        gemm(
            false,
            true,
            x.rows,
            self.out_features,
            self.in_features,
            T::one(),
            &x.data,
            &self.weight.value,
            T::one(),
            &mut y.data,
        );
        y
    }

    /// Accumulate parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Matrix<T>, gy: &Matrix<T>, need_input_grad: bool) -> Option<Matrix<T>> {
        gemm(
            true,
            false,
            self.out_features,
            self.in_features,
            x.rows,
            T::one(),
            &gy.data,
            &x.data,
            T::one(),
            &mut self.weight.grad,
        );
        for r in 0..gy.rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(gy.row(r)) {
                *g += d;
            }
        }
        need_input_grad.then(|| {
            let mut gx = Matrix::zeros(gy.rows, self.in_features);
            gemm(
                false,
                false,
                gy.rows,
                self.in_features,
                self.out_features,
                T::one(),
                &gy.data,
                &self.weight.value,
                T::zero(),
                &mut gx.data,
            );
            gx
        })
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, T>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, T>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

/// Strided 2-D convolution, weight stored `[out][in*k*k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

pub struct Conv2dCache<T> {
    cols: Matrix<T>,
    in_shape: (usize, usize, usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, geometry: ConvGeometry, rng: &mut R) -> Self {
        let k2 = geometry.kernel * geometry.kernel;
        Self {
            in_channels,
            out_channels,
            geometry,
            weight: Param::he_uniform(&[out_channels, in_channels, geometry.kernel, geometry.kernel], in_channels * k2, rng),
            bias: Param::zeros(&[out_channels]),
        }
    }

    fn kk(&self) -> usize {
        self.in_channels * self.geometry.kernel * self.geometry.kernel
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, Conv2dCache<T>) {
        assert_eq!(x.channels, self.in_channels, "conv2d: channel mismatch");
        let cols = im2col(x, self.geometry);
        let (ho, wo) = (self.geometry.output_size(x.height), self.geometry.output_size(x.width));
        let mut y = FeatureMap::zeros(self.out_channels, x.batch, ho, wo);
        let plane = y.plane();
        for (o, chunk) in y.data.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
        }
        gemm(
            false,
            false,
            self.out_channels,
            plane,
            self.kk(),
            T::one(),
            &self.weight.value,
            &cols.data,
            T::one(),
            &mut y.data,
        );
        let cache = Conv2dCache {
            cols,
            in_shape: (x.channels, x.batch, x.height, x.width),
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: &Conv2dCache<T>, gy: &FeatureMap<T>, need_input_grad: bool) -> Option<FeatureMap<T>> {
        let plane = gy.plane();
        let kk = self.kk();
        gemm(
            false,
            true,
            self.out_channels,
            kk,
            plane,
            T::one(),
            &gy.data,
            &cache.cols.data,
            T::one(),
            &mut self.weight.grad,
        );
        for (o, chunk) in gy.data.chunks(plane).enumerate() {
            self.bias.grad[o] += chunk.iter().copied().sum::<T>();
        }
        need_input_grad.then(|| {
            let mut gcols = Matrix::zeros(kk, plane);
            gemm(
                true,
                false,
                kk,
                plane,
                self.out_channels,
                T::one(),
                &self.weight.value,
                &gy.data,
                T::zero(),
                &mut gcols.data,
            );
            let (c, b, h, w) = cache.in_shape;
            col2im(&gcols, c, b, h, w, self.geometry)
        })
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, T>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, T>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

/// Transposed convolution that doubles spatial size: the adjoint of a
/// [`Conv2d`] with the same geometry applied to the upsampled map.
/// Weight stored `[in][out*k*k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

pub struct ConvTranspose2dCache<T> {
    input: FeatureMap<T>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, geometry: ConvGeometry, rng: &mut R) -> Self {
        let k = geometry.kernel;
        // Each output pixel sees roughly in*k*k/stride^2 inputs.
        let fan_in = (in_channels * k * k) / (geometry.stride * geometry.stride);
        Self {
            in_channels,
            out_channels,
            geometry,
            weight: Param::he_uniform(&[in_channels, out_channels, k, k], fan_in, rng),
            bias: Param::zeros(&[out_channels]),
        }
    }

    fn okk(&self) -> usize {
        self.out_channels * self.geometry.kernel * self.geometry.kernel
    }

    /// Output side length for an input side length.
    pub fn output_size(&self, input: usize) -> usize {
        input * self.geometry.stride
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, ConvTranspose2dCache<T>) {
        assert_eq!(x.channels, self.in_channels, "conv_transpose2d: channel mismatch");
        let (ho, wo) = (self.output_size(x.height), self.output_size(x.width));
        debug_assert_eq!(self.geometry.output_size(ho), x.height);
        let n = x.plane();
        let mut cols = Matrix::zeros(self.okk(), n);
        gemm(
            true,
            false,
            self.okk(),
            n,
            self.in_channels,
            T::one(),
            &self.weight.value,
            &x.data,
            T::zero(),
            &mut cols.data,
        );
        let mut y = col2im(&cols, self.out_channels, x.batch, ho, wo, self.geometry);
        let plane = y.plane();
        for (o, chunk) in y.data.chunks_mut(plane).enumerate() {
            let b = self.bias.value[o];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        (y, ConvTranspose2dCache { input: x.clone() })
    }

    pub fn backward(
        &mut self,
        cache: &ConvTranspose2dCache<T>,
        gy: &FeatureMap<T>,
        need_input_grad: bool,
    ) -> Option<FeatureMap<T>> {
        let x = &cache.input;
        let n = x.plane();
        let gcols = im2col(gy, self.geometry);
        debug_assert_eq!(gcols.cols, n);
        gemm(
            false,
            true,
            self.in_channels,
            self.okk(),
            n,
            T::one(),
            &x.data,
            &gcols.data,
            T::one(),
            &mut self.weight.grad,
        );
        let plane = gy.plane();
        for (o, chunk) in gy.data.chunks(plane).enumerate() {
            self.bias.grad[o] += chunk.iter().copied().sum::<T>();
        }
        need_input_grad.then(|| {
            let mut gx = FeatureMap::zeros(self.in_channels, x.batch, x.height, x.width);
            gemm(
                false,
                false,
                self.in_channels,
                n,
                self.okk(),
                T::one(),
                &self.weight.value,
                &gcols.data,
                T::zero(),
                &mut gx.data,
            );
            gx
        })
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, T>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, T>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

/// Per-channel batch normalization over `B*H*W`.
///
/// Training mode normalizes with batch statistics and folds them into the
/// running estimates; inference uses the running estimates only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(&[channels], T::one()),
            beta: Param::zeros(&[channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward_train(&mut self, x: &FeatureMap<T>) -> (FeatureMap<T>, BatchNormCache<T>) {
        assert_eq!(x.channels, self.channels, "batchnorm: channel mismatch");
        let plane = x.plane();
        let n = T::from_usize(plane).expect("plane size fits");
        let mut y = x.clone();
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = vec![T::zero(); self.channels];
        let eps = T::from_f64_lossy(self.eps);
        let m = T::from_f64_lossy(self.momentum);
        for c in 0..self.channels {
            let xs = &x.data[c * plane..(c + 1) * plane];
            let mean = xs.iter().copied().sum::<T>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let xh = &mut xhat[c * plane..(c + 1) * plane];
            let ys = &mut y.data[c * plane..(c + 1) * plane];
            for ((h, yv), &xv) in xh.iter_mut().zip(ys.iter_mut()).zip(xs) {
                *h = (xv - mean) * istd;
                *yv = g * *h + b;
            }
            let unbiased = if plane > 1 {
                var * n / (n - T::one())
            } else {
                var
            };
            self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * mean;
            self.running_var[c] = (T::one() - m) * self.running_var[c] + m * unbiased;
        }
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        assert_eq!(x.channels, self.channels, "batchnorm: channel mismatch");
        let plane = x.plane();
        let eps = T::from_f64_lossy(self.eps);
        let mut y = x.clone();
        for c in 0..self.channels {
            let istd = T::one() / (self.running_var[c] + eps).sqrt();
            let scale = self.gamma.value[c] * istd;
            let shift = self.beta.value[c] - self.running_mean[c] * scale;
            for v in &mut y.data[c * plane..(c + 1) * plane] {
                *v = *v * scale + shift;
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, gy: &FeatureMap<T>) -> FeatureMap<T> {
        let plane = gy.plane();
        let n = T::from_usize(plane).expect("plane size fits");
        let mut gx = gy.clone();
        for c in 0..self.channels {
            let gys = &gy.data[c * plane..(c + 1) * plane];
            let xh = &cache.xhat[c * plane..(c + 1) * plane];
            let sum_g: T = gys.iter().copied().sum();
            let sum_gx: T = gys.iter().zip(xh).map(|(&g, &h)| g * h).sum();
            self.beta.grad[c] += sum_g;
            self.gamma.grad[c] += sum_gx;
            let k = self.gamma.value[c] * cache.inv_std[c] / n;
            for ((out, &g), &h) in gx.data[c * plane..(c + 1) * plane].iter_mut().zip(gys).zip(xh) {
                *out = k * (n * g - sum_g - h * sum_gx);
            }
        }
        gx
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, T>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, T>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    pub fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Vec<T>)>) {
        out.push((format!("{prefix}.running_mean"), &self.running_mean));
        out.push((format!("{prefix}.running_var"), &self.running_var));
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Vec<T>)>) {
        out.push((format!("{prefix}.running_mean"), &mut self.running_mean));
        out.push((format!("{prefix}.running_var"), &mut self.running_var));
    }
}

pub fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Gradient through a rectifier given its output.
pub fn relu_backward<T: Scalar>(grad: &mut [T], output: &[T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        *x = T::one() / (T::one() + (-*x).exp());
    }
}

/// Gradient through a logistic sigmoid given its output.
pub fn sigmoid_backward<T: Scalar>(grad: &mut [T], output: &[T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        *g *= y * (T::one() - y);
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

//! The disentangling autoencoder: a shared convolutional encoder, style and
//! content heads, a decoder fed with both features, and a character
//! classifier on content features.
//!
//! Training-mode passes return traces consumed by the matching `*_backward`
//! call; inference passes use running normalization statistics and take
//! `&self`, so a frozen network can be shared freely.

mod checkpoint;

pub use checkpoint::{Checkpoint, Phase, CHECKPOINT_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNormCache, Conv2dCache, ConvTranspose2dCache};
use crate::nn::{
    relu_backward, relu_inplace, sigmoid_backward, sigmoid_inplace, softmax_rows, BatchNorm2d, Conv2d,
    ConvGeometry, ConvTranspose2d, FeatureMap, Linear, Matrix, ParamsMut, ParamsRef, Scalar,
};
use crate::seed::seeded;

const GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: 3,
    stride: 2,
    padding: 1,
};

/// Decoder outputs are kept this far away from 0 and 1.
const OUTPUT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Encoder channel progression; the decoder mirrors it.
    pub channels: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: usize,
    pub classifier_hidden: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: vec![32, 64, 128, 256],
            feature_dim: 128,
            head_hidden: 128,
            classifier_hidden: 64,
            num_classes: 26,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let stages = self.channels.len();
        if stages == 0 || self.channels.contains(&0) {
            return Err(Error::InvalidConfig("encoder needs at least one non-empty stage".into()));
        }
        if !self.image_size.is_multiple_of(1 << stages) || self.image_size >> stages == 0 {
            return Err(Error::InvalidConfig(format!(
                "image size {} is not divisible by 2^{stages}",
                self.image_size
            )));
        }
        if self.feature_dim == 0 || self.head_hidden == 0 || self.classifier_hidden == 0 || self.num_classes < 2 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Side length of the innermost feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.channels.last().expect("validated config")
    }

    pub fn flat_dim(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_size() * self.bottleneck_size()
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }
}

/// Style and content features for a batch, `[B][feature_dim]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch<T> {
    pub style: Matrix<T>,
    pub content: Matrix<T>,
}

impl<T: Scalar> FeatureBatch<T> {
    pub fn len(&self) -> usize {
        self.style.rows
    }

    pub fn is_empty(&self) -> bool {
        self.style.rows == 0
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            style: self.style.slice_rows(start, end),
            content: self.content.slice_rows(start, end),
        }
    }
}

/// Two fully connected layers with rectifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

struct HeadTrace<T> {
    hidden: Matrix<T>,
    out: Matrix<T>,
}

impl<T: Scalar> Head<T> {
    fn forward(&self, x: &Matrix<T>) -> HeadTrace<T> {
        let mut hidden = self.fc1.forward(x);
        relu_inplace(&mut hidden.data);
        let mut out = self.fc2.forward(&hidden);
        relu_inplace(&mut out.data);
        HeadTrace { hidden, out }
    }

    fn backward(&mut self, x: &Matrix<T>, trace: &HeadTrace<T>, g_out: &Matrix<T>) -> Matrix<T> {
        let mut g = g_out.clone();
        relu_backward(&mut g.data, &trace.out.data);
        let mut g = self.fc2.backward(&trace.hidden, &g, true).expect("input grad requested");
        relu_backward(&mut g.data, &trace.hidden.data);
        self.fc1.backward(x, &g, true).expect("input grad requested")
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, T>) {
        self.fc1.params_mut(&format!("{prefix}.fc1"), out);
        self.fc2.params_mut(&format!("{prefix}.fc2"), out);
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, T>) {
        self.fc1.params(&format!("{prefix}.fc1"), out);
        self.fc2.params(&format!("{prefix}.fc2"), out);
    }
}

struct ConvStageTrace<T> {
    conv: Conv2dCache<T>,
    bn: BatchNormCache<T>,
    out: FeatureMap<T>,
}

/// Everything the encoder backward pass needs.
pub struct EncodeTrace<T> {
    stages: Vec<ConvStageTrace<T>>,
    flat: Matrix<T>,
    style: HeadTrace<T>,
    content: HeadTrace<T>,
}

struct DeconvStageTrace<T> {
    deconv: ConvTranspose2dCache<T>,
    bn: Option<BatchNormCache<T>>,
    out: FeatureMap<T>,
}

pub struct DecodeTrace<T> {
    input: Matrix<T>,
    projected: Matrix<T>,
    stages: Vec<DeconvStageTrace<T>>,
}

pub struct ClassifyTrace<T> {
    input: Matrix<T>,
    hidden: Matrix<T>,
}

/// Encoder E, heads, decoder D and classifier F.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangleNet<T> {
    pub config: ModelConfig,
    pub enc_conv: Vec<Conv2d<T>>,
    pub enc_bn: Vec<BatchNorm2d<T>>,
    pub style_head: Head<T>,
    pub content_head: Head<T>,
    pub dec_fc: Linear<T>,
    pub dec_deconv: Vec<ConvTranspose2d<T>>,
    /// One per deconvolution except the last, which ends in a sigmoid.
    pub dec_bn: Vec<BatchNorm2d<T>>,
    pub cls_fc1: Linear<T>,
    pub cls_fc2: Linear<T>,
}

/// The trained network in single precision.
pub type ModelParams = DisentangleNet<f32>;

impl<T: Scalar> DisentangleNet<T> {
    /// Fresh network with He-uniform weights, zero biases and identity
    /// normalization. Deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let rng = &mut rng;
        let mut enc_conv = Vec::new();
        let mut enc_bn = Vec::new();
        let mut c_in = 1;
        for &c in &config.channels {
            enc_conv.push(Conv2d::new(c_in, c, GEOMETRY, rng));
            enc_bn.push(BatchNorm2d::new(c));
            c_in = c;
        }
        let flat = config.flat_dim();
        let d = config.feature_dim;
        let style_head = Head {
            fc1: Linear::new(flat, config.head_hidden, rng),
            fc2: Linear::new(config.head_hidden, d, rng),
        };
        let content_head = Head {
            fc1: Linear::new(flat, config.head_hidden, rng),
            fc2: Linear::new(config.head_hidden, d, rng),
        };
        let dec_fc = Linear::new(2 * d, flat, rng);
        let mut dec_deconv = Vec::new();
        let mut dec_bn = Vec::new();
        let rev: Vec<usize> = config.channels.iter().rev().copied().collect();
        for (k, &c) in rev.iter().enumerate() {
            let c_out = rev.get(k + 1).copied().unwrap_or(1);
            dec_deconv.push(ConvTranspose2d::new(c, c_out, GEOMETRY, rng));
            if k + 1 < rev.len() {
                dec_bn.push(BatchNorm2d::new(c_out));
            }
        }
        let cls_fc1 = Linear::new(d, config.classifier_hidden, rng);
        let cls_fc2 = Linear::new(config.classifier_hidden, config.num_classes, rng);
        Ok(Self {
            config,
            enc_conv,
            enc_bn,
            style_head,
            content_head,
            dec_fc,
            dec_deconv,
            dec_bn,
            cls_fc1,
            cls_fc2,
        })
    }

    fn check_images(&self, x: &Matrix<T>) {
        assert_eq!(x.cols, self.config.pixels(), "image batch has the wrong pixel count");
    }

    /// Training-mode encoder: batch statistics, running estimates updated.
    pub fn encode_train(&mut self, x: &Matrix<T>) -> (FeatureBatch<T>, EncodeTrace<T>) {
        self.check_images(x);
        let s = self.config.image_size;
        let mut h = FeatureMap::from_images(x, s, s);
        let mut stages = Vec::with_capacity(self.enc_conv.len());
        for (conv, bn) in self.enc_conv.iter().zip(self.enc_bn.iter_mut()) {
            let (y, conv_cache) = conv.forward(&h);
            let (mut y, bn_cache) = bn.forward_train(&y);
            relu_inplace(&mut y.data);
            stages.push(ConvStageTrace {
                conv: conv_cache,
                bn: bn_cache,
                out: y.clone(),
            });
            h = y;
        }
        let flat = h.flatten();
        let style = self.style_head.forward(&flat);
        let content = self.content_head.forward(&flat);
        let feats = FeatureBatch {
            style: style.out.clone(),
            content: content.out.clone(),
        };
        (
            feats,
            EncodeTrace {
                stages,
                flat,
                style,
                content,
            },
        )
    }

    /// Accumulate encoder and head gradients from feature gradients.
    pub fn encode_backward(&mut self, trace: &EncodeTrace<T>, g_style: &Matrix<T>, g_content: &Matrix<T>) {
        let mut g_flat = self.style_head.backward(&trace.flat, &trace.style, g_style);
        let g_c = self.content_head.backward(&trace.flat, &trace.content, g_content);
        for (a, b) in g_flat.data.iter_mut().zip(&g_c.data) {
            *a += *b;
        }
        let b = self.config.bottleneck_size();
        let mut g = FeatureMap::unflatten(&g_flat, self.config.bottleneck_channels(), b, b);
        for k in (0..self.enc_conv.len()).rev() {
            let st = &trace.stages[k];
            relu_backward(&mut g.data, &st.out.data);
            let g_bn = self.enc_bn[k].backward(&st.bn, &g);
            match self.enc_conv[k].backward(&st.conv, &g_bn, k > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }

    /// Inference-mode encoder.
    pub fn encode(&self, x: &Matrix<T>) -> FeatureBatch<T> {
        self.check_images(x);
        let s = self.config.image_size;
        let mut h = FeatureMap::from_images(x, s, s);
        for (conv, bn) in self.enc_conv.iter().zip(&self.enc_bn) {
            let (y, _) = conv.forward(&h);
            let mut y = bn.forward_eval(&y);
            relu_inplace(&mut y.data);
            h = y;
        }
        let flat = h.flatten();
        FeatureBatch {
            style: self.style_head.forward(&flat).out,
            content: self.content_head.forward(&flat).out,
        }
    }

    fn decoder_input(&self, style: &Matrix<T>, content: &Matrix<T>) -> Matrix<T> {
        let d = self.config.feature_dim;
        assert!(style.cols == d && content.cols == d, "feature width mismatch");
        assert_eq!(style.rows, content.rows, "style/content batch mismatch");
        Matrix::hstack(style, content)
    }

    fn finish_output(mut y: FeatureMap<T>) -> Matrix<T> {
        sigmoid_inplace(&mut y.data);
        let lo = T::from_f64_lossy(OUTPUT_MARGIN);
        let hi = T::one() - lo;
        for v in y.data.iter_mut() {
            *v = v.max(lo).min(hi);
        }
        y.into_images()
    }

    /// Training-mode decoder; returns `[B][H*W]` images.
    pub fn decode_train(&mut self, style: &Matrix<T>, content: &Matrix<T>) -> (Matrix<T>, DecodeTrace<T>) {
        let input = self.decoder_input(style, content);
        let mut projected = self.dec_fc.forward(&input);
        relu_inplace(&mut projected.data);
        let b = self.config.bottleneck_size();
        let mut h = FeatureMap::unflatten(&projected, self.config.bottleneck_channels(), b, b);
        let n = self.dec_deconv.len();
        let mut stages = Vec::with_capacity(n);
        for k in 0..n {
            let (y, deconv) = self.dec_deconv[k].forward(&h);
            if k + 1 < n {
                let (mut y, bn) = self.dec_bn[k].forward_train(&y);
                relu_inplace(&mut y.data);
                stages.push(DeconvStageTrace {
                    deconv,
                    bn: Some(bn),
                    out: y.clone(),
                });
                h = y;
            } else {
                let images = Self::finish_output(y);
                stages.push(DeconvStageTrace {
                    deconv,
                    bn: None,
                    out: FeatureMap::from_images(&images, self.config.image_size, self.config.image_size),
                });
                return (
                    images,
                    DecodeTrace {
                        input,
                        projected,
                        stages,
                    },
                );
            }
        }
        unreachable!("decoder has at least one stage")
    }

    /// Accumulate decoder gradients; returns gradients for (style, content).
    pub fn decode_backward(&mut self, trace: &DecodeTrace<T>, g_images: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        let s = self.config.image_size;
        let mut g = FeatureMap::from_images(g_images, s, s);
        let n = self.dec_deconv.len();
        for k in (0..n).rev() {
            let st = &trace.stages[k];
            match &st.bn {
                None => sigmoid_backward(&mut g.data, &st.out.data),
                Some(bn_cache) => {
                    relu_backward(&mut g.data, &st.out.data);
                    g = self.dec_bn[k].backward(bn_cache, &g);
                }
            }
            g = self.dec_deconv[k].backward(&st.deconv, &g, true).expect("input grad requested");
        }
        let mut g_proj = g.flatten();
        relu_backward(&mut g_proj.data, &trace.projected.data);
        let g_in = self.dec_fc.backward(&trace.input, &g_proj, true).expect("input grad requested");
        g_in.split_cols(self.config.feature_dim)
    }

    /// Inference-mode decoder.
    pub fn decode(&self, style: &Matrix<T>, content: &Matrix<T>) -> Matrix<T> {
        let input = self.decoder_input(style, content);
        let mut projected = self.dec_fc.forward(&input);
        relu_inplace(&mut projected.data);
        let b = self.config.bottleneck_size();
        let mut h = FeatureMap::unflatten(&projected, self.config.bottleneck_channels(), b, b);
        let n = self.dec_deconv.len();
        for k in 0..n - 1 {
            let (y, _) = self.dec_deconv[k].forward(&h);
            let mut y = self.dec_bn[k].forward_eval(&y);
            relu_inplace(&mut y.data);
            h = y;
        }
        let (y, _) = self.dec_deconv[n - 1].forward(&h);
        Self::finish_output(y)
    }

    /// Classifier logits and the trace for its backward pass.
    pub fn classify_logits(&self, content: &Matrix<T>) -> (Matrix<T>, ClassifyTrace<T>) {
        let mut hidden = self.cls_fc1.forward(content);
        relu_inplace(&mut hidden.data);
        let logits = self.cls_fc2.forward(&hidden);
        (
            logits,
            ClassifyTrace {
                input: content.clone(),
                hidden,
            },
        )
    }

    /// Class probabilities for content features.
    pub fn classify(&self, content: &Matrix<T>) -> Matrix<T> {
        softmax_rows(&self.classify_logits(content).0)
    }

    /// Accumulate classifier gradients from logit gradients; returns the
    /// gradient with respect to the content features.
    pub fn classify_backward(&mut self, trace: &ClassifyTrace<T>, g_logits: &Matrix<T>) -> Matrix<T> {
        let mut g = self.cls_fc2.backward(&trace.hidden, g_logits, true).expect("input grad requested");
        relu_backward(&mut g.data, &trace.hidden.data);
        self.cls_fc1.backward(&trace.input, &g, true).expect("input grad requested")
    }

    /// Decode the content of `content_src` in the style of `style_src`.
    pub fn transfer(&self, content_src: &Matrix<T>, style_src: &Matrix<T>) -> Matrix<T> {
        let c = self.encode(content_src);
        let s = self.encode(style_src);
        self.decode(&s.style, &c.content)
    }

    /// Inference-mode encode followed by decode.
    pub fn reconstruct(&self, x: &Matrix<T>) -> Matrix<T> {
        let f = self.encode(x);
        self.decode(&f.style, &f.content)
    }

    /// All trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> ParamsMut<'_, T> {
        let mut out = Vec::new();
        for (k, (conv, bn)) in self.enc_conv.iter_mut().zip(self.enc_bn.iter_mut()).enumerate() {
            conv.params_mut(&format!("encoder.conv{k}"), &mut out);
            bn.params_mut(&format!("encoder.bn{k}"), &mut out);
        }
        self.style_head.params_mut("style_head", &mut out);
        self.content_head.params_mut("content_head", &mut out);
        self.dec_fc.params_mut("decoder.fc", &mut out);
        for (k, deconv) in self.dec_deconv.iter_mut().enumerate() {
            deconv.params_mut(&format!("decoder.deconv{k}"), &mut out);
        }
        for (k, bn) in self.dec_bn.iter_mut().enumerate() {
            bn.params_mut(&format!("decoder.bn{k}"), &mut out);
        }
        self.cls_fc1.params_mut("classifier.fc1", &mut out);
        self.cls_fc2.params_mut("classifier.fc2", &mut out);
        out
    }

    pub fn params(&self) -> ParamsRef<'_, T> {
        let mut out = Vec::new();
        for (k, (conv, bn)) in self.enc_conv.iter().zip(&self.enc_bn).enumerate() {
            conv.params(&format!("encoder.conv{k}"), &mut out);
            bn.params(&format!("encoder.bn{k}"), &mut out);
        }
        self.style_head.params("style_head", &mut out);
        self.content_head.params("content_head", &mut out);
        self.dec_fc.params("decoder.fc", &mut out);
        for (k, deconv) in self.dec_deconv.iter().enumerate() {
            deconv.params(&format!("decoder.deconv{k}"), &mut out);
        }
        for (k, bn) in self.dec_bn.iter().enumerate() {
            bn.params(&format!("decoder.bn{k}"), &mut out);
        }
        self.cls_fc1.params("classifier.fc1", &mut out);
        self.cls_fc2.params("classifier.fc2", &mut out);
        out
    }

    /// Normalization running statistics.
    pub fn buffers(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (k, bn) in self.enc_bn.iter().enumerate() {
            bn.buffers(&format!("encoder.bn{k}"), &mut out);
        }
        for (k, bn) in self.dec_bn.iter().enumerate() {
            bn.buffers(&format!("decoder.bn{k}"), &mut out);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (k, bn) in self.enc_bn.iter_mut().enumerate() {
            bn.buffers_mut(&format!("encoder.bn{k}"), &mut out);
        }
        for (k, bn) in self.dec_bn.iter_mut().enumerate() {
            bn.buffers_mut(&format!("decoder.bn{k}"), &mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// No parameter or running statistic is NaN or infinite.
    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.value.iter().all(|v| v.is_finite()))
            && self.buffers().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            channels: vec![2, 3],
            feature_dim: 4,
            head_hidden: 5,
            classifier_hidden: 4,
            num_classes: 3,
        }
    }

    #[test]
    fn rejects_indivisible_image_size() {
        let cfg = ModelConfig {
            image_size: 10,
            ..tiny_config()
        };
        assert!(DisentangleNet::<f32>::new(cfg, 0).is_err());
    }

    #[test]
    fn parameter_names_are_unique_and_ordered() {
        let net = DisentangleNet::<f64>::new(tiny_config(), 1).unwrap();
        let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "encoder.conv0.weight");
        assert_eq!(names.last().unwrap(), "classifier.fc2.bias");
    }

    #[test]
    fn default_bottleneck_is_4x4x256() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.bottleneck_size(), 4);
        assert_eq!(cfg.flat_dim(), 4096);
    }
}

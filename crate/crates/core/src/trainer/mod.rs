//! Two-phase training: style-transfer pre-training, the average-feature
//! bootstrap, and variance-loss fine-tuning.

mod averages;
mod history;

pub use averages::{
    cell_ids, compute_average_features, encode_matrix, within_group_variances, AverageFeatureTable,
    AverageProvenance,
};
pub use history::{EarlyStopper, EpochRecord, LossTerms, StopDecision, TrainingHistory};

use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyphset::{sample_pretrain_triplet, BatchSampler, GlyphImage, GlyphMatrix};
use crate::losses::{
    content_variance_grad, cross_entropy_grad, finetune_loss, mae_grad, pretrain_loss, style_variance_grad,
    LossWeights,
};
use crate::model::{Checkpoint, DisentangleNet, ModelParams, Phase};
use crate::nn::{Adam, Matrix, Scalar};
use crate::seed::{derive_seed, seeded};
use history::TermAccumulator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs_pretrain: usize,
    pub max_epochs_finetune: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Stop after this many optimizer steps in a phase (the epoch in
    /// progress is cut short and validated).
    pub max_steps: Option<usize>,
    /// Recompute the average features every k fine-tuning epochs; 0 keeps
    /// them frozen.
    pub recompute_avgs_every: usize,
    /// Give the classifier the `lambda_cls`-scaled gradient instead of the
    /// unscaled one. The encoder always receives the scaled gradient.
    pub scale_classifier_gradient: bool,
    /// Keep `epoch-NNN.ckpt` files besides `last.ckpt` and `best.ckpt`.
    pub keep_epoch_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.001,
            max_epochs_pretrain: 40,
            max_epochs_finetune: 30,
            early_stop_patience: 5,
            seed: 0,
            weights: LossWeights::default(),
            max_steps: None,
            recompute_avgs_every: 0,
            scale_classifier_gradient: false,
            keep_epoch_checkpoints: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        self.weights.validate()
    }
}

/// One pre-training batch: rows are aligned triplets.
#[derive(Debug, Clone)]
pub struct TripletBatch<T> {
    pub content_src: Matrix<T>,
    pub target: Matrix<T>,
    pub style_src: Matrix<T>,
    /// Class of content source and target.
    pub classes: Vec<usize>,
}

impl<T: Scalar> TripletBatch<T> {
    pub fn len(&self) -> usize {
        self.target.rows
    }

    pub fn is_empty(&self) -> bool {
        self.target.rows == 0
    }
}

fn stack_as<'a, T: Scalar>(glyphs: impl IntoIterator<Item = &'a GlyphImage>) -> Matrix<T> {
    GlyphMatrix::stack(glyphs).cast()
}

/// Draw `n` triplets from `matrix`.
pub fn sample_triplet_batch<R: rand::Rng>(matrix: &GlyphMatrix, n: usize, rng: &mut R) -> Result<TripletBatch<f32>> {
    let mut trips = Vec::with_capacity(n);
    for _ in 0..n {
        trips.push(sample_pretrain_triplet(matrix, rng)?);
    }
    Ok(TripletBatch {
        content_src: GlyphMatrix::stack(trips.iter().map(|t| t.content_src)),
        target: GlyphMatrix::stack(trips.iter().map(|t| t.target)),
        style_src: GlyphMatrix::stack(trips.iter().map(|t| t.style_src)),
        classes: trips.iter().map(|t| t.target.class_id).collect(),
    })
}

/// Classifier logit gradient into content-feature gradient, applying the
/// weighting policy. Returns the unweighted cross-entropy.
fn classifier_backward<T: Scalar>(
    net: &mut DisentangleNet<T>,
    content: &Matrix<T>,
    labels: &[usize],
    w: &LossWeights,
    scale_classifier_gradient: bool,
) -> Result<(f64, Matrix<T>)> {
    let (logits, trace) = net.classify_logits(content);
    let (l_cls, mut g_logits) = cross_entropy_grad(&logits, labels)?;
    let lambda = T::from_f64_lossy(w.lambda_cls);
    if scale_classifier_gradient {
        g_logits.data.iter_mut().for_each(|g| *g *= lambda);
        Ok((l_cls, net.classify_backward(&trace, &g_logits)))
    } else {
        let mut g = net.classify_backward(&trace, &g_logits);
        g.data.iter_mut().for_each(|v| *v *= lambda);
        Ok((l_cls, g))
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Forward and backward pass of one pre-training batch, accumulating
/// gradients into `net`.
///
/// Content source, target and style source go through the encoder as one
/// batch; the plain reconstruction of the target and the transferred image
/// go through the decoder as one batch.
pub fn pretrain_step<T: Scalar>(
    net: &mut DisentangleNet<T>,
    batch: &TripletBatch<T>,
    w: &LossWeights,
    scale_classifier_gradient: bool,
) -> Result<LossTerms> {
    let b = batch.len();
    let x = Matrix::vstack(&[&batch.content_src, &batch.target, &batch.style_src]);
    let (f, enc) = net.encode_train(&x);
    let style_in = Matrix::vstack(&[&f.style.slice_rows(b, 2 * b), &f.style.slice_rows(2 * b, 3 * b)]);
    let content_c = f.content.slice_rows(0, b);
    let content_in = Matrix::vstack(&[&f.content.slice_rows(b, 2 * b), &content_c]);
    let (out, dec) = net.decode_train(&style_in, &content_in);

    let (l_rec, g_rec) = mae_grad(&batch.target, &out.slice_rows(0, b))?;
    let (l_trans, g_trans) = mae_grad(&batch.target, &out.slice_rows(b, 2 * b))?;
    let g_out = Matrix::vstack(&[&g_rec, &g_trans]);
    let (g_style_dec, g_content_dec) = net.decode_backward(&dec, &g_out);
    let (l_cls, g_cls) = classifier_backward(net, &content_c, &batch.classes, w, scale_classifier_gradient)?;

    let d = f.style.cols;
    let mut g_style = Matrix::zeros(3 * b, d);
    g_style.data[b * d..].copy_from_slice(&g_style_dec.data);
    let mut g_content = Matrix::zeros(3 * b, d);
    g_content.data[..b * d].copy_from_slice(&g_content_dec.data[b * d..]);
    add_into(&mut g_content.data[..b * d], &g_cls.data);
    g_content.data[b * d..2 * b * d].copy_from_slice(&g_content_dec.data[..b * d]);
    net.encode_backward(&enc, &g_style, &g_content);

    Ok(LossTerms {
        rec: Some(l_rec),
        trans: Some(l_trans),
        cls: Some(l_cls),
        style: None,
        content: None,
        total: pretrain_loss(l_rec, l_trans, l_cls, w),
    })
}

/// Forward and backward pass of one fine-tuning batch against frozen
/// averages, accumulating gradients into `net`.
#[allow(clippy::too_many_arguments)]
pub fn finetune_step<T: Scalar>(
    net: &mut DisentangleNet<T>,
    images: &Matrix<T>,
    font_ids: &[usize],
    class_ids: &[usize],
    avgs: &AverageFeatureTable,
    w: &LossWeights,
    scale_classifier_gradient: bool,
) -> Result<LossTerms> {
    let (f, enc) = net.encode_train(images);
    let (out, dec) = net.decode_train(&f.style, &f.content);
    let (l_rec, g_out) = mae_grad(images, &out)?;
    let (mut g_style, mut g_content) = net.decode_backward(&dec, &g_out);
    let (l_cls, g_cls) = classifier_backward(net, &f.content, class_ids, w, scale_classifier_gradient)?;
    add_into(&mut g_content.data, &g_cls.data);
    let (l_style, gs) = style_variance_grad(&f.style, font_ids, avgs)?;
    let (l_content, gc) = content_variance_grad(&f.content, class_ids, avgs)?;
    let ls = T::from_f64_lossy(w.lambda_style);
    let lc = T::from_f64_lossy(w.lambda_content);
    for (d, &s) in g_style.data.iter_mut().zip(&gs.data) {
        *d += ls * s;
    }
    for (d, &s) in g_content.data.iter_mut().zip(&gc.data) {
        *d += lc * s;
    }
    net.encode_backward(&enc, &g_style, &g_content);
    Ok(LossTerms {
        rec: Some(l_rec),
        trans: None,
        cls: Some(l_cls),
        style: Some(l_style),
        content: Some(l_content),
        total: finetune_loss(l_rec, l_cls, l_style, l_content, w),
    })
}

/// Inference-mode L_fine terms of `net` over a feature batch.
#[allow(clippy::too_many_arguments)]
fn finetune_terms(
    params: &ModelParams,
    images: &Matrix<f32>,
    font_ids: &[usize],
    class_ids: &[usize],
    avgs: &AverageFeatureTable,
    w: &LossWeights,
) -> Result<LossTerms> {
    let mut rec_sum = 0.0;
    let mut cls_sum = 0.0;
    let mut style_sum = 0.0;
    let mut content_sum = 0.0;
    let n = images.rows;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let m = (end - start) as f64;
        let x = images.slice_rows(start, end);
        let f = params.encode(&x);
        let out = params.decode(&f.style, &f.content);
        rec_sum += m * crate::losses::reconstruction_loss(&x, &out)?;
        let probs = params.classify(&f.content);
        cls_sum += m * crate::losses::classification_loss(&probs, &class_ids[start..end])?;
        style_sum += m * crate::losses::style_variance_loss(&f.style, &font_ids[start..end], avgs)?;
        content_sum += m * crate::losses::content_variance_loss(&f.content, &class_ids[start..end], avgs)?;
    }
    let n = n.max(1) as f64;
    let (rec, cls, style, content) = (rec_sum / n, cls_sum / n, style_sum / n, content_sum / n);
    Ok(LossTerms {
        rec: Some(rec),
        trans: None,
        cls: Some(cls),
        style: Some(style),
        content: Some(content),
        total: finetune_loss(rec, cls, style, content, w),
    })
}

const EVAL_CHUNK: usize = 128;

fn pretrain_terms(params: &ModelParams, batch: &TripletBatch<f32>, w: &LossWeights) -> Result<LossTerms> {
    let n = batch.len();
    let (mut rec_sum, mut trans_sum, mut cls_sum) = (0.0, 0.0, 0.0);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let m = (end - start) as f64;
        let c = params.encode(&batch.content_src.slice_rows(start, end));
        let target = batch.target.slice_rows(start, end);
        let t = params.encode(&target);
        let s = params.encode(&batch.style_src.slice_rows(start, end));
        rec_sum += m * crate::losses::reconstruction_loss(&target, &params.decode(&t.style, &t.content))?;
        trans_sum += m * crate::losses::transfer_loss(&target, &params.decode(&s.style, &c.content))?;
        let probs = params.classify(&c.content);
        cls_sum += m * crate::losses::classification_loss(&probs, &batch.classes[start..end])?;
    }
    let n = n.max(1) as f64;
    let (rec, trans, cls) = (rec_sum / n, trans_sum / n, cls_sum / n);
    Ok(LossTerms {
        rec: Some(rec),
        trans: Some(trans),
        cls: Some(cls),
        style: None,
        content: None,
        total: pretrain_loss(rec, trans, cls, w),
    })
}

/// Writes `last.ckpt`, `best.ckpt` and optional per-epoch checkpoints.
struct CheckpointSink<'a> {
    dir: Option<&'a Path>,
    phase: Phase,
    cfg: &'a TrainConfig,
}

impl CheckpointSink<'_> {
    fn write(&self, params: &ModelParams, epoch: usize, best: bool) -> Result<()> {
        let Some(dir) = self.dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut ckpt = Checkpoint::new(params.clone(), self.phase);
        ckpt.extra.insert("epoch".into(), epoch.to_string());
        ckpt.extra.insert(
            "train_config".into(),
            serde_json::to_string(self.cfg).expect("config serializes"),
        );
        let bytes = ckpt.to_bytes()?;
        let mut names = vec!["last.ckpt".to_string()];
        if best {
            names.push("best.ckpt".into());
        }
        if self.cfg.keep_epoch_checkpoints {
            names.push(format!("epoch-{epoch:03}.ckpt"));
        }
        for name in names {
            let path = dir.join(name);
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn diverged(term: &str, epoch: usize, step: usize) -> Error {
    Error::DivergedLoss {
        term: term.to_string(),
        epoch,
        step,
    }
}

/// Shared epoch loop: optimizer steps, validation, early stopping, and
/// checkpointing. Returns the parameters of the best validation epoch.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    mut params: ModelParams,
    phase: Phase,
    cfg: &TrainConfig,
    max_epochs: usize,
    steps_per_epoch: usize,
    out_dir: Option<&Path>,
    mut step: impl FnMut(&mut ModelParams, usize, usize) -> Result<LossTerms>,
    mut validate: impl FnMut(&ModelParams) -> Result<LossTerms>,
) -> Result<(ModelParams, TrainingHistory)> {
    let mut adam = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut history = TrainingHistory::new(phase);
    let sink = CheckpointSink {
        dir: out_dir,
        phase,
        cfg,
    };
    let mut best = params.clone();
    let mut total_steps = 0usize;
    for epoch in 1..=max_epochs.max(1) {
        let mut acc = TermAccumulator::default();
        for s in 0..steps_per_epoch {
            if cfg.max_steps.is_some_and(|m| total_steps >= m) {
                break;
            }
            let terms = step(&mut params, epoch, s)?;
            if let Some(term) = terms.non_finite() {
                return Err(diverged(term, epoch, s + 1));
            }
            adam.step(params.params_mut());
            if !params.all_finite() {
                return Err(diverged("parameters", epoch, s + 1));
            }
            total_steps += 1;
            history.step_losses.push(terms.total);
            acc.add(&terms);
            debug!("{phase} epoch {epoch} step {}: {:.5}", s + 1, terms.total);
        }
        let val = validate(&params)?;
        if let Some(term) = val.non_finite() {
            return Err(diverged(&format!("val_{term}"), epoch, steps_per_epoch));
        }
        let train = acc.mean();
        info!(
            "{phase} epoch {epoch}: train {:.5}, val {:.5}",
            train.total, val.total
        );
        history.records.push(EpochRecord { epoch, train, val });
        let decision = stopper.observe(epoch, val.total);
        if decision == StopDecision::Improved {
            best = params.clone();
        }
        sink.write(&params, epoch, decision == StopDecision::Improved)?;
        let out_of_steps = cfg.max_steps.is_some_and(|m| total_steps >= m);
        if decision == StopDecision::Stop || out_of_steps {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

/// Style-transfer pre-training with early stopping on validation L_pre.
pub fn pretrain(
    params: ModelParams,
    train: &GlyphMatrix,
    val: &GlyphMatrix,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainingHistory)> {
    cfg.validate()?;
    for m in [train, val] {
        if m.num_fonts() < 2 {
            return Err(Error::InsufficientFonts(m.num_fonts()));
        }
    }
    let mut rng = seeded(derive_seed(cfg.seed, "pretrain-triplets"));
    let val_batch = sample_triplet_batch(val, val.len(), &mut seeded(derive_seed(cfg.seed, "pretrain-val")))?;
    let steps = train.len().div_ceil(cfg.batch_size);
    let w = cfg.weights;
    let scale = cfg.scale_classifier_gradient;
    run_phase(
        params,
        Phase::Pretrained,
        cfg,
        cfg.max_epochs_pretrain,
        steps,
        out_dir,
        |net, _, _| {
            let batch = sample_triplet_batch(train, cfg.batch_size, &mut rng)?;
            pretrain_step(net, &batch, &w, scale)
        },
        |net| pretrain_terms(net, &val_batch, &w),
    )
}

/// Averages of `val` fonts' style features under the current network, with
/// the (frozen) training content averages.
fn validation_averages(params: &ModelParams, val: &GlyphMatrix, train_avgs: &AverageFeatureTable) -> Result<AverageFeatureTable> {
    let mut table = compute_average_features(params, val)?;
    table.content_avg = train_avgs.content_avg.clone();
    Ok(table)
}

/// Variance-loss fine-tuning against `avgs`, with early stopping on
/// validation L_fine.
///
/// Validation fonts are unseen, so their style averages come from the
/// network being evaluated; content averages are the training ones.
pub fn finetune(
    params: ModelParams,
    avgs: &AverageFeatureTable,
    train: &GlyphMatrix,
    val: &GlyphMatrix,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainingHistory)> {
    cfg.validate()?;
    if avgs.provenance.phase != Phase::Pretrained.as_str() {
        return Err(Error::MissingAverages(format!(
            "averages come from a {:?} checkpoint, expected a pretrained one",
            avgs.provenance.phase
        )));
    }
    avgs.check_covers(train.num_fonts(), train.num_classes(), params.config.feature_dim)?;
    let avgs = std::cell::RefCell::new(avgs.clone());
    let mut sampler = BatchSampler::for_matrix(train, cfg.batch_size, derive_seed(cfg.seed, "finetune-batches"));
    let steps = sampler.batches_per_epoch();
    let w = cfg.weights;
    let scale = cfg.scale_classifier_gradient;
    let (train_fonts, train_classes) = cell_ids(train);
    let (val_fonts, val_classes) = cell_ids(val);
    let val_images = GlyphMatrix::stack(val.glyphs());
    let every = cfg.recompute_avgs_every;

    let (best, mut history) = run_phase(
        params,
        Phase::Finetuned,
        cfg,
        cfg.max_epochs_finetune,
        steps,
        out_dir,
        |net, epoch, s| {
            if every > 0 && s == 0 && epoch > 1 && (epoch - 1) % every == 0 {
                let mut fresh = compute_average_features(net, train)?;
                fresh.provenance = avgs.borrow().provenance.clone();
                *avgs.borrow_mut() = fresh;
                info!("recomputed average features at epoch {epoch}");
            }
            let cells = sampler.next_batch();
            let x: Matrix<f32> = stack_as(cells.iter().map(|&c| train.cell(c)));
            let fonts: Vec<usize> = cells.iter().map(|&c| train_fonts[c]).collect();
            let classes: Vec<usize> = cells.iter().map(|&c| train_classes[c]).collect();
            finetune_step(net, &x, &fonts, &classes, &avgs.borrow(), &w, scale)
        },
        |net| {
            let table = validation_averages(net, val, &avgs.borrow())?;
            finetune_terms(net, &val_images, &val_fonts, &val_classes, &table, &w)
        },
    )?;
    let train_images = GlyphMatrix::stack(train.glyphs());
    history.final_train = Some(finetune_terms(
        &best,
        &train_images,
        &train_fonts,
        &train_classes,
        &avgs.borrow(),
        &w,
    )?);
    Ok((best, history))
}

/// Inference-mode reconstruction MAE over every cell of a matrix.
pub fn reconstruction_error(params: &ModelParams, matrix: &GlyphMatrix) -> Result<f64> {
    let images = GlyphMatrix::stack(matrix.glyphs());
    let mut sum = 0.0;
    for start in (0..images.rows).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(images.rows);
        let x = images.slice_rows(start, end);
        sum += (end - start) as f64 * crate::losses::reconstruction_loss(&x, &params.reconstruct(&x))?;
    }
    Ok(sum / images.rows.max(1) as f64)
}

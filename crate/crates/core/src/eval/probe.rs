//! Recognition probes: a small MLP trained on frozen features.

use std::fmt;

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::nn::{relu_backward, relu_inplace, softmax_rows, Adam, Linear, Matrix, ParamsMut};
use crate::seed::{derive_seed, seeded, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTarget {
    Font,
    #[serde(alias = "character")]
    Char,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Style,
    Content,
}

impl fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeTarget::Font => "font",
            ProbeTarget::Char => "char",
        })
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Style => "style",
            FeatureKind::Content => "content",
        })
    }
}

impl std::str::FromStr for ProbeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "font" => Ok(ProbeTarget::Font),
            "char" | "character" => Ok(ProbeTarget::Char),
            other => Err(Error::InvalidConfig(format!("unknown probe target {other:?}"))),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "style" => Ok(FeatureKind::Style),
            "content" => Ok(FeatureKind::Content),
            other => Err(Error::InvalidConfig(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeProtocol {
    pub target: ProbeTarget,
    pub kind: FeatureKind,
    /// Upper bound on fonts in a font probe.
    pub n_fonts: usize,
    /// Classes used for training in a font probe; the rest are tested.
    pub train_classes: usize,
    pub trials: usize,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
}

impl Default for ProbeProtocol {
    fn default() -> Self {
        Self {
            target: ProbeTarget::Font,
            kind: FeatureKind::Style,
            n_fonts: 100,
            train_classes: 13,
            trials: 10,
            seed: 0,
            epochs: 200,
            learning_rate: 0.001,
            batch_size: 64,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub target: ProbeTarget,
    pub kind: FeatureKind,
    /// Test accuracy of each trial, in `[0, 1]`.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub n_classes: usize,
    pub chance: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Mean cross-entropy and its logit gradient, with no probability clamp:
/// a confidently wrong example must keep pulling on the weights.
fn softmax_xent(logits: &Matrix<f32>, labels: &[usize]) -> (f64, Matrix<f32>) {
    let mut g = softmax_rows(logits);
    let b = logits.rows.max(1) as f32;
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        loss += lse - row[y] as f64;
        let gr = g.row_mut(r);
        gr[y] -= 1.0;
        for v in gr.iter_mut() {
            *v /= b;
        }
    }
    (loss / b as f64, g)
}

/// Three fully connected layers with rectifiers and a softmax output.
struct ProbeMlp {
    layers: [Linear<f32>; 3],
}

impl ProbeMlp {
    fn new(input: usize, hidden: usize, classes: usize, rng: &mut SeededRng) -> Self {
        Self {
            layers: [
                Linear::new(input, hidden, rng),
                Linear::new(hidden, hidden, rng),
                Linear::new(hidden, classes, rng),
            ],
        }
    }

    fn forward(&self, x: &Matrix<f32>) -> [Matrix<f32>; 3] {
        let mut h1 = self.layers[0].forward(x);
        relu_inplace(&mut h1.data);
        let mut h2 = self.layers[1].forward(&h1);
        relu_inplace(&mut h2.data);
        let logits = self.layers[2].forward(&h2);
        [h1, h2, logits]
    }

    fn train_step(&mut self, x: &Matrix<f32>, y: &[usize], adam: &mut Adam<f32>) -> Result<f64> {
        let [h1, h2, logits] = self.forward(x);
        let (loss, g) = softmax_xent(&logits, y);
        let mut g = self.layers[2].backward(&h2, &g, true).expect("input grad");
        relu_backward(&mut g.data, &h2.data);
        let mut g = self.layers[1].backward(&h1, &g, true).expect("input grad");
        relu_backward(&mut g.data, &h1.data);
        self.layers[0].backward(x, &g, false);
        let mut params: ParamsMut<'_, f32> = Vec::new();
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&format!("fc{k}"), &mut params);
        }
        adam.step(params);
        Ok(loss)
    }

    fn predict(&self, x: &Matrix<f32>) -> Vec<usize> {
        let [_, _, logits] = self.forward(x);
        (0..logits.rows)
            .map(|r| {
                let row = logits.row(r);
                // First maximum, for determinism on ties.
                (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
            })
            .collect()
    }
}

/// Labeled examples for one trial.
struct ProbeData {
    train_x: Matrix<f32>,
    train_y: Vec<usize>,
    test_x: Matrix<f32>,
    test_y: Vec<usize>,
    classes: usize,
}

fn vector_of(row: &crate::features::FeatureRow, kind: FeatureKind) -> &[f32] {
    match kind {
        FeatureKind::Style => &row.style,
        FeatureKind::Content => &row.content,
    }
}

fn to_matrix(rows: &[&[f32]], dim: usize) -> Matrix<f32> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        data.extend_from_slice(r);
    }
    Matrix::from_vec(rows.len(), dim, data)
}

/// Train on `data` with a fresh MLP and return test accuracy.
fn run_trial(data: &ProbeData, protocol: &ProbeProtocol, rng: &mut SeededRng) -> Result<f64> {
    let dim = data.train_x.cols;
    let mut mlp = ProbeMlp::new(dim, protocol.hidden, data.classes, rng);
    let mut adam = Adam::new(protocol.learning_rate);
    let n = data.train_x.rows;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..protocol.epochs {
        order.shuffle(rng);
        let mut last = 0.0;
        for chunk in order.chunks(protocol.batch_size.max(1)) {
            let rows: Vec<&[f32]> = chunk.iter().map(|&i| data.train_x.row(i)).collect();
            let x = to_matrix(&rows, dim);
            let y: Vec<usize> = chunk.iter().map(|&i| data.train_y[i]).collect();
            last = mlp.train_step(&x, &y, &mut adam)?;
        }
        if epoch + 1 == protocol.epochs {
            debug!("probe final batch loss {last:.4}");
        }
    }
    let pred = mlp.predict(&data.test_x);
    let correct = pred.iter().zip(&data.test_y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.test_y.len().max(1) as f64)
}

fn complete_fonts(table: &FeatureTable) -> Vec<usize> {
    (0..table.num_fonts())
        .filter(|&i| (0..table.num_classes()).all(|j| table.find(i, j).is_some()))
        .collect()
}

fn font_probe_data(table: &FeatureTable, protocol: &ProbeProtocol, rng: &mut SeededRng) -> Result<ProbeData> {
    let mut fonts = complete_fonts(table);
    let j = table.num_classes();
    if fonts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "font probe needs at least 2 complete fonts, table has {}",
            fonts.len()
        )));
    }
    if protocol.train_classes == 0 || protocol.train_classes >= j {
        return Err(Error::InsufficientData(format!(
            "cannot split {j} classes into {} train classes and a test remainder",
            protocol.train_classes
        )));
    }
    fonts.shuffle(rng);
    fonts.truncate(protocol.n_fonts.max(2));
    fonts.sort_unstable();
    let mut classes: Vec<usize> = (0..j).collect();
    classes.shuffle(rng);
    let (train_c, test_c) = classes.split_at(protocol.train_classes);
    let collect = |cs: &[usize]| {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (label, &i) in fonts.iter().enumerate() {
            for &c in cs {
                rows.push(vector_of(table.find(i, c).expect("complete font"), protocol.kind));
                labels.push(label);
            }
        }
        (to_matrix(&rows, table.dim), labels)
    };
    let (train_x, train_y) = collect(train_c);
    let (test_x, test_y) = collect(test_c);
    Ok(ProbeData {
        train_x,
        train_y,
        test_x,
        test_y,
        classes: fonts.len(),
    })
}

fn char_rows(table: &FeatureTable, fonts: &[usize], kind: FeatureKind) -> (Matrix<f32>, Vec<usize>) {
    let rows: Vec<&crate::features::FeatureRow> =
        table.rows.iter().filter(|r| fonts.contains(&r.font_id)).collect();
    let vecs: Vec<&[f32]> = rows.iter().map(|r| vector_of(r, kind)).collect();
    (to_matrix(&vecs, table.dim), rows.iter().map(|r| r.class_id).collect())
}

fn char_probe_data(
    test: &FeatureTable,
    train: Option<&FeatureTable>,
    protocol: &ProbeProtocol,
    rng: &mut SeededRng,
) -> Result<ProbeData> {
    let classes = test.num_classes();
    match train {
        Some(train) => {
            if train.dim != test.dim || train.class_labels != test.class_labels {
                return Err(Error::InsufficientData(
                    "train and test tables disagree on dimension or classes".into(),
                ));
            }
            let all_train: Vec<usize> = (0..train.num_fonts()).collect();
            let all_test: Vec<usize> = (0..test.num_fonts()).collect();
            let (train_x, train_y) = char_rows(train, &all_train, protocol.kind);
            let (test_x, test_y) = char_rows(test, &all_test, protocol.kind);
            if train_y.is_empty() || test_y.is_empty() {
                return Err(Error::InsufficientData("empty train or test table".into()));
            }
            Ok(ProbeData {
                train_x,
                train_y,
                test_x,
                test_y,
                classes,
            })
        }
        None => {
            // Without a separate training table, split the fonts in half.
            let mut fonts: Vec<usize> = (0..test.num_fonts()).collect();
            if fonts.len() < 2 {
                return Err(Error::InsufficientData("character probe needs at least 2 fonts".into()));
            }
            fonts.shuffle(rng);
            let (a, b) = fonts.split_at(fonts.len() / 2);
            let (train_x, train_y) = char_rows(test, a, protocol.kind);
            let (test_x, test_y) = char_rows(test, b, protocol.kind);
            Ok(ProbeData {
                train_x,
                train_y,
                test_x,
                test_y,
                classes,
            })
        }
    }
}

/// Train and test a probe `protocol.trials` times.
///
/// Font probes use `test` alone: up to `n_fonts` fonts, trained on a random
/// subset of classes and tested on the rest. Character probes train on
/// `train` and test on `test`; without `train` the fonts of `test` are
/// split in half per trial.
pub fn run_probe(test: &FeatureTable, train: Option<&FeatureTable>, protocol: &ProbeProtocol) -> Result<ProbeResult> {
    if protocol.trials == 0 {
        return Err(Error::InvalidConfig("probe needs at least one trial".into()));
    }
    let mut accuracies = Vec::with_capacity(protocol.trials);
    let mut sizes = (0, 0, 0);
    for trial in 0..protocol.trials {
        let mut rng = seeded(derive_seed(protocol.seed, &format!("probe-{}-{}-{trial}", protocol.target, protocol.kind)));
        let data = match protocol.target {
            ProbeTarget::Font => font_probe_data(test, protocol, &mut rng)?,
            ProbeTarget::Char => char_probe_data(test, train, protocol, &mut rng)?,
        };
        sizes = (data.classes, data.train_y.len(), data.test_y.len());
        accuracies.push(run_trial(&data, protocol, &mut rng)?);
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ProbeResult {
        target: protocol.target,
        kind: protocol.kind,
        accuracies,
        mean,
        std,
        n_classes: sizes.0,
        chance: 1.0 / sizes.0.max(1) as f64,
        train_size: sizes.1,
        test_size: sizes.2,
    })
}

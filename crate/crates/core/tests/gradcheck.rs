//! Analytic gradients of the training objectives against centered finite
//! differences on a tiny double-precision model.

use std::collections::BTreeMap;

use glyphsplit::losses::LossWeights;
use glyphsplit::model::{DisentangleNet, ModelConfig};
use glyphsplit::nn::Matrix;
use glyphsplit::trainer::{finetune_step, pretrain_step, AverageFeatureTable, AverageProvenance, TripletBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const MAX_REL: f64 = 1e-3;

fn tiny() -> ModelConfig {
    ModelConfig {
        image_size: 8,
        channels: vec![2, 3],
        feature_dim: 4,
        head_hidden: 5,
        classifier_hidden: 4,
        num_classes: 3,
    }
}

/// Binary images keep every pixel away from the MAE kink at equality,
/// since decoder outputs lie strictly inside (0, 1).
fn binary_images(rng: &mut ChaCha8Rng, n: usize) -> Matrix<f64> {
    let data = (0..n * 64).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
    Matrix::from_vec(n, 64, data)
}

/// Zero-initialized biases put all-zero feature rows exactly on a ReLU
/// kink, where the two one-sided slopes differ. Nudge them off it.
fn offset_biases(net: &mut DisentangleNet<f64>, rng: &mut ChaCha8Rng) {
    for (name, p) in net.params_mut() {
        if name.ends_with("bias") {
            for v in p.value.iter_mut() {
                *v += rng.gen_range(0.05..0.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Compare every parameter's analytic gradient with a centered difference
/// of `loss`. Returns the worst relative error and its parameter.
fn check(net: &DisentangleNet<f64>, loss: impl Fn(&mut DisentangleNet<f64>) -> f64) -> (f64, String, usize) {
    let mut analytic = net.clone();
    analytic.zero_grad();
    loss(&mut analytic);
    let grads: Vec<(String, Vec<f64>)> = analytic
        .params_mut()
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();
    let mut worst = (0.0, String::new(), 0);
    let mut checked = 0;
    for (pi, (name, grad)) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let eval = |delta: f64| {
                let mut probe = net.clone();
                probe.params_mut()[pi].1.value[k] += delta;
                loss(&mut probe)
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let e = rel_err(grad[k], numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}] analytic {} numeric {numeric}", grad[k]), 0);
            }
            checked += 1;
        }
    }
    worst.2 = checked;
    worst
}

fn averages(rng: &mut ChaCha8Rng, fonts: usize, classes: usize, dim: usize) -> AverageFeatureTable {
    let mut vec = || (0..dim).map(|_| rng.gen_range(0.0..0.5)).collect::<Vec<f64>>();
    AverageFeatureTable {
        dim,
        style_avg: (0..fonts).map(|i| (i, vec())).collect::<BTreeMap<_, _>>(),
        content_avg: (0..classes).map(|j| (j, vec())).collect::<BTreeMap<_, _>>(),
        provenance: AverageProvenance::default(),
    }
}

#[test]
fn finetune_objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = DisentangleNet::<f64>::new(tiny(), 17).unwrap();
    // Two fonts by three classes, font-major.
    let images = binary_images(&mut rng, 6);
    let fonts = [0, 0, 0, 1, 1, 1];
    let classes = [0, 1, 2, 0, 1, 2];
    let avgs = averages(&mut rng, 2, 3, 4);
    // A large classifier weight so its path is visible above the other terms.
    let w = LossWeights {
        lambda_cls: 0.5,
        ..LossWeights::default()
    };
    let (worst, at, n) = check(&net, |m| {
        finetune_step(m, &images, &fonts, &classes, &avgs, &w, true).unwrap().total
    });
    println!("checked {n} parameters, worst relative error {worst:.3e} at {at}");
    assert!(n > 300);
    assert!(worst <= MAX_REL, "relative error {worst} at {at}");
}

#[test]
fn pretrain_objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = DisentangleNet::<f64>::new(tiny(), 23).unwrap();
    offset_biases(&mut net, &mut rng);
    let batch = TripletBatch {
        content_src: binary_images(&mut rng, 3),
        target: binary_images(&mut rng, 3),
        style_src: binary_images(&mut rng, 3),
        classes: vec![0, 2, 1],
    };
    let w = LossWeights {
        lambda_cls: 0.5,
        ..LossWeights::default()
    };
    let (worst, at, n) = check(&net, |m| pretrain_step(m, &batch, &w, true).unwrap().total);
    println!("checked {n} parameters, worst relative error {worst:.3e} at {at}");
    assert!(worst <= MAX_REL, "relative error {worst} at {at}");
}

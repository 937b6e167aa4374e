use glyphsplit::model::{Checkpoint, ModelConfig, ModelParams, Phase};
use glyphsplit::nn::Matrix;
use glyphsplit::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn images(n: usize, seed: u64) -> Matrix<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(n, 64 * 64, (0..n * 64 * 64).map(|_| rng.gen::<f32>()).collect())
}

fn net() -> ModelParams {
    ModelParams::new(ModelConfig::default(), 3).unwrap()
}

#[test]
fn batch_shapes_and_output_range() {
    let net = net();
    for b in [1, 7, 64] {
        let x = images(b, b as u64);
        let f = net.encode(&x);
        assert_eq!((f.style.rows, f.style.cols), (b, 128));
        assert_eq!((f.content.rows, f.content.cols), (b, 128));
        let out = net.decode(&f.style, &f.content);
        assert_eq!((out.rows, out.cols), (b, 4096));
        assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0));
        let probs = net.classify(&f.content);
        assert_eq!((probs.rows, probs.cols), (b, 26));
        for r in 0..b {
            let s: f64 = probs.row(r).iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn inference_is_deterministic() {
    let net = net();
    let x = images(5, 9);
    assert_eq!(net.encode(&x), net.encode(&x));
    assert_eq!(net.reconstruct(&x).data, net.reconstruct(&x).data);
    assert_eq!(net, ModelParams::new(ModelConfig::default(), 3).unwrap());
    assert_ne!(net, ModelParams::new(ModelConfig::default(), 4).unwrap());
}

#[test]
fn encoding_is_per_sample() {
    // Inference normalization must not mix samples within a batch.
    let net = net();
    let x = images(4, 1);
    let whole = net.encode(&x);
    let single = net.encode(&x.slice_rows(2, 3));
    assert_eq!(whole.style.row(2), single.style.row(0));
}

#[test]
fn transfer_with_itself_is_reconstruction() {
    let net = net();
    let x = images(3, 2);
    assert_eq!(net.transfer(&x, &x).data, net.reconstruct(&x).data);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut model = net();
    // Non-trivial buffers, as after training.
    for (_, b) in model.buffers_mut() {
        for (k, v) in b.iter_mut().enumerate() {
            *v = 0.1 + k as f32 * 1e-3;
        }
    }
    let mut ckpt = Checkpoint::new(model, Phase::Pretrained);
    ckpt.extra.insert("epoch".into(), "7".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    for ((n1, p1), (n2, p2)) in ckpt.model.params().iter().zip(back.model.params().iter()) {
        assert_eq!(n1, n2);
        let b1: Vec<u32> = p1.value.iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u32> = p2.value.iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    let x = images(2, 5);
    assert_eq!(back.model.reconstruct(&x).data, ckpt.model.reconstruct(&x).data);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ckpt = Checkpoint::new(net(), Phase::Finetuned);
    let bytes = ckpt.to_bytes().unwrap();
    let p = std::path::Path::new("x.ckpt");
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() / 2], p),
        Err(Error::CorruptFile { .. })
    ));
    assert!(matches!(Checkpoint::from_bytes(b"not a checkpoint", p), Err(Error::CorruptFile { .. })));
    let dir = tempfile::tempdir().unwrap();
    assert!(Checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn config_must_divide_image_size() {
    let bad = ModelConfig {
        image_size: 60,
        ..ModelConfig::default()
    };
    assert!(matches!(ModelParams::new(bad, 0), Err(Error::InvalidConfig(_))));
}

mod common;

use common::{mini_matrix, small_config};
use glyphsplit::features::extract_features;
use glyphsplit::glyphset::{GlyphMatrix, Split};
use glyphsplit::losses::{content_variance_loss, style_variance_loss, LossWeights};
use glyphsplit::model::{Checkpoint, ModelParams, Phase};
use glyphsplit::nn::{Adam, Matrix};
use glyphsplit::trainer::*;
use glyphsplit::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs_pretrain: 3,
        max_epochs_finetune: 3,
        early_stop_patience: 1,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn early_stopping_follows_patience() {
    let mut s = EarlyStopper::new(3);
    let mut stop_at = None;
    for epoch in 1..=10 {
        let loss = 1.0 + 0.1 * epoch as f64;
        if s.observe(epoch, loss) == StopDecision::Stop {
            stop_at = Some(epoch);
            break;
        }
    }
    assert_eq!(stop_at, Some(5));
    assert_eq!(s.best_epoch(), 1);
}

#[test]
fn averages_match_a_double_loop() {
    let m = mini_matrix(16, Split::Train, 3);
    let net = ModelParams::new(small_config(16), 1).unwrap();
    let avgs = compute_average_features(&net, &m).unwrap();
    let (i_n, j_n) = (m.num_fonts(), m.num_classes());
    // One glyph at a time through the network.
    let feat = |i: usize, j: usize| net.encode(&GlyphMatrix::stack([m.get(i, j)]));
    let d = 8;
    for i in 0..i_n {
        let mut want = vec![0.0f64; d];
        for j in 0..j_n {
            let f = feat(i, j);
            for c in 0..d {
                want[c] += f.style.row(0)[c] as f64 / j_n as f64;
            }
        }
        for c in 0..d {
            assert!((avgs.style_avg[&i][c] - want[c]).abs() < 1e-6);
        }
    }
    for j in 0..j_n {
        let mut want = vec![0.0f64; d];
        for i in 0..i_n {
            let f = feat(i, j);
            for c in 0..d {
                want[c] += f.content.row(0)[c] as f64 / i_n as f64;
            }
        }
        for c in 0..d {
            assert!((avgs.content_avg[&j][c] - want[c]).abs() < 1e-6);
        }
    }
    avgs.check_covers(i_n, j_n, d).unwrap();
    assert!(matches!(avgs.check_covers(i_n + 1, j_n, d), Err(Error::MissingAverages(_))));
}

#[test]
fn hundred_pretrain_steps_reduce_the_loss_and_stay_finite() {
    let m = mini_matrix(16, Split::Train, 4);
    let mut net = ModelParams::new(small_config(16), 2).unwrap();
    let mut adam = Adam::new(0.003);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = LossWeights::default();
    let mut losses = Vec::new();
    for _ in 0..100 {
        let batch = sample_triplet_batch(&m, 16, &mut rng).unwrap();
        losses.push(pretrain_step(&mut net, &batch, &w, false).unwrap().total);
        adam.step(net.params_mut());
        assert!(net.all_finite());
    }
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.8 * head, "loss went from {head} to {tail}");
}

#[test]
fn triplets_share_fonts_and_classes_correctly() {
    let m = mini_matrix(16, Split::Train, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = sample_triplet_batch(&m, 32, &mut rng).unwrap();
    assert_eq!(b.len(), 32);
    let px = 16 * 16;
    let find = |row: &[f32]| {
        m.glyphs()
            .iter()
            .find(|g| g.pixels == row)
            .map(|g| (g.font_id, g.class_id))
            .unwrap()
    };
    for k in 0..b.len() {
        let (fc, jc) = find(&b.content_src.data[k * px..(k + 1) * px]);
        let (ft, jt) = find(&b.target.data[k * px..(k + 1) * px]);
        let (fs, _) = find(&b.style_src.data[k * px..(k + 1) * px]);
        assert_eq!(jc, jt);
        assert_eq!(ft, fs);
        assert_ne!(fc, ft);
        assert_eq!(b.classes[k], jt);
    }
}

#[test]
fn two_phase_training_end_to_end() {
    let train = mini_matrix(16, Split::Train, 3);
    let val = mini_matrix(16, Split::Val, 2);
    let cfg = quick_cfg();
    let dir = tempfile::tempdir().unwrap();
    let pre_dir = dir.path().join("pre");
    std::fs::create_dir_all(&pre_dir).unwrap();
    let init = ModelParams::new(small_config(16), 0).unwrap();
    let (pre, hist) = pretrain(init, &train, &val, &cfg, Some(&pre_dir)).unwrap();
    assert!(!hist.records.is_empty() && hist.records.len() <= 3);
    assert_eq!(hist.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=hist.records.len()).collect::<Vec<_>>());
    let best = Checkpoint::load(&pre_dir.join("best.ckpt")).unwrap();
    assert_eq!(best.phase, Phase::Pretrained);
    assert_eq!(best.model, pre);
    assert!(pre_dir.join("last.ckpt").exists());

    // Averages not stamped as pretrained are refused.
    let mut avgs = compute_average_features(&pre, &train).unwrap();
    let err = finetune(pre.clone(), &avgs, &train, &val, &cfg, None).unwrap_err();
    assert!(matches!(err, Error::MissingAverages(_)));
    avgs.provenance.phase = Phase::Pretrained.as_str().into();

    let mut partial = avgs.clone();
    partial.style_avg.remove(&0);
    assert!(matches!(
        finetune(pre.clone(), &partial, &train, &val, &cfg, None),
        Err(Error::MissingAverages(_))
    ));

    let (fine, fhist) = finetune(pre.clone(), &avgs, &train, &val, &cfg, None).unwrap();
    assert_eq!(fhist.phase, Phase::Finetuned);
    let final_terms = fhist.final_train.unwrap();

    // The stored L_style and L_content follow from extracted features.
    let table = extract_features(&fine, &train);
    let style = Matrix::from_vec(table.len(), 8, table.rows.iter().flat_map(|r| r.style.clone()).collect());
    let content = Matrix::from_vec(table.len(), 8, table.rows.iter().flat_map(|r| r.content.clone()).collect());
    let fonts: Vec<usize> = table.rows.iter().map(|r| r.font_id).collect();
    let classes: Vec<usize> = table.rows.iter().map(|r| r.class_id).collect();
    let ls = style_variance_loss(&style, &fonts, &avgs).unwrap();
    let lc = content_variance_loss(&content, &classes, &avgs).unwrap();
    assert!((ls - final_terms.style.unwrap()).abs() < 1e-5);
    assert!((lc - final_terms.content.unwrap()).abs() < 1e-5);

    // Same seed, same result.
    let init = ModelParams::new(small_config(16), 0).unwrap();
    let (again, _) = pretrain(init, &train, &val, &cfg, None).unwrap();
    assert_eq!(again, pre);
}

#[test]
fn too_few_fonts_are_rejected() {
    let train = mini_matrix(16, Split::Train, 3);
    let two = mini_matrix(16, Split::Val, 2);
    let row: Vec<Vec<f32>> = (0..26).map(|j| two.get(0, j).pixels.clone()).collect();
    let val = GlyphMatrix::from_rows(16, two.class_labels().to_vec(), vec![(two.font_names()[0].clone(), row)]).unwrap();
    let init = ModelParams::new(small_config(16), 0).unwrap();
    assert!(matches!(
        pretrain(init, &train, &val, &quick_cfg(), None),
        Err(Error::InsufficientFonts(1))
    ));
}

#[test]
fn history_exports_one_row_per_epoch() {
    let mut h = TrainingHistory::new(Phase::Pretrained);
    for epoch in 1..=3 {
        let t = LossTerms {
            rec: Some(0.1 * epoch as f64),
            trans: Some(0.2),
            cls: Some(1.0),
            style: None,
            content: None,
            total: 0.3 + 0.1 * epoch as f64,
        };
        h.records.push(EpochRecord { epoch, train: t, val: t });
    }
    h.best_epoch = 1;
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("h.csv");
    h.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    let json = dir.path().join("h.json");
    h.save_json(&json).unwrap();
    assert_eq!(TrainingHistory::load_json(&json).unwrap(), h);
}

#[test]
fn invalid_train_config_is_rejected() {
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
}

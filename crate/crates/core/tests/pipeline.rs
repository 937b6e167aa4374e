mod common;

use std::path::Path;

use common::{mini_manifest, small_config, write_manifest};
use glyphsplit::eval::{FeatureKind, ProbeProtocol, ProbeTarget};
use glyphsplit::pipeline::*;
use glyphsplit::trainer::TrainConfig;
use glyphsplit::Error;

fn config(root: &Path, out: &str) -> ExperimentConfig {
    let manifest = write_manifest(&mini_manifest(16, 3, 2, 3), root);
    ExperimentConfig {
        manifest,
        out_dir: root.join(out),
        seed: 3,
        model: small_config(16),
        train: TrainConfig {
            batch_size: 32,
            max_epochs_pretrain: 2,
            max_epochs_finetune: 2,
            ..TrainConfig::default()
        },
        probe: ProbeProtocol {
            trials: 2,
            epochs: 10,
            hidden: 16,
            ..ProbeProtocol::default()
        },
        ..ExperimentConfig::default()
    }
}

fn statuses(o: &PipelineOutcome) -> Vec<StageStatus> {
    o.stages.iter().map(|(_, s)| *s).collect()
}

#[test]
fn pipeline_runs_then_resumes() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(root.path(), "run");
    let first = run_pipeline(&cfg).unwrap();
    let names: Vec<&str> = first.stages.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, STAGES);
    assert!(statuses(&first).iter().all(|s| *s == StageStatus::Ran));
    let out = &cfg.out_dir;
    for f in [
        "config.toml",
        "stages.json",
        "averages.json",
        "pretrain/best.ckpt",
        "pretrain/last.ckpt",
        "pretrain/history.csv",
        "finetune/best.ckpt",
        "features/train.gsft",
        "features/test.gsft",
        "probes/probes.json",
        "plots/summary.json",
        "generation/metrics.csv",
        "generation/baseline_metrics.csv",
        "report.json",
        "report.md",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(ExperimentConfig::load(&out.join("config.toml")).unwrap().seed, 3);
    let report = PipelineReport::load(&out.join("report.json")).unwrap();
    assert_eq!(report.probes.len(), 4);
    assert!(report.probe(ProbeTarget::Char, FeatureKind::Content).is_some());
    assert_eq!(report.generation.glyphs, 3 * 26 * 26);
    assert!(report.min_content_avg_distance.is_finite());

    // Nothing changed: every stage is skipped.
    let again = run_pipeline(&cfg).unwrap();
    assert!(statuses(&again).iter().all(|s| *s == StageStatus::Skipped));

    // A damaged output reruns its stage and everything after it.
    let test_table = out.join("features/test.gsft");
    let mut bytes = std::fs::read(&test_table).unwrap();
    bytes.push(0);
    std::fs::write(&test_table, bytes).unwrap();
    let repaired = run_pipeline(&cfg).unwrap();
    let k = STAGES.iter().position(|s| *s == "extract").unwrap();
    let st = statuses(&repaired);
    assert!(st[..k].iter().all(|s| *s == StageStatus::Skipped));
    assert!(st[k..].iter().all(|s| *s == StageStatus::Ran));

    // New probe settings only rerun the probe and later stages.
    let mut changed = cfg.clone();
    changed.probe.trials = 1;
    let st = statuses(&run_pipeline(&changed).unwrap());
    let k = STAGES.iter().position(|s| *s == "probe").unwrap();
    assert!(st[..k].iter().all(|s| *s == StageStatus::Skipped));
    assert!(st[k..].iter().all(|s| *s == StageStatus::Ran));
}

#[test]
fn same_seed_gives_identical_tables() {
    let root = tempfile::tempdir().unwrap();
    let a = config(root.path(), "a");
    let b = config(root.path(), "b");
    run_pipeline(&a).unwrap();
    run_pipeline(&b).unwrap();
    for f in ["features/train.gsft", "features/test.gsft", "generation/metrics.csv", "probes/probes.json"] {
        let x = std::fs::read(a.out_dir.join(f)).unwrap();
        let y = std::fs::read(b.out_dir.join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn config_errors() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = config(root.path(), "bad");
    cfg.model.image_size = 32;
    assert!(matches!(run_pipeline(&cfg), Err(Error::InvalidConfig(_))));

    assert!(matches!(ExperimentConfig::parse("colour = 1"), Err(Error::InvalidConfig(_))));
    assert!(matches!(ExperimentConfig::parse("schema_version = 2"), Err(Error::InvalidConfig(_))));
    assert!(matches!(
        ExperimentConfig::parse("[probe]\ntrials = 0"),
        Err(Error::InvalidConfig(_))
    ));

    let text = "manifest = \"m.toml\"\nout_dir = \"runs/x\"\n[train]\nmax_epochs_pretrain = 4\n";
    let path = root.path().join("c.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.manifest, root.path().join("m.toml"));
    assert_eq!(cfg.out_dir, root.path().join("runs/x"));
    assert_eq!(cfg.train.max_epochs_pretrain, 4);
    assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);

    let desk = ExperimentConfig::load(&common::assets().join("../configs/desk.toml")).unwrap();
    assert_eq!(desk.model, glyphsplit::model::ModelConfig::default());
}

#[test]
fn failing_stage_is_named() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(root.path(), "fail");
    std::fs::create_dir_all(&cfg.out_dir).unwrap();
    // A file where the glyph cache directory should go.
    std::fs::write(cfg.out_dir.join("glyphs"), b"x").unwrap();
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "render"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn version_lists_formats() {
    let v = version_info();
    assert!(v.contains(TOOLKIT_VERSION));
    assert!(v.lines().count() >= 4);
}

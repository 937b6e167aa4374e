use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glyphsplit::glyphset::{DatasetManifest, Split};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_glyphsplit"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

/// A few fonts of each split with absolute paths.
fn mini_manifest(dir: &Path, per_split: usize) -> PathBuf {
    let m = DatasetManifest::load(&assets().join("desk_corpus.toml")).unwrap();
    let mut text = String::from("render_size = 16\n");
    for split in Split::ALL {
        for e in m.entries_for(split).take(per_split) {
            text.push_str(&format!(
                "\n[[fonts]]\npath = {:?}\nname = {:?}\nsplit = \"{}\"\n",
                m.resolve(e).to_str().unwrap(),
                e.name,
                split
            ));
        }
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = r#"
[model]
image_size = 16
channels = [4, 8]
feature_dim = 8
head_hidden = 16
classifier_hidden = 8

[train]
batch_size = 32

[probe]
trials = 1
epochs = 5
hidden = 16
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn version_prints_formats() {
    let out = ok(&["version"]);
    assert!(out.contains(env!("CARGO_PKG_VERSION")));
    assert!(out.to_lowercase().contains("checkpoint"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["probe", "--features", "x.gsft"]).status.code(), Some(1));
    let missing = run(&["visualize", "--features", "/nonexistent/t.gsft", "--out", "/tmp/x"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "colour = 3\n").unwrap();
    let out = run(&["--config", s(&cfg), "version"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage_commands_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = mini_manifest(d, 3);
    let cfg = d.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let c = s(&cfg);

    let glyphs = d.join("glyphs");
    let out = ok(&["render-dataset", "--manifest", s(&manifest), "--out", s(&glyphs)]);
    assert!(out.contains("train: 3 fonts"));

    let pre = d.join("pre");
    ok(&["--config", c, "pretrain", "--manifest", s(&glyphs), "--out", s(&pre), "--epochs", "1"]);
    assert!(pre.join("best.ckpt").is_file() && pre.join("history.csv").is_file());

    let avgs = d.join("avgs.json");
    ok(&["compute-avgs", "--checkpoint", s(&pre.join("best.ckpt")), "--manifest", s(&glyphs), "--out", s(&avgs)]);

    let fine = d.join("fine");
    ok(&[
        "--config", c, "finetune", "--checkpoint", s(&pre.join("best.ckpt")), "--avgs", s(&avgs),
        "--manifest", s(&glyphs), "--out", s(&fine), "--epochs", "1",
    ]);
    let ckpt = fine.join("best.ckpt");

    // Fine-tuning needs averages stamped by a pretrained checkpoint.
    let bogus = d.join("bogus.json");
    ok(&["compute-avgs", "--checkpoint", s(&ckpt), "--manifest", s(&glyphs), "--out", s(&bogus)]);
    let refused = run(&[
        "--config", c, "finetune", "--checkpoint", s(&ckpt), "--avgs", s(&bogus),
        "--manifest", s(&glyphs), "--out", s(&d.join("x")), "--epochs", "1",
    ]);
    assert_eq!(refused.status.code(), Some(1));

    let test_table = d.join("test.gsft");
    let train_table = d.join("train.gsft");
    ok(&["extract", "--checkpoint", s(&ckpt), "--manifest", s(&glyphs), "--out", s(&test_table)]);
    ok(&["extract", "--checkpoint", s(&ckpt), "--manifest", s(&glyphs), "--split", "train", "--out", s(&train_table)]);

    ok(&["visualize", "--features", s(&test_table), "--out", s(&d.join("plots"))]);
    assert!(d.join("plots/pca_points.csv").is_file());

    let probe_out = d.join("probe");
    let line = ok(&[
        "--config", c, "probe", "--features", s(&test_table), "--train-features", s(&train_table),
        "--target", "char", "--kind", "content", "--out", s(&probe_out),
    ]);
    assert!(line.contains("char/content"));
    assert!(probe_out.join("probes.json").is_file());

    // One cached glyph of a test font as the style source.
    let table = glyphsplit::features::FeatureTable::load(&test_table).unwrap();
    let safe: String = table.font_names[0]
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let font_dir = glyphs.join(safe);
    let style_png = font_dir.join("A.png");
    let content_font = table.font_names[1].clone();
    let gen = d.join("gen");
    ok(&[
        "generate", "--checkpoint", s(&ckpt), "--style-image", s(&style_png), "--content-font", &content_font,
        "--features", s(&test_table), "--out", s(&gen),
    ]);
    assert_eq!(std::fs::read_dir(&gen).unwrap().count(), 26);
    assert!(gen.join("A.png").is_file());
    let unknown = run(&[
        "generate", "--checkpoint", s(&ckpt), "--style-image", s(&style_png), "--content-font", "NoSuchFont",
        "--features", s(&test_table), "--out", s(&gen),
    ]);
    assert_eq!(unknown.status.code(), Some(1));

    let report = d.join("report");
    let out = ok(&["--config", c, "report", "--checkpoint", s(&ckpt), "--manifest", s(&glyphs), "--out", s(&report)]);
    assert!(out.contains("generation: MSE"));
    assert!(report.join("generation/metrics.csv").is_file());
}

#[test]
fn run_pipeline_reports_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = mini_manifest(d, 2);
    let cfg = d.join("run.toml");
    let short = SMALL.replace("[train]\n", "[train]\nmax_epochs_pretrain = 1\nmax_epochs_finetune = 1\n");
    let text = format!("manifest = {:?}\nout_dir = \"out\"\n{short}", s(&manifest));
    std::fs::write(&cfg, text).unwrap();
    let first = ok(&["--config", s(&cfg), "run-pipeline"]);
    assert!(first.contains("render: ran") && first.contains("report: ran"));
    assert!(d.join("out/report.md").is_file());
    let second = ok(&["--config", s(&cfg), "run-pipeline"]);
    assert_eq!(second.matches("skipped").count(), 9);
}

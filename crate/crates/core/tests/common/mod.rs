#![allow(dead_code)]

use std::path::PathBuf;

use glyphsplit::glyphset::{build_matrix, DatasetManifest, GlyphMatrix, Split};
use glyphsplit::model::ModelConfig;

pub fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

/// The desk corpus cut down to the first few fonts of each split and
/// rendered small.
pub fn mini_manifest(size: usize, train: usize, val: usize, test: usize) -> DatasetManifest {
    let mut m = DatasetManifest::load(&assets().join("desk_corpus.toml")).unwrap();
    m.render_size = size;
    let mut kept = Vec::new();
    for (split, n) in [(Split::Train, train), (Split::Val, val), (Split::Test, test)] {
        kept.extend(m.entries_for(split).take(n).cloned());
    }
    m.entries = kept;
    m
}

pub fn mini_matrix(size: usize, split: Split, fonts: usize) -> GlyphMatrix {
    let m = mini_manifest(size, fonts, fonts, fonts);
    build_matrix(&m, split).unwrap().0
}

pub fn small_config(size: usize) -> ModelConfig {
    ModelConfig {
        image_size: size,
        channels: vec![4, 8],
        feature_dim: 8,
        head_hidden: 16,
        classifier_hidden: 8,
        num_classes: 26,
    }
}

/// Write `manifest` into `dir` with absolute font paths.
pub fn write_manifest(manifest: &DatasetManifest, dir: &std::path::Path) -> PathBuf {
    let mut m = manifest.clone();
    for e in &mut m.entries {
        e.path = manifest.resolve(e);
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, toml::to_string(&m).unwrap()).unwrap();
    path
}

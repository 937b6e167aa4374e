//! End-to-end experiment: render, train, evaluate, report.
//!
//! Every stage records a fingerprint of its inputs and the SHA-256 of each
//! output file in `stages.json`. A stage is skipped when its fingerprint
//! matches and its outputs are intact; once any stage runs, every later
//! stage runs too.

mod config;
mod ledger;

pub use config::{ExperimentConfig, CONFIG_SCHEMA_VERSION};
pub use ledger::{file_sha256, StageLedger, StageRecord, LEDGER_FILE};

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    evaluate_generation, run_probe, write_contact_sheets, FeatureKind, GenerationOutcome, MetricsSummary,
    ProbeProtocol, ProbeResult, ProbeTarget,
};
use crate::features::{extract_features, index_path, visualize, FeatureTable, TableProvenance, VisualSummary};
use crate::glyphset::{build_matrix, export_cache, load_cache, DatasetManifest, GlyphMatrix, Split};
use crate::model::{Checkpoint, ModelParams, Phase, CHECKPOINT_FORMAT_VERSION};
use crate::seed::derive_seed;
use crate::trainer::{
    compute_average_features, finetune, pretrain, reconstruction_error, within_group_variances,
    AverageFeatureTable, TrainConfig, TrainingHistory,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn version_info() -> String {
    format!(
        "glyphsplit {TOOLKIT_VERSION}\nconfig schema {CONFIG_SCHEMA_VERSION}\ncheckpoint format {CHECKPOINT_FORMAT_VERSION}\nfeature table format {}",
        crate::features::TABLE_FORMAT_VERSION
    )
}

/// Load one split from either a glyph cache directory or a manifest file.
pub fn load_dataset(path: &Path, split: Split) -> Result<GlyphMatrix> {
    if path.is_dir() {
        return load_cache(path, split);
    }
    let manifest = DatasetManifest::load(path)?;
    let (matrix, dropped) = build_matrix(&manifest, split)?;
    for d in dropped {
        log::warn!("dropped font {}: {}", d.name, d.reason);
    }
    Ok(matrix)
}

/// Render all splits of a manifest into a glyph cache.
pub fn render_dataset(manifest: &DatasetManifest, out: &Path, invert: bool) -> Result<Vec<(Split, GlyphMatrix)>> {
    let mut matrices = Vec::new();
    let mut dropped = Vec::new();
    for split in Split::ALL {
        if manifest.entries_for(split).next().is_none() {
            continue;
        }
        let (m, d) = build_matrix(manifest, split)?;
        dropped.extend(d);
        matrices.push((split, m));
    }
    let refs: Vec<(Split, &GlyphMatrix)> = matrices.iter().map(|(s, m)| (*s, m)).collect();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    export_cache(out, &refs, &dropped, invert)?;
    Ok(matrices)
}

/// Write a training history as CSV and JSON next to its checkpoints.
pub fn write_history(history: &TrainingHistory, dir: &Path) -> Result<()> {
    history.write_csv(&dir.join("history.csv"))?;
    history.write_step_csv(&dir.join("steps.csv"))?;
    history.save_json(&dir.join("history.json"))
}

/// Averages of a pretrained checkpoint over the training matrix, stamped
/// with the checkpoint's phase and hash.
pub fn averages_from_checkpoint(ckpt_path: &Path, train: &GlyphMatrix) -> Result<AverageFeatureTable> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let mut avgs = compute_average_features(&ckpt.model, train)?;
    avgs.provenance.phase = ckpt.phase.as_str().to_string();
    avgs.provenance.checkpoint_sha256 = Some(file_sha256(ckpt_path)?);
    Ok(avgs)
}

/// Extract a feature table and stamp its provenance.
pub fn extract_table(ckpt_path: &Path, params: &ModelParams, matrix: &GlyphMatrix, dataset: &str) -> Result<FeatureTable> {
    let mut table = extract_features(params, matrix);
    table.provenance = TableProvenance {
        checkpoint: file_sha256(ckpt_path)?,
        dataset: dataset.to_string(),
    };
    Ok(table)
}

/// The four probes: font and character recognition from each feature.
pub const PROBES: [(ProbeTarget, FeatureKind); 4] = [
    (ProbeTarget::Font, FeatureKind::Style),
    (ProbeTarget::Font, FeatureKind::Content),
    (ProbeTarget::Char, FeatureKind::Content),
    (ProbeTarget::Char, FeatureKind::Style),
];

pub fn run_all_probes(test: &FeatureTable, train: Option<&FeatureTable>, base: &ProbeProtocol) -> Result<Vec<ProbeResult>> {
    PROBES
        .iter()
        .map(|&(target, kind)| {
            let protocol = ProbeProtocol {
                target,
                kind,
                ..base.clone()
            };
            let r = run_probe(test, train, &protocol)?;
            info!(
                "probe {target}/{kind}: {:.2}% +- {:.2} (chance {:.2}%)",
                100.0 * r.mean,
                100.0 * r.std,
                100.0 * r.chance
            );
            Ok(r)
        })
        .collect()
}

pub fn write_probe_results(results: &[ProbeResult], dir: &Path) -> Result<()> {
    let json = dir.join("probes.json");
    std::fs::write(&json, serde_json::to_string_pretty(results).expect("probe results serialize"))
        .map_err(|e| Error::io(&json, e))?;
    let csv_path = dir.join("probes.csv");
    let mut text = String::from("target,kind,mean,std,chance,n_classes,accuracies\n");
    for r in results {
        let accs: Vec<String> = r.accuracies.iter().map(|a| a.to_string()).collect();
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.target,
            r.kind,
            r.mean,
            r.std,
            r.chance,
            r.n_classes,
            accs.join(";")
        ));
    }
    std::fs::write(&csv_path, text).map_err(|e| Error::io(&csv_path, e))
}

/// Run one-shot generation on the test split and write metric tables and
/// contact sheets under `dir`.
pub fn write_generation(
    params: &ModelParams,
    test: &GlyphMatrix,
    table: &FeatureTable,
    seed: u64,
    dir: &Path,
    invert: bool,
) -> Result<GenerationOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outcome = evaluate_generation(params, test, table, seed)?;
    outcome.report.write_csv(&dir.join("metrics.csv"))?;
    outcome.report.write_summary_json(&dir.join("summary.json"))?;
    outcome.baseline.write_csv(&dir.join("baseline_metrics.csv"))?;
    outcome.baseline.write_summary_json(&dir.join("baseline_summary.json"))?;
    write_contact_sheets(&outcome, test, &dir.join("sheets"), invert)?;
    Ok(outcome)
}

/// Smallest Euclidean distance between any two vectors; infinite for
/// fewer than two.
pub fn min_pairwise_distance(vectors: &[&[f64]]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..vectors.len() {
        for b in a + 1..vectors.len() {
            let d: f64 = vectors[a].iter().zip(vectors[b]).map(|(x, y)| (x - y).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    /// Mean style variance-loss value over the training matrix.
    pub style_variance: f64,
    pub content_variance: f64,
    /// Inference-mode reconstruction MAE over the validation matrix.
    pub val_reconstruction: f64,
}

impl PhaseStats {
    pub fn measure(params: &ModelParams, train: &GlyphMatrix, val: &GlyphMatrix) -> Result<Self> {
        let (style_variance, content_variance) = within_group_variances(params, train)?;
        Ok(Self {
            style_variance,
            content_variance,
            val_reconstruction: reconstruction_error(params, val)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pretrained: PhaseStats,
    pub finetuned: PhaseStats,
    pub style_variance_ratio: f64,
    pub content_variance_ratio: f64,
    pub val_reconstruction_ratio: f64,
    /// Over the fine-tuned network's training averages.
    pub min_content_avg_distance: f64,
    pub min_style_avg_distance: f64,
    pub probes: Vec<ProbeResult>,
    pub generation: MetricsSummary,
    pub baseline: MetricsSummary,
    pub visual: VisualSummary,
}

impl PipelineReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
    }

    pub fn probe(&self, target: ProbeTarget, kind: FeatureKind) -> Option<&ProbeResult> {
        self.probes.iter().find(|p| p.target == target && p.kind == kind)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Run report\n\n## Training\n\n| | pretrained | fine-tuned | ratio |\n|---|---|---|---|\n");
        s.push_str(&format!(
            "| style variance | {:.5} | {:.5} | {:.3} |\n",
            self.pretrained.style_variance, self.finetuned.style_variance, self.style_variance_ratio
        ));
        s.push_str(&format!(
            "| content variance | {:.5} | {:.5} | {:.3} |\n",
            self.pretrained.content_variance, self.finetuned.content_variance, self.content_variance_ratio
        ));
        s.push_str(&format!(
            "| val reconstruction | {:.5} | {:.5} | {:.3} |\n\n",
            self.pretrained.val_reconstruction, self.finetuned.val_reconstruction, self.val_reconstruction_ratio
        ));
        s.push_str(&format!(
            "Minimum distance between averages: content {:.5}, style {:.5}\n\n## Probes\n\n| target | feature | accuracy | chance |\n|---|---|---|---|\n",
            self.min_content_avg_distance, self.min_style_avg_distance
        ));
        for p in &self.probes {
            s.push_str(&format!(
                "| {} | {} | {:.2}% +- {:.2} | {:.2}% |\n",
                p.target,
                p.kind,
                100.0 * p.mean,
                100.0 * p.std,
                100.0 * p.chance
            ));
        }
        s.push_str("\n## One-shot generation\n\n| | MSE | MAE | HD | CD | IoU | excluded |\n|---|---|---|---|---|---|---|\n");
        for (name, m) in [("generated", &self.generation), ("copy source", &self.baseline)] {
            s.push_str(&format!(
                "| {name} | {:.4} | {:.4} | {:.3} | {:.3} | {:.4} | {} |\n",
                m.mse, m.mae, m.hd, m.cd, m.iou, m.excluded_count
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub stages: Vec<(String, StageStatus)>,
}

pub const STAGES: [&str; 9] = [
    "render",
    "pretrain",
    "compute-avgs",
    "finetune",
    "extract",
    "probe",
    "visualize",
    "generate",
    "report",
];

/// Relative output paths.
pub mod paths {
    pub const GLYPHS: &str = "glyphs";
    pub const PRETRAIN: &str = "pretrain";
    pub const FINETUNE: &str = "finetune";
    pub const AVERAGES: &str = "averages.json";
    pub const TRAIN_FEATURES: &str = "features/train.gsft";
    pub const TEST_FEATURES: &str = "features/test.gsft";
    pub const PROBES: &str = "probes";
    pub const PLOTS: &str = "plots";
    pub const GENERATION: &str = "generation";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_MD: &str = "report.md";
    pub const CONFIG_COPY: &str = "config.toml";
}

struct Runner {
    out: PathBuf,
    ledger: StageLedger,
    dirty: bool,
    statuses: Vec<(String, StageStatus)>,
}

impl Runner {
    /// Run `body` unless the ledger shows this stage complete and intact.
    /// `body` returns the output files it wrote, relative to the run dir.
    fn stage(&mut self, name: &str, fingerprint: String, body: impl FnOnce(&Path) -> Result<Vec<PathBuf>>) -> Result<()> {
        if !self.dirty && self.ledger.is_fresh(&self.out, name, &fingerprint) {
            info!("stage {name}: up to date");
            self.statuses.push((name.to_string(), StageStatus::Skipped));
            return Ok(());
        }
        info!("stage {name}: running");
        self.dirty = true;
        self.ledger.remove(name);
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        };
        let outputs = body(&self.out).map_err(wrap)?;
        let record = StageRecord::hash_outputs(&self.out, fingerprint, &outputs).map_err(wrap)?;
        self.ledger.insert(name, record);
        self.ledger.save(&self.out.join(LEDGER_FILE))?;
        self.statuses.push((name.to_string(), StageStatus::Ran));
        Ok(())
    }
}

fn fingerprint(parts: &[&dyn erased::Fingerprint]) -> String {
    let mut text = String::new();
    for p in parts {
        text.push_str(&p.fingerprint_text());
        text.push('\n');
    }
    ledger::sha256_hex(text.as_bytes())
}

mod erased {
    use serde::Serialize;

    pub trait Fingerprint {
        fn fingerprint_text(&self) -> String;
    }

    impl<T: Serialize> Fingerprint for T {
        fn fingerprint_text(&self) -> String {
            serde_json::to_string(self).expect("fingerprint input serializes")
        }
    }
}

fn rel(out: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(out).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

fn list_files(out: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(rel(out, &path));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    }
}

fn manifest_fingerprint(manifest: &DatasetManifest) -> Result<Vec<String>> {
    let mut parts = vec![format!("{}:{}", manifest.render_size, manifest.entries.len())];
    for e in &manifest.entries {
        let path = manifest.resolve(e);
        parts.push(format!("{}:{}:{}", e.name, e.split, file_sha256(&path)?));
    }
    Ok(parts)
}

/// Run every stage in order, skipping those already complete.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.save(&out.join(paths::CONFIG_COPY))?;
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    if manifest.render_size != cfg.model.image_size {
        return Err(Error::InvalidConfig(format!(
            "manifest renders {} px glyphs but the model expects {} px",
            manifest.render_size, cfg.model.image_size
        )));
    }
    let ledger = StageLedger::load_or_default(&out.join(LEDGER_FILE));
    let mut r = Runner {
        out: out.clone(),
        ledger,
        dirty: false,
        statuses: Vec::new(),
    };
    let tcfg = train_config(cfg);
    let glyph_dir = out.join(paths::GLYPHS);
    let load = |split| load_cache(&glyph_dir, split);

    r.stage("render", fingerprint(&[&manifest_fingerprint(&manifest)?, &cfg.invert_png]), |out| {
        let dir = out.join(paths::GLYPHS);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        render_dataset(&manifest, &dir, cfg.invert_png)?;
        list_files(out, &dir)
    })?;

    let pre_ckpt = out.join(paths::PRETRAIN).join("best.ckpt");
    let fine_ckpt = out.join(paths::FINETUNE).join("best.ckpt");
    r.stage("pretrain", fingerprint(&[&tcfg, &cfg.model]), |out| {
        let dir = out.join(paths::PRETRAIN);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (train, val) = (load(Split::Train)?, load(Split::Val)?);
        let init = ModelParams::new(cfg.model.clone(), derive_seed(tcfg.seed, "init"))?;
        let (_, history) = pretrain(init, &train, &val, &tcfg, Some(&dir))?;
        write_history(&history, &dir)?;
        list_files(out, &dir)
    })?;

    r.stage("compute-avgs", fingerprint(&[&"averages"]), |out| {
        let avgs = averages_from_checkpoint(&pre_ckpt, &load(Split::Train)?)?;
        avgs.save(&out.join(paths::AVERAGES))?;
        Ok(vec![PathBuf::from(paths::AVERAGES)])
    })?;

    r.stage("finetune", fingerprint(&[&tcfg]), |out| {
        let dir = out.join(paths::FINETUNE);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (train, val) = (load(Split::Train)?, load(Split::Val)?);
        let avgs = AverageFeatureTable::load(&out.join(paths::AVERAGES))?;
        let start = Checkpoint::load(&pre_ckpt)?.model;
        let (_, history) = finetune(start, &avgs, &train, &val, &tcfg, Some(&dir))?;
        write_history(&history, &dir)?;
        list_files(out, &dir)
    })?;

    r.stage("extract", fingerprint(&[&"extract"]), |out| {
        let params = Checkpoint::load(&fine_ckpt)?.model;
        std::fs::create_dir_all(out.join("features")).map_err(|e| Error::io(out, e))?;
        let mut files = Vec::new();
        for (split, rel_path) in [(Split::Train, paths::TRAIN_FEATURES), (Split::Test, paths::TEST_FEATURES)] {
            let table = extract_table(&fine_ckpt, &params, &load(split)?, split.as_str())?;
            let path = out.join(rel_path);
            table.save(&path)?;
            files.push(PathBuf::from(rel_path));
            files.push(rel(out, &index_path(&path)));
        }
        Ok(files)
    })?;

    let probe_protocol = ProbeProtocol {
        seed: derive_seed(cfg.seed, "probe"),
        ..cfg.probe.clone()
    };
    r.stage("probe", fingerprint(&[&probe_protocol]), |out| {
        let test = FeatureTable::load(&out.join(paths::TEST_FEATURES))?;
        let train = FeatureTable::load(&out.join(paths::TRAIN_FEATURES))?;
        let results = run_all_probes(&test, Some(&train), &probe_protocol)?;
        let dir = out.join(paths::PROBES);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_probe_results(&results, &dir)?;
        list_files(out, &dir)
    })?;

    r.stage("visualize", fingerprint(&[&"visualize"]), |out| {
        let test = FeatureTable::load(&out.join(paths::TEST_FEATURES))?;
        let dir = out.join(paths::PLOTS);
        let summary = visualize(&test, &dir)?;
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
            .map_err(|e| Error::io(&path, e))?;
        list_files(out, &dir)
    })?;

    let gen_seed = derive_seed(cfg.seed, "generation");
    r.stage("generate", fingerprint(&[&gen_seed, &cfg.invert_png]), |out| {
        let params = Checkpoint::load(&fine_ckpt)?.model;
        let test = FeatureTable::load(&out.join(paths::TEST_FEATURES))?;
        let dir = out.join(paths::GENERATION);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        write_generation(&params, &load(Split::Test)?, &test, gen_seed, &dir, cfg.invert_png)?;
        list_files(out, &dir)
    })?;

    r.stage("report", fingerprint(&[&"report"]), |out| {
        let report = build_report(out, &load(Split::Train)?, &load(Split::Val)?)?;
        let json = out.join(paths::REPORT_JSON);
        std::fs::write(&json, serde_json::to_string_pretty(&report).expect("report serializes"))
            .map_err(|e| Error::io(&json, e))?;
        let md = out.join(paths::REPORT_MD);
        std::fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))?;
        Ok(vec![PathBuf::from(paths::REPORT_JSON), PathBuf::from(paths::REPORT_MD)])
    })?;

    Ok(PipelineOutcome {
        out_dir: out,
        stages: r.statuses,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
}

fn build_report(out: &Path, train: &GlyphMatrix, val: &GlyphMatrix) -> Result<PipelineReport> {
    let pre = Checkpoint::load(&out.join(paths::PRETRAIN).join("best.ckpt"))?;
    let fine = Checkpoint::load(&out.join(paths::FINETUNE).join("best.ckpt"))?;
    if pre.phase != Phase::Pretrained || fine.phase != Phase::Finetuned {
        return Err(Error::corrupt(out, "checkpoints carry unexpected phases"));
    }
    let pretrained = PhaseStats::measure(&pre.model, train, val)?;
    let finetuned = PhaseStats::measure(&fine.model, train, val)?;
    let avgs = compute_average_features(&fine.model, train)?;
    let probes: Vec<ProbeResult> = read_json(&out.join(paths::PROBES).join("probes.json"))?;
    let generation: MetricsSummary = read_json(&out.join(paths::GENERATION).join("summary.json"))?;
    let baseline: MetricsSummary = read_json(&out.join(paths::GENERATION).join("baseline_summary.json"))?;
    let visual: VisualSummary = read_json(&out.join(paths::PLOTS).join("summary.json"))?;
    Ok(PipelineReport {
        style_variance_ratio: finetuned.style_variance / pretrained.style_variance,
        content_variance_ratio: finetuned.content_variance / pretrained.content_variance,
        val_reconstruction_ratio: finetuned.val_reconstruction / pretrained.val_reconstruction,
        min_content_avg_distance: min_pairwise_distance(&avgs.content_vectors()),
        min_style_avg_distance: min_pairwise_distance(&avgs.style_vectors()),
        pretrained,
        finetuned,
        probes,
        generation,
        baseline,
        visual,
    })
}

/// Evaluate one checkpoint against a dataset: features, probes,
/// generation, and plots under `out`.
pub fn evaluate_checkpoint(
    ckpt_path: &Path,
    dataset: &Path,
    out: &Path,
    protocol: &ProbeProtocol,
    seed: u64,
    invert: bool,
) -> Result<(Vec<ProbeResult>, GenerationOutcome)> {
    let params = Checkpoint::load(ckpt_path)?.model;
    let train = load_dataset(dataset, Split::Train)?;
    let test = load_dataset(dataset, Split::Test)?;
    std::fs::create_dir_all(out.join("features")).map_err(|e| Error::io(out, e))?;
    let train_table = extract_table(ckpt_path, &params, &train, "train")?;
    let test_table = extract_table(ckpt_path, &params, &test, "test")?;
    train_table.save(&out.join(paths::TRAIN_FEATURES))?;
    test_table.save(&out.join(paths::TEST_FEATURES))?;
    let protocol = ProbeProtocol {
        seed: derive_seed(seed, "probe"),
        ..protocol.clone()
    };
    let probes = run_all_probes(&test_table, Some(&train_table), &protocol)?;
    let probe_dir = out.join(paths::PROBES);
    std::fs::create_dir_all(&probe_dir).map_err(|e| Error::io(&probe_dir, e))?;
    write_probe_results(&probes, &probe_dir)?;
    visualize(&test_table, &out.join(paths::PLOTS))?;
    let outcome = write_generation(
        &params,
        &test,
        &test_table,
        derive_seed(seed, "generation"),
        &out.join(paths::GENERATION),
        invert,
    )?;
    Ok((probes, outcome))
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use glyphsplit::eval::{one_shot_generate, run_probe, FeatureKind, ProbeProtocol, ProbeTarget};
use glyphsplit::features::{visualize, FeatureTable};
use glyphsplit::glyphset::{from_gray, to_gray, DatasetManifest, GlyphImage, Split};
use glyphsplit::model::{Checkpoint, ModelConfig, ModelParams};
use glyphsplit::pipeline::{
    averages_from_checkpoint, evaluate_checkpoint, extract_table, load_dataset, render_dataset, run_pipeline,
    version_info, write_history, write_probe_results, ExperimentConfig,
};
use glyphsplit::seed::derive_seed;
use glyphsplit::trainer::{finetune, pretrain, AverageFeatureTable};

#[derive(Parser)]
#[command(name = "glyphsplit", about = "Split glyph images into font-style and character-content features")]
struct Cli {
    /// Experiment config (TOML) supplying defaults for training and probes.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a manifest's fonts into a glyph cache.
    RenderDataset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
        /// Accepted for interface symmetry; rendering is deterministic.
        #[arg(long)]
        seed: Option<u64>,
        /// Write dark ink on a light background.
        #[arg(long)]
        invert: bool,
    },
    /// Style-transfer pre-training.
    Pretrain {
        /// Manifest file or glyph cache directory.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Average features of a pretrained checkpoint over the train split.
    ComputeAvgs {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Variance-loss fine-tuning.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        avgs: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a feature table for one split.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCA scatter plots of a feature table.
    Visualize {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and test a recognition probe.
    Probe {
        #[arg(long)]
        features: PathBuf,
        /// Training table for character probes.
        #[arg(long)]
        train_features: Option<PathBuf>,
        #[arg(long)]
        target: ProbeTarget,
        #[arg(long)]
        kind: FeatureKind,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for probes.json and probes.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate all glyphs of a font in the style of one image.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        style_image: PathBuf,
        #[arg(long)]
        content_font: String,
        /// Feature table holding the content font.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Images are dark ink on a light background.
        #[arg(long)]
        invert: bool,
    },
    /// Probes, generation metrics and plots for one checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        invert: bool,
    },
    /// Run every stage of an experiment, skipping completed ones.
    RunPipeline {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print toolkit, config schema and file format versions.
    Version,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_model(path: &Path) -> Result<ModelParams> {
    Ok(Checkpoint::load(path)?.model)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::RenderDataset {
            manifest,
            out,
            size,
            seed: _,
            invert,
        } => {
            let mut m = DatasetManifest::load(&manifest)?;
            if let Some(size) = size {
                m.render_size = size;
            }
            let matrices = render_dataset(&m, &out, invert)?;
            for (split, matrix) in matrices {
                println!("{split}: {} fonts", matrix.num_fonts());
            }
        }
        Command::Pretrain {
            manifest,
            out,
            epochs,
            patience,
            seed,
        } => {
            let mut tcfg = cfg.train.clone();
            tcfg.seed = seed.unwrap_or(cfg.seed);
            if let Some(e) = epochs {
                tcfg.max_epochs_pretrain = e;
            }
            if let Some(p) = patience {
                tcfg.early_stop_patience = p;
            }
            let train = load_dataset(&manifest, Split::Train)?;
            let val = load_dataset(&manifest, Split::Val)?;
            ensure_dir(&out)?;
            let model = ModelConfig {
                image_size: train.image_size(),
                ..cfg.model.clone()
            };
            let init = ModelParams::new(model, derive_seed(tcfg.seed, "init"))?;
            let (_, history) = pretrain(init, &train, &val, &tcfg, Some(&out))?;
            write_history(&history, &out)?;
            println!("best epoch {}", history.best_epoch);
        }
        Command::ComputeAvgs {
            checkpoint,
            manifest,
            out,
        } => {
            let train = load_dataset(&manifest, Split::Train)?;
            let avgs = averages_from_checkpoint(&checkpoint, &train)?;
            if let Some(parent) = out.parent() {
                ensure_dir(parent)?;
            }
            avgs.save(&out)?;
        }
        Command::Finetune {
            checkpoint,
            avgs,
            manifest,
            out,
            epochs,
            patience,
            seed,
        } => {
            let mut tcfg = cfg.train.clone();
            tcfg.seed = seed.unwrap_or(cfg.seed);
            if let Some(e) = epochs {
                tcfg.max_epochs_finetune = e;
            }
            if let Some(p) = patience {
                tcfg.early_stop_patience = p;
            }
            let avgs = AverageFeatureTable::load(&avgs)?;
            let train = load_dataset(&manifest, Split::Train)?;
            let val = load_dataset(&manifest, Split::Val)?;
            ensure_dir(&out)?;
            let (_, history) = finetune(load_model(&checkpoint)?, &avgs, &train, &val, &tcfg, Some(&out))?;
            write_history(&history, &out)?;
            println!("best epoch {}", history.best_epoch);
        }
        Command::Extract {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let params = load_model(&checkpoint)?;
            let matrix = load_dataset(&manifest, split)?;
            if let Some(parent) = out.parent() {
                ensure_dir(parent)?;
            }
            extract_table(&checkpoint, &params, &matrix, split.as_str())?.save(&out)?;
        }
        Command::Visualize { features, out } => {
            let summary = visualize(&FeatureTable::load(&features)?, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Probe {
            features,
            train_features,
            target,
            kind,
            trials,
            seed,
            out,
        } => {
            let test = FeatureTable::load(&features)?;
            let train = train_features.as_deref().map(FeatureTable::load).transpose()?;
            let protocol = ProbeProtocol {
                target,
                kind,
                trials: trials.unwrap_or(cfg.probe.trials),
                seed: seed.unwrap_or(cfg.seed),
                ..cfg.probe.clone()
            };
            let r = run_probe(&test, train.as_ref(), &protocol)?;
            println!(
                "{target}/{kind}: {:.2}% +- {:.2} over {} trials (chance {:.2}%)",
                100.0 * r.mean,
                100.0 * r.std,
                r.accuracies.len(),
                100.0 * r.chance
            );
            if let Some(out) = out {
                ensure_dir(&out)?;
                write_probe_results(&[r], &out)?;
            }
        }
        Command::Generate {
            checkpoint,
            style_image,
            content_font,
            features,
            out,
            invert,
        } => {
            let params = load_model(&checkpoint)?;
            let table = FeatureTable::load(&features)?;
            let font = table
                .font_index(&content_font)
                .with_context(|| format!("font {content_font:?} is not in {}", features.display()))?;
            let img = image::open(&style_image)
                .with_context(|| format!("reading {}", style_image.display()))?
                .to_luma8();
            let size = params.config.image_size;
            if img.width() as usize != size || img.height() as usize != size {
                anyhow::bail!("style image must be {size}x{size}, got {}x{}", img.width(), img.height());
            }
            // The style glyph comes from outside the table, so no font id can clash.
            let glyph = GlyphImage {
                size,
                pixels: from_gray(&img, invert),
                font_id: usize::MAX,
                class_id: 0,
            };
            let images = one_shot_generate(&params, &glyph, font, &table)?;
            ensure_dir(&out)?;
            for (label, pixels) in table.class_labels.iter().zip(&images) {
                let path = out.join(format!("{label}.png"));
                to_gray(pixels, size, invert).save(&path)?;
            }
            println!("wrote {} glyphs to {}", images.len(), out.display());
        }
        Command::Report {
            checkpoint,
            manifest,
            out,
            seed,
            invert,
        } => {
            let (probes, outcome) =
                evaluate_checkpoint(&checkpoint, &manifest, &out, &cfg.probe, seed.unwrap_or(cfg.seed), invert)?;
            for p in &probes {
                println!(
                    "probe {}/{}: {:.2}% +- {:.2} (chance {:.2}%)",
                    p.target,
                    p.kind,
                    100.0 * p.mean,
                    100.0 * p.std,
                    100.0 * p.chance
                );
            }
            let (g, b) = (&outcome.report.summary, &outcome.baseline.summary);
            println!(
                "generation: MSE {:.4} MAE {:.4} HD {:.3} CD {:.3} IoU {:.4} excluded {}",
                g.mse, g.mae, g.hd, g.cd, g.iou, g.excluded_count
            );
            println!("copy-source baseline IoU {:.4}", b.iou);
        }
        Command::RunPipeline { out, seed } => {
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let outcome = run_pipeline(&cfg)?;
            for (stage, status) in &outcome.stages {
                info!("{stage}: {status:?}");
                println!("{stage}: {}", if *status == glyphsplit::pipeline::StageStatus::Ran { "ran" } else { "skipped" });
            }
            println!("artifacts in {}", outcome.out_dir.display());
        }
        Command::Version => println!("{}", version_info()),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<glyphsplit::Error>() {
        Some(e) if !e.is_user_error() => 2,
        Some(_) => 1,
        // Argument, I/O and image problems outside the library.
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

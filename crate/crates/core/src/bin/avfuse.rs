//! Command-line front end. Argument parsing only; the work happens in
//! `avfuse::pipeline`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avfuse::audio::MelConfig;
use avfuse::data::SplitTag;
use avfuse::fusion::{AttentionVariant, FusionMethod};
use avfuse::pipeline::{self, AudioWeights, RunConfig};
use avfuse::Result;
use clap::{Args, Parser, Subcommand};

const QUICKSTART: &str = "\
Quickstart on the synthetic benchmark:
  avfuse synth --out bench
  avfuse fuse-train --method attention --data bench --out bench/attention.avf
  avfuse fuse-infer --bundle bench/attention.avf --data bench --out bench/fused.avf --emit-attention
  avfuse evaluate --scores bench/fused.avf --data bench --out bench/eval.json
  avfuse analyze --fused bench/fused.avf --attention bench/fused.attention.avf --data bench --out bench/analysis

Settings come from flags, then the --config TOML file, then AVFUSE_DATA_ROOT.
Exit codes: 2 usage, 3 missing file, 4 bad data, 5 numeric failure.";

#[derive(Parser)]
#[command(name = "avfuse", version, about = "Audio-visual weak-label classification and fusion", after_help = QUICKSTART)]
struct Cli {
    /// TOML file with defaults for seed, epochs, batch_size, learning_rates,
    /// method, variant, hidden, dropout, l2, val_fraction, data_root.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Root for relative manifest paths and the default --data directory.
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Training {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// One or more learning rates; several are swept on validation mAP.
    #[arg(long = "lr", value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    #[arg(long)]
    dropout: Option<f64>,
}

/// Benchmark directory (with train/, val/, eval/) and split selection.
#[derive(Args)]
struct DataSel {
    /// Benchmark directory; defaults to the data root.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    split: SplitTag,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic audio/visual score benchmark.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        classes: usize,
        #[arg(long, default_value_t = 20_000)]
        n_train: usize,
        #[arg(long, default_value_t = 2_000)]
        n_val: usize,
        #[arg(long, default_value_t = 4_000)]
        n_eval: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Compute log-mel features for every waveform in a manifest.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Bag-level audio predictions from the ConvNet.
    AudioInfer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required_unless_present = "random_init")]
        weights: Option<PathBuf>,
        /// Use randomly initialized reference weights with this seed.
        #[arg(long, conflicts_with = "weights", requires = "classes")]
        random_init: Option<u64>,
        #[arg(long)]
        classes: Option<usize>,
        /// Directory of cached feature files written by `features`.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        split: Option<SplitTag>,
        #[arg(long, default_value_t = avfuse::audio::REFERENCE_FRAMES)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the visual classifier on pooled frame features.
    VisualTrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        /// Hidden layer widths.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        #[arg(long)]
        val_fraction: Option<f64>,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        common: Common,
    },
    /// Visual predictions for a manifest.
    VisualInfer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        split: Option<SplitTag>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a fusion model on the train/ and val/ splits of a benchmark.
    FuseTrain {
        #[arg(long)]
        method: Option<FusionMethod>,
        #[arg(long)]
        variant: Option<AttentionVariant>,
        /// Benchmark directory; defaults to the data root.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Hidden units of the MLP and attention networks.
        #[arg(long)]
        hidden: Option<usize>,
        /// L2 weight of regression fusion.
        #[arg(long)]
        l2: Option<f64>,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        common: Common,
    },
    /// Apply a fusion bundle to one split.
    FuseInfer {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        data: DataSel,
        #[arg(long)]
        out: PathBuf,
        /// Also write the audio attention weights (default: <out>.attention.avf).
        #[arg(long, num_args = 0..=1)]
        emit_attention: Option<Option<PathBuf>>,
        #[command(flatten)]
        common: Common,
    },
    /// AP, AUC, mAP and mAUC of a score matrix.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        /// Label matrix; defaults to labels.avf of the selected split.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        data: DataSel,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-class gains over single modalities and attention summaries as CSV.
    Analyze {
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        attention: Option<PathBuf>,
        #[command(flatten)]
        data: DataSel,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        bin_width: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Assign train/val tags to a manifest, stratified by rarest label.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        val_fraction: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn config(file: Option<&Path>, common: Common, overrides: RunConfig) -> Result<RunConfig> {
    let flags = RunConfig {
        seed: common.seed,
        data_root: common.data_root,
        ..overrides
    };
    RunConfig::resolve(flags, file)
}

fn training(t: Training) -> RunConfig {
    RunConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rates: t.lr,
        dropout: t.dropout,
        ..RunConfig::default()
    }
}

fn split_dir(cfg: &RunConfig, sel: DataSel) -> Result<PathBuf> {
    Ok(cfg.data_dir(sel.data)?.join(sel.split.name()))
}

fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Synth {
            out,
            classes,
            n_train,
            n_val,
            n_eval,
            common,
        } => {
            let cfg = config(file, common, RunConfig::default())?;
            let s = pipeline::SynthSettings {
                out,
                seed: cfg.seed(),
                classes,
                n_train,
                n_val,
                n_eval,
            };
            pipeline::synth(&s)?;
            println!("wrote {}", s.out.display());
        }
        Command::Features { manifest, out, common } => {
            let cfg = config(file, common, RunConfig::default())?;
            let n = pipeline::features(&pipeline::FeaturesSettings {
                manifest,
                out,
                data_root: cfg.data_root,
                mel: MelConfig::default(),
            })?;
            println!("wrote {n} feature files");
        }
        Command::AudioInfer {
            manifest,
            weights,
            random_init,
            classes,
            features,
            split,
            frames,
            out,
            labels_out,
            common,
        } => {
            let cfg = config(file, common, RunConfig::default())?;
            let weights = match (weights, random_init, classes) {
                (Some(p), _, _) => AudioWeights::Checkpoint(p),
                (None, Some(seed), Some(classes)) => AudioWeights::Random { classes, seed },
                _ => unreachable!("clap enforces --weights or --random-init with --classes"),
            };
            let scores = pipeline::audio_infer(&pipeline::AudioInferSettings {
                features,
                split,
                frames,
                data_root: cfg.data_root,
                labels_out,
                ..pipeline::AudioInferSettings::new(manifest, weights, out)
            })?;
            println!("scored {} recordings", scores.rows());
        }
        Command::VisualTrain {
            manifest,
            out,
            classes,
            widths,
            val_fraction,
            training: t,
            common,
        } => {
            let cfg = config(
                file,
                common,
                RunConfig {
                    val_fraction,
                    ..training(t)
                },
            )?;
            let mut s = pipeline::VisualTrainSettings::new(manifest, out, cfg.seed());
            s.data_root = cfg.data_root;
            s.classes = classes;
            s.widths = widths.unwrap_or(s.widths);
            s.dropout = cfg.dropout.unwrap_or(s.dropout);
            s.epochs = cfg.epochs.unwrap_or(s.epochs);
            s.batch_size = cfg.batch_size.unwrap_or(s.batch_size);
            s.learning_rates = cfg.learning_rates.unwrap_or(s.learning_rates);
            s.val_fraction = cfg.val_fraction.unwrap_or(s.val_fraction);
            let (_, report) = pipeline::visual_train(&s)?;
            let best = report.best();
            println!(
                "best epoch {} of {}, validation mAP {:.2}",
                best.epoch + 1,
                report.epochs.len(),
                100.0 * best.val_map.unwrap_or(f64::NAN)
            );
        }
        Command::VisualInfer {
            manifest,
            weights,
            split,
            out,
            labels_out,
            common,
        } => {
            let cfg = config(file, common, RunConfig::default())?;
            let scores = pipeline::visual_infer(&pipeline::VisualInferSettings {
                manifest,
                weights,
                split,
                data_root: cfg.data_root,
                out,
                labels_out,
            })?;
            println!("scored {} recordings", scores.rows());
        }
        Command::FuseTrain {
            method,
            variant,
            data,
            out,
            hidden,
            l2,
            training: t,
            common,
        } => {
            let flags = RunConfig {
                method,
                variant,
                hidden,
                l2,
                ..training(t)
            };
            let cfg = config(file, common, flags)?;
            let dir = cfg.data_dir(data)?;
            let s = pipeline::FuseTrainSettings::from_config(&cfg, dir.join("train"), dir.join("val"), out);
            let (bundle, report) = pipeline::fuse_train(&s)?;
            match report {
                Some(r) => println!(
                    "{} fusion: best epoch {}, lr {}, validation mAP {:.2}",
                    s.method,
                    r.best_epoch + 1,
                    bundle.meta.learning_rate.unwrap_or(f64::NAN),
                    100.0 * r.best().val_map.unwrap_or(f64::NAN)
                ),
                None => println!("{} fusion has no parameters", s.method),
            }
        }
        Command::FuseInfer {
            bundle,
            data,
            out,
            emit_attention,
            common,
        } => {
            let cfg = config(file, common, RunConfig::default())?;
            let dir = split_dir(&cfg, data)?;
            let attention_out = emit_attention.map(|p| p.unwrap_or_else(|| pipeline::default_attention_path(&out)));
            pipeline::fuse_infer(&pipeline::FuseInferSettings {
                bundle,
                audio: dir.join("audio.avf"),
                visual: dir.join("visual.avf"),
                out,
                attention_out,
            })?;
        }
        Command::Evaluate {
            scores,
            labels,
            data,
            out,
            common,
        } => {
            let cfg = config(file, common, RunConfig::default())?;
            let labels = match labels {
                Some(l) => l,
                None => split_dir(&cfg, data)?.join("labels.avf"),
            };
            let r = pipeline::evaluate_files(&pipeline::EvaluateSettings { scores, labels, out })?;
            println!("mAP  {:.2}", r.map());
            println!("mAUC {:.2}", r.mauc());
            if !r.excluded_ap.is_empty() {
                println!("{} classes without positives excluded", r.excluded_ap.len());
            }
        }
        Command::Analyze {
            fused,
            attention,
            data,
            out,
            bin_width,
            common,
        } => {
            let cfg = config(file, common, RunConfig::default())?;
            let dir = split_dir(&cfg, data)?;
            let a = pipeline::analyze(&pipeline::AnalyzeSettings {
                fused,
                audio: dir.join("audio.avf"),
                visual: dir.join("visual.avf"),
                labels: dir.join("labels.avf"),
                attention,
                out,
                bin_width,
            })?;
            let s = &a.improvement;
            println!("improved {} of {} classes", s.improved, s.classes);
        }
        Command::Split {
            manifest,
            out,
            val_fraction,
            common,
        } => {
            let cfg = config(
                file,
                common,
                RunConfig {
                    val_fraction,
                    ..RunConfig::default()
                },
            )?;
            let m = pipeline::split_manifest(&pipeline::SplitSettings {
                manifest,
                out,
                val_fraction: cfg.val_fraction.unwrap_or(0.0125),
                seed: cfg.seed(),
            })?;
            let val = m.records.iter().filter(|r| r.split == Some(SplitTag::Val)).count();
            println!("{val} of {} records tagged val", m.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

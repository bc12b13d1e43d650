use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use grassnet::checkpoint::Checkpoint;
use grassnet::data::{infer_schema, load_dataset, Dataset};
use grassnet::synth::{gen_synthetic, SynthSpec};
use grassnet::train::{evaluate_model, predict_model, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "grassnet",
    about = "Multi-label time-series classifier over learned sensor graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint plus training history.
    Train {
        /// JSON run configuration (flat key/value).
        #[arg(long)]
        config: PathBuf,
        /// Training CSV.
        #[arg(long)]
        train: PathBuf,
        /// Validation CSV.
        #[arg(long)]
        valid: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and print the metric table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write per-sample label probabilities as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with planted label rules.
    GenSynthetic {
        /// JSON generator spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a checkpoint's binary label-correlation graph as JSON.
    ExportLabelGraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Load a dataset against a checkpoint's schema, refusing on a structural
/// mismatch (the loader compares hashes internally).
fn load_for_checkpoint(ckpt: &Checkpoint, data: &Path) -> Result<Dataset> {
    load_dataset(data, &ckpt.schema, true)
        .with_context(|| format!("loading {} against the checkpoint schema", data.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            train: train_path,
            valid,
            out,
        } => {
            let cfg: TrainConfig = serde_json::from_str(
                &fs::read_to_string(&config)
                    .with_context(|| format!("reading {}", config.display()))?,
            )
            .context("parsing the run configuration")?;
            let schema = infer_schema(&train_path)?;
            let train_set = load_dataset(&train_path, &schema, false)?;
            let valid_set = load_dataset(&valid, &schema, true)?;
            eprintln!(
                "training: {} samples ({} labeled, {} unlabeled), {} validation",
                train_set.samples.len(),
                train_set.labeled().len(),
                train_set.unlabeled().len(),
                valid_set.samples.len()
            );
            let outcome = train(&train_set, &valid_set, &cfg)?;
            fs::create_dir_all(&out)?;
            let ckpt_path = out.join("checkpoint.gssn");
            outcome.checkpoint.save(&ckpt_path)?;
            fs::write(
                out.join("history.json"),
                serde_json::to_string_pretty(&outcome.history)?,
            )?;
            fs::write(out.join("schema.json"), serde_json::to_string_pretty(&schema)?)?;
            match outcome.best_oauc {
                Some(v) => eprintln!(
                    "best validation O-AUC {v:.4} at epoch {}; checkpoint: {}",
                    outcome.best_epoch,
                    ckpt_path.display()
                ),
                None => eprintln!(
                    "validation AUC undefined throughout; kept final parameters at {}",
                    ckpt_path.display()
                ),
            }
            let model = outcome.checkpoint.build_model()?;
            print!("{}", evaluate_model(&model, &valid_set)?.render_table());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            json,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_for_checkpoint(&ckpt, &data)?;
            let model = ckpt.build_model()?;
            let report = evaluate_model(&model, &dataset)?;
            if let Some(path) = json {
                fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            print!("{}", report.render_table());
            Ok(())
        }
        Command::Predict {
            checkpoint,
            data,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_for_checkpoint(&ckpt, &data)?;
            let model = ckpt.build_model()?;
            let rows = predict_model(&model, &dataset)?;
            let mut text = String::from("sample_id");
            for name in &ckpt.schema.label_names {
                text.push_str(&format!(",{name}"));
            }
            text.push('\n');
            for (id, scores) in rows {
                text.push_str(&id);
                for s in scores {
                    text.push_str(&format!(",{s}"));
                }
                text.push('\n');
            }
            fs::write(&out, text)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::GenSynthetic { spec, out } => {
            let spec: SynthSpec = serde_json::from_str(
                &fs::read_to_string(&spec)
                    .with_context(|| format!("reading {}", spec.display()))?,
            )
            .context("parsing the generator spec")?;
            if spec.sensors == 0 || spec.steps == 0 || spec.labels == 0 || spec.samples == 0 {
                bail!("sensors, steps, labels and samples must all be positive");
            }
            let paths = gen_synthetic(&spec, &out)?;
            eprintln!(
                "wrote {}, {} and {}",
                paths.train.display(),
                paths.valid.display(),
                paths.schema.display()
            );
            Ok(())
        }
        Command::ExportLabelGraph { checkpoint, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            fs::write(&out, ckpt.corr.to_json())?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}

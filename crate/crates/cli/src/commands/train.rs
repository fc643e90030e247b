use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use medmamba_core::checkpoint::save_model;
use medmamba_core::model::MedMamba;
use medmamba_core::train::{fit, TrainConfig};
use medmamba_pipeline::manifest::{read_manifest, Split};
use serde::Serialize;

use crate::config::{emit_resolved_config, TrainRunConfig};
use crate::dataset::load_split;
use crate::errors::{CliError, Result};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Output directory for the checkpoint, epoch log, and resolved config.
    #[arg(long)]
    pub out: PathBuf,

    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Patch image directory; defaults to `patches/` beside the manifest.
    #[arg(long)]
    pub patches: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedTrainConfig<'a> {
    manifest: &'a PathBuf,
    out: &'a PathBuf,
    patches: &'a PathBuf,
    #[serde(flatten)]
    run: &'a TrainRunConfig,
}

pub fn run(args: TrainArgs) -> Result<()> {
    if !args.manifest.is_file() {
        return Err(CliError::input(format!(
            "manifest does not exist: {}",
            args.manifest.display()
        )));
    }
    let mut run_config = TrainRunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        run_config.seed = seed;
    }
    run_config
        .model
        .validate()
        .map_err(|e| CliError::input(e.to_string()))?;

    let patches_dir = args
        .patches
        .clone()
        .unwrap_or_else(|| args.manifest.parent().unwrap_or_else(|| std::path::Path::new(".")).join("patches"));
    if !patches_dir.is_dir() {
        return Err(CliError::input(format!(
            "patches directory does not exist: {}",
            patches_dir.display()
        )));
    }

    let records = read_manifest(&args.manifest)?;
    let input = run_config.model.input;
    let train_set = load_split(&records, Split::Train, &patches_dir, input)?;
    let val_set = load_split(&records, Split::Val, &patches_dir, input)?;
    if train_set.is_empty() {
        return Err(CliError::input(
            "manifest has no train split; run the split command first".to_string(),
        ));
    }
    if val_set.is_empty() {
        return Err(CliError::input(
            "manifest has no val split; run the split command first".to_string(),
        ));
    }

    std::fs::create_dir_all(&args.out)?;
    emit_resolved_config(
        &args.out.join("train_config.json"),
        &ResolvedTrainConfig {
            manifest: &args.manifest,
            out: &args.out,
            patches: &patches_dir,
            run: &run_config,
        },
    )?;

    let mut model = MedMamba::init(run_config.model.clone(), run_config.seed)
        .map_err(|e| CliError::input(e.to_string()))?;
    let train_config = TrainConfig {
        epochs: run_config.epochs,
        lr: run_config.lr,
        batch_size: run_config.batch_size,
        seed: run_config.seed,
        stop_at_val_acc: run_config.stop_at_val_acc,
    };

    // The log is written incrementally so an aborted run keeps its rows.
    let log_path = args.out.join("train_log.csv");
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    writeln!(log_file, "epoch,train_loss,train_acc,val_loss,val_acc")?;
    log_file.flush()?;

    let fit_result = fit(&mut model, &train_set, &val_set, &train_config, |row| {
        let line = format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            row.epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc
        );
        println!("epoch {}", line);
        let _ = writeln!(log_file, "{}", line);
        let _ = log_file.flush();
    });
    match fit_result {
        Ok(logs) => {
            save_model(&args.out.join("checkpoint.ckpt"), &model)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            if let Some(last) = logs.last() {
                println!(
                    "finished after {} epoch(s); final val acc {:.4}",
                    logs.len(),
                    last.val_acc
                );
            } else {
                println!("no epochs requested; wrote the initial weights");
            }
            Ok(())
        }
        Err(e) => Err(CliError::runtime(format!(
            "training aborted: {} (partial log kept at {})",
            e,
            log_path.display()
        ))),
    }
}

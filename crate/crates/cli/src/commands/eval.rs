use std::path::PathBuf;

use clap::Args;
use medmamba_core::checkpoint::load_model;
use medmamba_core::train::predict;
use medmamba_core::ClassLabel;
use medmamba_metrics::{join_predictions, read_predictions, score, ConfusionMatrix};
use medmamba_pipeline::manifest::{read_manifest, Split};
use serde::Serialize;

use crate::config::emit_resolved_config;
use crate::dataset::{load_split, split_truths};
use crate::errors::{CliError, Result};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Score this trained model on the test split.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Score an external `patch_id,predicted_label` CSV instead.
    #[arg(long = "pred-csv")]
    pub pred_csv: Option<PathBuf>,

    /// Output directory for metrics JSON and confusion CSVs.
    #[arg(long)]
    pub out: PathBuf,

    /// Patch image directory; defaults to `patches/` beside the manifest.
    #[arg(long)]
    pub patches: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedEvalConfig {
    manifest: PathBuf,
    checkpoint: Option<PathBuf>,
    pred_csv: Option<PathBuf>,
    out: PathBuf,
}

pub fn run(args: EvalArgs) -> Result<()> {
    if !args.manifest.is_file() {
        return Err(CliError::input(format!(
            "manifest does not exist: {}",
            args.manifest.display()
        )));
    }
    match (&args.checkpoint, &args.pred_csv) {
        (Some(_), Some(_)) => {
            return Err(CliError::input(
                "pass either --checkpoint or --pred-csv, not both".to_string(),
            ))
        }
        (None, None) => {
            return Err(CliError::input(
                "one of --checkpoint or --pred-csv is required".to_string(),
            ))
        }
        _ => {}
    }

    let records = read_manifest(&args.manifest)?;
    let truths = split_truths(&records, Split::Test);
    if truths.is_empty() {
        return Err(CliError::input(
            "manifest has no test split; run the split command first".to_string(),
        ));
    }

    let pairs: Vec<(ClassLabel, ClassLabel)> = if let Some(ckpt) = &args.checkpoint {
        if !ckpt.is_file() {
            return Err(CliError::input(format!(
                "checkpoint does not exist: {}",
                ckpt.display()
            )));
        }
        let model = load_model(ckpt).map_err(|e| CliError::runtime(e.to_string()))?;
        let patches_dir = args
            .patches
            .clone()
            .unwrap_or_else(|| {
                args.manifest
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join("patches")
            });
        let test_set = load_split(&records, Split::Test, &patches_dir, model.config.input)?;
        let preds = predict(&model, &test_set, 32).map_err(|e| CliError::runtime(e.to_string()))?;
        truths
            .iter()
            .zip(preds.iter())
            .map(|((_, truth), &p)| {
                let pred = ClassLabel::from_index(p).unwrap_or(ClassLabel::Benign);
                (*truth, pred)
            })
            .collect()
    } else {
        let pred_path = args.pred_csv.as_ref().unwrap();
        if !pred_path.is_file() {
            return Err(CliError::input(format!(
                "prediction file does not exist: {}",
                pred_path.display()
            )));
        }
        let predictions = read_predictions(pred_path)?;
        join_predictions(&truths, &predictions)?
    };

    let (t, p): (Vec<ClassLabel>, Vec<ClassLabel>) = pairs.into_iter().unzip();
    let cm = ConfusionMatrix::from_labels(&t, &p)?;
    let report = score(&cm)?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("metrics.json"), report.to_json()?)?;
    cm.write_counts_csv(&args.out.join("confusion_counts.csv"))?;
    cm.write_normalized_csv(&args.out.join("confusion_normalized.csv"))?;
    emit_resolved_config(
        &args.out.join("eval_config.json"),
        &ResolvedEvalConfig {
            manifest: args.manifest.clone(),
            checkpoint: args.checkpoint.clone(),
            pred_csv: args.pred_csv.clone(),
            out: args.out.clone(),
        },
    )?;

    println!(
        "scored {} test patches: weighted precision {:.4}, recall {:.4}, f1 {:.4}, accuracy {:.4}; overall accuracy {:.4}",
        cm.total(),
        report.weighted.precision,
        report.weighted.recall,
        report.weighted.f1,
        report.weighted.accuracy,
        report.overall_accuracy
    );
    Ok(())
}
